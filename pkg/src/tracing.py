# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""OpenTelemetry tracing for solver runs.

Tracing is off until `setup` is called with an endpoint or an exporter. While it is off,
`span` yields None and costs nothing, so library code can open spans unconditionally:

```
with span("backward_induction", fleet_size=15) as s:
    if s:
        s.add_event("epoch done")
```
"""

import logging
from contextlib import contextmanager
from typing import Any, Generator, Optional

from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import Span, TracerProvider
from opentelemetry.sdk.trace.export import (
    BatchSpanProcessor,
    SimpleSpanProcessor,
    SpanExporter,
)
from opentelemetry.trace import Tracer

logger = logging.getLogger(__name__)

SERVICE_NAME = "swapdp"
# give individual export requests 1 second to succeed
_OTLP_SPAN_EXPORTER_TIMEOUT = 1

_provider: Optional[TracerProvider] = None
_tracer: Optional[Tracer] = None


class TracingError(RuntimeError):
    """Base class for errors raised by this module."""


def setup(
    endpoint: Optional[str] = None, exporter: Optional[SpanExporter] = None
) -> Optional[TracerProvider]:
    """Install a tracer provider exporting to `endpoint` (OTLP over HTTP) or to `exporter`."""
    global _provider, _tracer
    if _provider is not None:
        shutdown()
    if endpoint is None and exporter is None:
        logger.debug("tracing disabled: no endpoint configured")
        return None

    resource = Resource.create(attributes={"service.name": SERVICE_NAME})
    provider = TracerProvider(resource=resource)
    if endpoint is not None:
        if not endpoint.startswith(("http://", "https://")):
            raise TracingError(f"tracing endpoint must be an http(s) URL, got {endpoint!r}")
        otlp_exporter = OTLPSpanExporter(
            endpoint=f"{endpoint.rstrip('/')}/v1/traces",
            timeout=_OTLP_SPAN_EXPORTER_TIMEOUT,
        )
        provider.add_span_processor(BatchSpanProcessor(otlp_exporter))
        logger.info(f"Exporting traces to {endpoint}")
    if exporter is not None:
        provider.add_span_processor(SimpleSpanProcessor(exporter))

    _provider = provider
    _tracer = provider.get_tracer(SERVICE_NAME)
    return provider


def is_enabled() -> bool:
    """Whether spans are being recorded."""
    return _tracer is not None


@contextmanager
def span(name: str, **attributes: Any) -> Generator[Optional[Span], Any, Any]:
    """Context to create a span if tracing is set up, otherwise do nothing."""
    if _tracer is not None:
        with _tracer.start_as_current_span(name, attributes=attributes) as current:
            yield current  # type: ignore
    else:
        yield None


def shutdown():
    """Flush pending spans and turn tracing off."""
    global _provider, _tracer
    if _provider is None:
        return
    # don't block for too long
    if not _provider.force_flush(timeout_millis=1000):
        logger.error("flushing FAILED: unable to push traces to backend.")
    _provider.shutdown()
    _provider = None
    _tracer = None
