# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Time-varying Poisson demand for the two demand classes.

Each (class, epoch) pair gets an `EpochDemandDistribution`: a Poisson law cut at a truncation
bound ``d_max`` whose last support point carries the residual tail mass, so the truncated law is
a proper distribution. The exact solver, the RL solver and the simulator all read demand from
the same objects, which keeps their supports identical.

```
schedule = DemandSchedule.from_daily_totals([72, 112], default_arrival_shape(16, 90))
dist = schedule.distribution(1, t=5)
dist.pmf(0), dist.tail(3)
sample(schedule, 1, 5, np.random.default_rng(0))
```
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_TRUNCATION_EPS = 1e-9
NUM_CLASSES = 2


def truncation_bound(lam: float, eps: float = DEFAULT_TRUNCATION_EPS) -> int:
    """Return the smallest d_max with P(D > d_max) < eps for D ~ Poisson(lam)."""
    if not 0 < eps < 1:
        raise InvalidInputError(f"truncation eps must be in (0, 1), got {eps}")
    if lam < 0 or not math.isfinite(lam):
        raise InvalidInputError(f"Poisson rate must be finite and nonnegative, got {lam}")
    if lam == 0:
        return 0
    upper = int(math.ceil(lam + 40.0 * math.sqrt(lam) + 40.0))
    survival = stats.poisson.sf(np.arange(upper + 1), lam)
    # tiny eps can need a wider window; sf underflows to 0, so this terminates
    while not (survival < eps).any():
        upper *= 2
        survival = stats.poisson.sf(np.arange(upper + 1), lam)
    return int(np.argmax(survival < eps))


@dataclass(frozen=True)
class EpochDemandDistribution:
    """Truncated Poisson demand of one class at one epoch.

    `pmf_cache[x]` is P(D = x) for x < d_max and P(D >= d_max) at x = d_max. `tail_cache[x]` is
    P(D >= x) for x = 0..d_max + 1, with tail_cache[d_max + 1] = 0.
    """

    lam: float
    d_max: int
    pmf_cache: np.ndarray
    tail_cache: np.ndarray
    cdf_cache: np.ndarray

    @classmethod
    def poisson(cls, lam: float, eps: float = DEFAULT_TRUNCATION_EPS) -> "EpochDemandDistribution":
        """Build the truncated law of Poisson(lam)."""
        d_max = truncation_bound(lam, eps)
        support = np.arange(d_max + 1)
        # log-space keeps large-lambda terms finite before exponentiating
        pmf = np.exp(stats.poisson.logpmf(support, lam))
        pmf[d_max] = stats.poisson.sf(d_max - 1, lam) if d_max > 0 else 1.0
        tail = np.zeros(d_max + 2)
        tail[: d_max + 1] = np.cumsum(pmf[::-1])[::-1]
        tail[0] = 1.0
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        for array in (pmf, tail, cdf):
            array.setflags(write=False)
        return cls(lam=float(lam), d_max=d_max, pmf_cache=pmf, tail_cache=tail, cdf_cache=cdf)

    def _check(self, x: int):
        if not 0 <= x <= self.d_max:
            raise InvalidInputError(f"demand value {x} outside the support 0..{self.d_max}")

    def pmf(self, x: int) -> float:
        """P(D = x) on the truncated support."""
        self._check(x)
        return float(self.pmf_cache[x])

    def tail(self, x: int) -> float:
        """P(D >= x) on the truncated support."""
        self._check(x)
        return float(self.tail_cache[x])

    def pmf_or_zero(self, x: int) -> float:
        """P(D = x), zero outside the support."""
        return float(self.pmf_cache[x]) if 0 <= x <= self.d_max else 0.0

    def tail_or_zero(self, x: int) -> float:
        """P(D >= x), one below zero and zero past the support."""
        if x <= 0:
            return 1.0
        return float(self.tail_cache[x]) if x <= self.d_max else 0.0

    def capped_pmf(self, cap: int) -> np.ndarray:
        """Law of min(D, cap) as a vector of length cap + 1."""
        out = np.zeros(cap + 1)
        head = min(cap, self.d_max + 1)
        out[:head] = self.pmf_cache[:head]
        out[cap] = self.tail_or_zero(cap)
        return out

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draws from the truncated law."""
        u = rng.random(size)
        return np.searchsorted(self.cdf_cache, u, side="right")

    def quantile(self, u):
        """Map uniforms in [0, 1) to demand values."""
        return np.searchsorted(self.cdf_cache, u, side="right")


def pmf(dist: EpochDemandDistribution, x: int) -> float:
    """P(D = x) for the truncated law."""
    return dist.pmf(x)


def tail(dist: EpochDemandDistribution, x: int) -> float:
    """P(D >= x) for the truncated law."""
    return dist.tail(x)


def default_arrival_shape(n_epochs: int = 16, epoch_minutes: int = 90) -> Tuple[float, ...]:
    """Discretized daily arrival curve: low at 6:00, rising to a noon peak, then falling.

    The curve is piecewise linear over a circular day, evaluated at each epoch's start time and
    normalized to sum to one. It approximates the hospital arrival pattern; it is not a fit.
    """
    low, high = 0.2, 1.0
    weights = []
    for k in range(n_epochs):
        hour = (k * epoch_minutes / 60.0) % 24.0
        if hour < 6.0:
            hour += 24.0
        if hour <= 12.0:
            rise = (hour - 6.0) / 6.0
        else:
            rise = (30.0 - hour) / 18.0
        weights.append(low + (high - low) * rise)
    total = math.fsum(weights)
    return tuple(w / total for w in weights)


@dataclass(frozen=True)
class DemandSchedule:
    """Per-class, per-epoch demand laws for epochs t = 1..N-1."""

    distributions: Tuple[Tuple[EpochDemandDistribution, ...], ...]
    arrival_shape: Tuple[float, ...]
    eps: float = DEFAULT_TRUNCATION_EPS

    @classmethod
    def from_rates(
        cls,
        rates: Sequence[Sequence[float]],
        eps: float = DEFAULT_TRUNCATION_EPS,
        arrival_shape: Optional[Sequence[float]] = None,
    ) -> "DemandSchedule":
        """Build a schedule from explicit rates, `rates[i - 1][t - 1]` for class i, epoch t."""
        if len(rates) != NUM_CLASSES:
            raise InvalidInputError(f"expected rates for {NUM_CLASSES} classes, got {len(rates)}")
        n_epochs = len(rates[0])
        if n_epochs == 0 or any(len(r) != n_epochs for r in rates):
            raise InvalidInputError("every class needs one rate per decision epoch")
        distributions = tuple(
            tuple(EpochDemandDistribution.poisson(float(lam), eps) for lam in class_rates)
            for class_rates in rates
        )
        if arrival_shape is None:
            arrival_shape = default_arrival_shape(n_epochs)
        return cls(distributions=distributions, arrival_shape=tuple(arrival_shape), eps=eps)

    @classmethod
    def from_daily_totals(
        cls,
        daily_flights: Sequence[float],
        arrival_shape: Sequence[float],
        eps: float = DEFAULT_TRUNCATION_EPS,
    ) -> "DemandSchedule":
        """Spread each class's daily flights over the epochs with the arrival shape."""
        shape = np.asarray(arrival_shape, dtype=float)
        rates = [float(total) * shape for total in daily_flights]
        logger.debug(f"Building demand schedule for daily totals {list(daily_flights)}")
        return cls.from_rates(rates, eps=eps, arrival_shape=tuple(shape))

    @property
    def n_epochs(self) -> int:
        """Number of decision epochs covered."""
        return len(self.distributions[0])

    def distribution(self, demand_class: int, t: int) -> EpochDemandDistribution:
        """Demand law of a class (1 or 2) at epoch t (1-based)."""
        if demand_class not in (1, 2):
            raise InvalidInputError(f"demand class must be 1 or 2, got {demand_class}")
        if not 1 <= t <= self.n_epochs:
            raise InvalidInputError(f"epoch {t} outside 1..{self.n_epochs}")
        return self.distributions[demand_class - 1][t - 1]

    def rates(self) -> np.ndarray:
        """Array of shape (2, N - 1) with the Poisson rates."""
        return np.array([[d.lam for d in per_class] for per_class in self.distributions])

    def aggregated(self) -> Tuple[EpochDemandDistribution, ...]:
        """Single-stream laws with rate lambda1_t + lambda2_t, for the unclassified model."""
        totals = self.rates().sum(axis=0)
        return tuple(EpochDemandDistribution.poisson(float(lam), self.eps) for lam in totals)


def sample(
    schedule: DemandSchedule, demand_class: int, t: int, rng: np.random.Generator
) -> int:
    """Draw one demand value of a class at epoch t."""
    return int(schedule.distribution(demand_class, t).sample(rng))
