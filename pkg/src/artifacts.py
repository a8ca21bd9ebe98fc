# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Reading and writing solver artifacts.

CSV files are written with pandas using `,` separators, `\\n` line endings and `%.12g` floats, so
repeated runs produce byte-identical files.

Tables are also stored in a compact binary container:

```
b"SWAPDPTB" | version: uint16 LE | header length: uint32 LE | header JSON | array bytes
```

The header names the artifact kind (`policy`, `approx` or `values`), the scenario hash, the solver
(plus, for learned tables, the greedy `mode`, `tau2` and `seed` the policy was read with) and the
name, dtype and shape of every array; the arrays follow in that order, C-contiguous and
little-endian.
"""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd

from errors import IncompatibleArtifactError
from exact import PolicyTable, ValueTable
from mdp import State
from models import METRICS_COLUMNS, MetricsSummary, RunManifest
from rl import ApproxValueTable
from simulation import SamplePathResult

logger = logging.getLogger(__name__)

MAGIC = b"SWAPDPTB"
VERSION = 1
FLOAT_FORMAT = "%.12g"

VALUE_COLUMNS = ["t", "s1", "s2", "value"]
APPROX_COLUMNS = ["t", "s1", "s2", "value", "visits"]
POLICY_COLUMNS = ["t", "s1", "s2", "a01", "a02", "a12"]
TRACE_COLUMNS = ["iteration", "value"]
PATH_COLUMNS = [
    "path",
    "t",
    "s1",
    "s2",
    "a01",
    "a02",
    "a12",
    "d1",
    "d2",
    "met_c1_l1",
    "met_c1_l2",
    "met_c2",
    "reward",
]

PathLike = Union[str, Path]


def write_csv(frame: pd.DataFrame, path: PathLike):
    """Write a frame the one way every artifact is written."""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")


def _grid(states: Sequence[State], n_epochs: int) -> pd.DataFrame:
    s = np.array(states, dtype=np.int64).reshape(-1, 2)
    return pd.DataFrame(
        {
            "t": np.repeat(np.arange(1, n_epochs + 1), len(s)),
            "s1": np.tile(s[:, 0], n_epochs),
            "s2": np.tile(s[:, 1], n_epochs),
        }
    )


def value_frame(table: ValueTable) -> pd.DataFrame:
    """One row per (t, s) with the value."""
    frame = _grid(table.states, table.horizon)
    frame["value"] = table.values.reshape(-1)
    return frame


def approx_frame(table: ApproxValueTable) -> pd.DataFrame:
    """Learned values with visit counts."""
    frame = _grid(table.states, table.horizon)
    frame["value"] = table.values.reshape(-1)
    frame["visits"] = table.visits.reshape(-1)
    return frame


def policy_frame(table: PolicyTable) -> pd.DataFrame:
    """One row per decision epoch and state with the prescribed action."""
    n_epochs = table.actions.shape[0]
    frame = _grid(table.states, n_epochs)
    actions = table.actions.reshape(-1, 3)
    for k, column in enumerate(("a01", "a02", "a12")):
        frame[column] = actions[:, k]
    return frame


def trace_frame(table: ApproxValueTable) -> pd.DataFrame:
    """Convergence trace of the initial-state value."""
    return pd.DataFrame(table.trace, columns=TRACE_COLUMNS)


def metrics_frame(rows: Sequence[MetricsSummary]) -> pd.DataFrame:
    """Metrics rows in the published column order."""
    return pd.DataFrame([row.csv_row() for row in rows], columns=METRICS_COLUMNS)


def paths_frame(paths: Sequence[SamplePathResult]) -> pd.DataFrame:
    """Per-epoch dump of simulated paths."""
    records = [
        (
            p.path_index,
            step.t,
            step.state.s1,
            step.state.s2,
            step.action.a01,
            step.action.a02,
            step.action.a12,
            step.demand.d1,
            step.demand.d2,
            step.outcome.met_c1_lvl1,
            step.outcome.met_c1_lvl2,
            step.outcome.met_c2_lvl2,
            step.reward,
        )
        for p in paths
        for step in p.steps
    ]
    return pd.DataFrame(records, columns=PATH_COLUMNS)


def read_value_csv(path: PathLike) -> pd.DataFrame:
    """Load a value table CSV, checking its header."""
    frame = pd.read_csv(path)
    if list(frame.columns) != VALUE_COLUMNS:
        raise IncompatibleArtifactError(f"{path} is not a value table: columns {list(frame.columns)}")
    return frame


class Artifact(NamedTuple):
    """Contents of a binary table container."""

    kind: str
    scenario_hash: str
    solver: str
    values: Optional[ValueTable] = None
    policy: Optional[PolicyTable] = None
    approx: Optional[ApproxValueTable] = None
    greedy: Optional[Dict[str, Any]] = None


def _pack(path: PathLike, meta: Dict, arrays: Dict[str, np.ndarray]):
    specs = []
    payload = []
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        dtype = array.dtype.newbyteorder("<")
        specs.append({"name": name, "dtype": dtype.str, "shape": list(array.shape)})
        payload.append(array.astype(dtype, copy=False).tobytes())
    header = json.dumps({**meta, "arrays": specs}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(header)))
        f.write(header)
        for chunk in payload:
            f.write(chunk)


def _unpack(path: PathLike):
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise IncompatibleArtifactError(f"{path} is not a swapdp table container")
    offset = len(MAGIC)
    version, header_length = struct.unpack_from("<HI", data, offset)
    if version != VERSION:
        raise IncompatibleArtifactError(
            f"{path} has container version {version}, this build reads version {VERSION}"
        )
    offset += struct.calcsize("<HI")
    header = json.loads(data[offset : offset + header_length].decode("utf-8"))
    offset += header_length
    arrays = {}
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arrays[spec["name"]] = (
            np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(spec["shape"]).copy()
        )
        offset += count * dtype.itemsize
    return header, arrays


def save_tables(
    path: PathLike,
    values: ValueTable,
    policy: Optional[PolicyTable] = None,
):
    """Store exact values, and the policy when there is one."""
    arrays = {"states": np.array(values.states, dtype=np.int64), "values": values.values}
    if policy is not None:
        arrays["actions"] = policy.actions
    meta = {
        "kind": "policy" if policy is not None else "values",
        "scenario_hash": values.scenario_hash,
        "solver": values.solver,
    }
    _pack(path, meta, arrays)


def save_approx(path: PathLike, table: ApproxValueTable, greedy: Optional[Dict[str, Any]] = None):
    """Store a learned value table with everything needed to resume or act greedily.

    `greedy` holds the `mode`, `tau2` and `seed` of the greedy policy written next to the table,
    so a later evaluation acts exactly as that policy did.
    """
    meta = {
        "kind": "approx",
        "scenario_hash": table.scenario_hash,
        "solver": "rl",
        "start_state": list(table.start_state),
        "decisions": table.decisions,
        "explore_decisions": table.explore_decisions,
    }
    if greedy is not None:
        meta["greedy"] = dict(greedy)
    arrays = {
        "states": np.array(table.states, dtype=np.int64),
        "values": table.values,
        "visits": table.visits,
        "beta": table.beta,
        "delta": table.delta,
        "lam": table.lam,
        "nu": table.nu,
        "trace": np.array(table.trace, dtype=float).reshape(-1, 2),
    }
    _pack(path, meta, arrays)


def load_tables(path: PathLike) -> Artifact:
    """Read a container written by `save_tables` or `save_approx`."""
    meta, arrays = _unpack(path)
    states = tuple(State(int(a), int(b)) for a, b in arrays["states"])
    kind = meta["kind"]
    scenario_hash = meta["scenario_hash"]
    solver = meta["solver"]
    if kind == "approx":
        trace = [(int(n), float(v)) for n, v in arrays["trace"]]
        approx = ApproxValueTable(
            values=arrays["values"],
            visits=arrays["visits"],
            states=states,
            start_state=State(*meta["start_state"]),
            scenario_hash=scenario_hash,
            beta=arrays["beta"],
            delta=arrays["delta"],
            lam=arrays["lam"],
            nu=arrays["nu"],
            trace=trace,
            decisions=meta["decisions"],
            explore_decisions=meta["explore_decisions"],
        )
        return Artifact(
            kind,
            scenario_hash,
            solver,
            values=approx.as_value_table(),
            approx=approx,
            greedy=meta.get("greedy"),
        )
    if kind not in ("policy", "values"):
        raise IncompatibleArtifactError(f"{path} holds an unknown artifact kind {kind!r}")
    values = ValueTable(arrays["values"], states, scenario_hash, solver)
    policy = (
        PolicyTable(arrays["actions"], states, scenario_hash, solver)
        if "actions" in arrays
        else None
    )
    return Artifact(kind, scenario_hash, solver, values=values, policy=policy)


def check_compatible(artifact_hash: str, scenario_hash: str, path: PathLike = "artifact"):
    """Refuse to use an artifact with a scenario it was not built from."""
    if artifact_hash != scenario_hash:
        raise IncompatibleArtifactError(
            f"{path} was built from scenario {artifact_hash[:12]}, "
            f"not from the given scenario {scenario_hash[:12]}; re-run `solve` on this scenario"
        )


def file_sha256(path: PathLike) -> str:
    """Hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(manifest: RunManifest, path: PathLike):
    """Write a run manifest as JSON."""
    Path(path).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote manifest {path}")


def record_artifacts(manifest: RunManifest, paths: List[Path]):
    """Add the hash of every written file to the manifest."""
    for path in paths:
        manifest.artifacts[str(path)] = file_sha256(path)
