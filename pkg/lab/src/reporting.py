"""
CylinderLab Reporting
======================
Writes run artifacts: fixed-column CSV tables (pandas), key-sorted text
reports, canonical JSON summaries and plain-text field dumps.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .domain import Field
from .schemas import BoundaryClass, SweepRecord, TraceRow

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "ell",
    "h",
    "dist_half",
    "energy_cyl",
    "energy_per_length",
    "cross_energy",
    "sandwich_gap",
    "slice_energy_max",
    "collar_grad_max",
    "iterations",
    "wall_seconds",
]
TRACE_COLUMNS = ["iteration", "energy", "step", "grad_norm", "mu"]
ONEDIM_COLUMNS = ["ell", "u_at_0", "m_mid", "max_v", "violations"]

FLOAT_FORMAT = "%.17g"

CLASS_NAMES = {int(c): c.name.lower() for c in BoundaryClass}


def canonical_json(data: Any) -> str:
    return json.dumps(_plain(data), sort_keys=True, separators=(",", ":"))


def _plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else repr(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def _flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(_plain(value))


def keyed_text(data: Mapping[str, Any]) -> str:
    """Deterministic 'key = value' block, keys sorted, nested keys dotted."""
    flat = _flatten(data)
    return "".join(f"{key} = {_format_value(flat[key])}\n" for key in sorted(flat))


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_json(path: Path, data: Any) -> Path:
    return write_text(path, canonical_json(data) + "\n")


def _write_frame(frame: pd.DataFrame, path: Path, append: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(
        path,
        index=False,
        float_format=FLOAT_FORMAT,
        mode="a" if append else "w",
        header=not append,
        lineterminator="\n",
    )
    return path


class SweepCsvWriter:
    """Writes the sweep CSV header up front and appends one row per record."""

    def __init__(self, path: Path, include_timing: bool = False):
        self.path = Path(path)
        self.include_timing = include_timing
        _write_frame(pd.DataFrame(columns=SWEEP_COLUMNS), self.path)

    def __call__(self, record: SweepRecord) -> None:
        row = record.to_row(self.include_timing)
        _write_frame(pd.DataFrame([row], columns=SWEEP_COLUMNS), self.path, append=True)


def read_sweep_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


def write_trace_csv(trace: Sequence[TraceRow], path: Path) -> Path:
    rows = [[t.iteration, t.energy, t.step, t.grad_norm, t.mu] for t in trace]
    return _write_frame(pd.DataFrame(rows, columns=TRACE_COLUMNS), path)


def write_onedim_csv(rows: Sequence[Mapping[str, Any]], path: Path) -> Path:
    return _write_frame(pd.DataFrame(list(rows), columns=ONEDIM_COLUMNS), path)


def field_columns(dim: int) -> List[str]:
    return ["index", *[f"x{k + 1}" for k in range(dim)], "class", "value"]


def dump_field(field: Field, path: Path) -> Path:
    """One node per line: index x1 x2 [x3] class value, after a '#' header line."""
    mesh = field.mesh
    columns = field_columns(mesh.dim)
    frame = pd.DataFrame(mesh.nodes, columns=columns[1:-2])
    frame.insert(0, "index", np.arange(mesh.n_nodes))
    frame["class"] = [CLASS_NAMES[int(c)] for c in mesh.boundary_class]
    frame["value"] = field.values
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write("# " + " ".join(columns) + f" constraint={field.constraint.value}\n")
        frame.to_csv(handle, sep=" ", index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def load_field_table(path: Path) -> pd.DataFrame:
    """Read a field dump back as a DataFrame with the header's column names."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline()
    if not header.startswith("#"):
        raise ValueError(f"{path}: missing '#' header line")
    names = [token for token in header[1:].split() if "=" not in token]
    return pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=names)


def load_field(path: Path, target: Field) -> Field:
    """Values of a dump placed on target's mesh (node counts must agree)."""
    table = load_field_table(path)
    if len(table) != target.mesh.n_nodes:
        raise ValueError(f"{path}: {len(table)} nodes, mesh has {target.mesh.n_nodes}")
    return target.with_values(table["value"].to_numpy())


def write_metadata(path: Path, metadata: Mapping[str, Any]) -> Optional[Path]:
    logger.debug(f"Writing run metadata to {path}")
    return write_json(path, metadata)
