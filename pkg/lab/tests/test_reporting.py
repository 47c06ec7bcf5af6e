"""
CylinderLab Reporting Tests
============================
CSV columns, deterministic text and JSON, and field dumps.
"""

import json

import pytest
import numpy as np
import pandas as pd
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.schemas import ConstraintTag, CrossSection, CylinderSpec, SweepRecord, TraceRow
from src import domain, reporting


def _records():
    return [
        SweepRecord(ell=3.0, h=0.25, dist_half=1e-3, energy_cyl=-0.1, iterations=12, wall_seconds=0.5),
        SweepRecord(ell=4.0, h=0.25, dist_half=1e-4, energy_cyl=-0.14, iterations=15, wall_seconds=0.7),
    ]


def test_canonical_json_sorted_and_finite():
    text = reporting.canonical_json({"b": np.float64(1.5), "a": [np.int64(2), float("nan")], "c": np.bool_(True)})
    assert text == '{"a":[2,"nan"],"b":1.5,"c":true}'


def test_canonical_json_enums_by_value():
    assert reporting.canonical_json({"tag": ConstraintTag.TIED_ENDS}) == '{"tag":"tied-ends"}'


def test_keyed_text_sorted_and_dotted():
    text = reporting.keyed_text({"b": 0.1, "a": {"c": 2, "d": [1.0, 2.5]}})
    assert text == "a.c = 2\na.d = [1.0, 2.5]\nb = 0.1\n"


def test_sweep_writer_streams_rows(tmp_path):
    path = tmp_path / "sweep.csv"
    writer = reporting.SweepCsvWriter(path)
    assert path.read_text().strip() == ",".join(reporting.SWEEP_COLUMNS)
    for record in _records():
        writer(record)
    frame = reporting.read_sweep_csv(path)
    assert list(frame.columns) == reporting.SWEEP_COLUMNS
    assert frame["ell"].tolist() == [3.0, 4.0]
    assert frame["wall_seconds"].isna().all()


def _write(records, path, include_timing=False):
    writer = reporting.SweepCsvWriter(path, include_timing=include_timing)
    for record in records:
        writer(record)
    return path


def test_sweep_csv_with_timing(tmp_path):
    frame = pd.read_csv(_write(_records(), tmp_path / "sweep.csv", include_timing=True))
    assert frame["wall_seconds"].tolist() == pytest.approx([0.5, 0.7], rel=1e-15)
    assert frame["dist_half"].tolist() == pytest.approx([1e-3, 1e-4], rel=1e-15)


def test_sweep_csv_is_deterministic(tmp_path):
    a = _write(_records(), tmp_path / "a.csv").read_bytes()
    b = _write(_records(), tmp_path / "b.csv").read_bytes()
    assert a == b


def test_trace_csv(tmp_path):
    trace = [TraceRow(1, -0.1, 0.5, 1e-2), TraceRow(2, -0.2, 0.25, 1e-3, mu=0.01)]
    frame = pd.read_csv(reporting.write_trace_csv(trace, tmp_path / "trace.csv"))
    assert list(frame.columns) == reporting.TRACE_COLUMNS
    assert frame["mu"].tolist() == [0.0, 0.01]


def test_field_dump_round_trip(tmp_path):
    mesh = domain.build_cylinder_mesh(CylinderSpec(ell=2.0, omega2=CrossSection.interval()), 0.5)
    values = np.zeros(mesh.n_nodes)
    values[mesh.boundary_class == 0] = np.linspace(0.1, 0.7, 7)
    u = domain.Field(mesh, values, ConstraintTag.DIRICHLET_ALL)
    path = reporting.dump_field(u, tmp_path / "u_ell.txt")

    header = path.read_text().splitlines()[0]
    assert header == "# index x1 x2 class value constraint=dirichlet-all"
    table = reporting.load_field_table(path)
    assert list(table.columns) == ["index", "x1", "x2", "class", "value"]
    assert len(table) == mesh.n_nodes
    assert set(table["class"]) == {"interior", "lateral", "end"}

    loaded = reporting.load_field(path, domain.zero_field(mesh, ConstraintTag.DIRICHLET_ALL))
    np.testing.assert_allclose(loaded.values, u.values, rtol=1e-15, atol=0.0)


def test_load_field_rejects_wrong_mesh(tmp_path):
    mesh = domain.build_cross_section_mesh(CrossSection.interval(), 0.25)
    path = reporting.dump_field(domain.zero_field(mesh), tmp_path / "u.txt")
    other = domain.build_cross_section_mesh(CrossSection.interval(), 0.5)
    with pytest.raises(ValueError, match="nodes"):
        reporting.load_field(path, domain.zero_field(other))


def test_write_json(tmp_path):
    path = reporting.write_json(tmp_path / "summary.json", {"z": 1, "a": {"inf": float("inf")}})
    assert json.loads(path.read_text()) == {"a": {"inf": "inf"}, "z": 1}
