from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import fields

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commitgap import faultproc, formats
from commitgap.formats import TableFormat
from commitgap.harness import matrix, report
from commitgap.harness.datasets import COLUMNS, SCALES, generate_dataset, get_spec
from commitgap.harness.matrix import ExperimentSpec, MatrixConfig, RunRecord, classify, run_matrix, run_slice
from commitgap.store import ObjectStore

LA, SP = TableFormat.LOG_APPEND, TableFormat.SNAPSHOT_POINTER


@pytest.mark.parametrize(
    "rc,sw,expected",
    [(0, False, "success"), (137, False, "silent_data_loss"), (-9, True, "rollback_success"),
     (1, True, "visible_error"), (-9, False, "silent_data_loss"), (0, True, "success"), (2, False, "visible_error")],
)
def test_classify(rc, sw, expected):
    assert classify(rc, sw) == expected


def test_dataset_shapes():
    small = generate_dataset("small", seed=1)
    assert len(small) == 22_248
    assert tuple(small.columns) == COLUMNS and len(COLUMNS) == 14
    assert len(generate_dataset("large", seed=1)) == 500_000
    assert get_spec("medium").rows == 100_000


def test_dataset_csv_deterministic_and_semicolon():
    a = generate_dataset("22k", seed=5).to_csv()
    assert a == generate_dataset("22k", seed=5).to_csv()
    assert a != generate_dataset("22k", seed=6).to_csv()
    rows = list(csv.reader(io.StringIO(a.decode()), delimiter=";"))
    assert rows[0] == list(COLUMNS)
    assert len(rows) == 22_248 + 1 and all(len(r) == 14 for r in rows)


def test_nominal_sizes():
    assert [SCALES[s].csv_mb for s in ("22k", "100k", "500k")] == [3.8, 9.4, 47.9]
    assert [len(SCALES[s].partitions()) for s in SCALES] == [1, 1, 3]
    assert sum(p[0] for p in SCALES["500k"].partitions()) == 500_000


def test_default_design_totals():
    design = matrix.default_design()
    assert sum(s.runs for s in design) == 860
    by = Counter()
    for s in design:
        by[(s.part, s.scenario)] += s.runs
    assert by == {
        ("A", "baseline"): 100, ("A", "kill_data"): 150, ("A", "kill_commit"): 150,
        ("A", "sw_kill_data"): 50, ("A", "sw_kill_commit"): 50,
        ("B", "baseline"): 180, ("B", "kill_data"): 180,
    }
    assert {s.scale for s in design if s.part == "B"} == {"22k", "100k", "500k"}


def test_select_and_validation():
    design = matrix.default_design()
    chosen = matrix.select(design, part="A", fmt="log_append", scenario="kill_data")
    assert [(s.runs, s.format) for s in chosen] == [(75, LA)]
    assert all(s.runs == 2 for s in matrix.select(design, runs=2))
    with pytest.raises(ValueError):
        ExperimentSpec("C", LA, "22k", "baseline", 1)
    with pytest.raises(ValueError):
        ExperimentSpec("A", LA, "22k", "kill_later", 1)


def test_record_fields_exact():
    assert [f.name for f in fields(RunRecord)] == [
        "run_id", "table_format", "dataset", "kill_phase", "use_safe_writer",
        "outcome", "duration_ms", "returncode", "timestamp",
    ]
    with pytest.raises(ValueError):
        RunRecord.from_dict({"run_id": "x"})


def test_slice_records_and_oracle():
    design = [ExperimentSpec("A", SP, "22k", sc, 3) for sc in matrix.SCENARIOS]
    result = run_matrix(design, seed=4)
    assert not result.mismatches
    for r in result.records:
        scenario, idx, suffix = r.run_id.split("-")
        assert idx.startswith("A") and len(suffix) == 8
        assert r.kill_phase == {"baseline": None}.get(scenario, r.kill_phase)
        assert r.use_safe_writer == scenario.startswith("sw_")
        assert r.timestamp.endswith("Z")


def test_oracle_flags_misclassification():
    before = matrix.TableState(0, (), 0, frozenset())
    lost = matrix.TableState(0, (), 0, frozenset({"t/part-0"}))
    assert matrix.reconstruct_outcome(before, lost, 10, None, None) == "silent_data_loss"
    assert matrix.reconstruct_outcome(before, before, 10, None, None) == "visible_error"
    assert matrix.reconstruct_outcome(before, lost, 10, None, "ConflictError: x") == "visible_error"
    wrote = matrix.TableState(1, ("t/part-0",), 10, frozenset())
    assert matrix.reconstruct_outcome(before, wrote, 10, None, None) == "success"


def test_jsonl_single_write_per_record(tmp_path, monkeypatch):
    import os

    calls = []
    real = os.write
    monkeypatch.setattr(os, "write", lambda fd, b: calls.append(b) or real(fd, b))
    path = tmp_path / "r.jsonl"
    run_matrix([ExperimentSpec("A", LA, "22k", "baseline", 4)], seed=1, out_path=path)
    assert len(calls) == 4 and all(c.endswith(b"\n") and c.count(b"\n") == 1 for c in calls)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_truncated_jsonl_parses_to_prefix(tmp_path_factory, data):
    records = [RunRecord(f"baseline-A{i:03d}-0000000{i}", "log_append", "22k", None, False, "success", 7644, 0, "t")
               for i in range(5)]
    blob = b"".join(r.to_line() for r in records)
    cut = data.draw(st.integers(0, len(blob)))
    path = tmp_path_factory.mktemp("jsonl") / "cut.jsonl"
    path.write_bytes(blob[:cut])
    parsed = matrix.read_records(path)
    assert parsed == records[: len(parsed)]
    assert len(parsed) >= blob[:cut].count(b"\n")


def test_parallel_matches_sequential(tmp_path):
    design = matrix.select(matrix.default_design(), part="B", runs=2)
    run_matrix(design, 9, tmp_path / "seq.jsonl")
    run_matrix(design, 9, tmp_path / "par.jsonl", parallel=2)
    assert (tmp_path / "seq.jsonl").read_bytes() == (tmp_path / "par.jsonl").read_bytes()


def test_monitor_view_distinguishes_success():
    store = ObjectStore()
    formats.create_table(store, "t", LA)
    assert matrix.monitor_view(store, "t", 0) == ("ok", 0)
    plan = formats.make_plan(store, "t", "r", SCALES["22k"].partitions(), faultproc.default_timing_profile(LA, "22k"))
    res = faultproc.run_job(store, plan)
    assert matrix.monitor_view(store, "t", res.returncode) == ("ok", 22_248)
    assert matrix.monitor_view(store, "t", 137)[0] == matrix.monitor_view(store, "t", -9)[0]


@pytest.mark.parametrize("fmt", [LA, SP])
def test_retry_amplification(fmt):
    store = ObjectStore()
    formats.create_table(store, "t", fmt)
    durations = faultproc.default_timing_profile(fmt, "500k")
    seen = []
    for attempt in range(4):
        plan = formats.make_plan(store, "t", "same-job", SCALES["500k"].partitions(), durations, attempt=attempt)
        faultproc.run_job(store, plan, kill=faultproc.KillSchedule.after_phase("data"))
        now = set(formats.find_orphans(store, "t"))
        new = now - set().union(*seen) if seen else now
        assert len(new) == 3
        seen.append(new)
    assert len(set().union(*seen)) == 12


def test_report_render_and_exports():
    result = run_matrix(matrix.select(matrix.default_design(), runs=2), seed=2)
    text = report.render(result.records, delta_ms=10_000)
    for title in ("Part A baseline", "kill after data write", "kill at commit", "SafeWriter outcomes",
                  "write duration vs scale", "35.2%", "144 MB"):
        assert title in text
    summary = json.loads(report.summary_json(result.records))
    assert sum(row["n"] for row in summary) == len(result.records)
    lines = report.figure_csv(result.records).splitlines()
    assert lines[0] == "table_format,scenario,dataset,outcome,count,pct"
    assert len(lines) == 1 + 2 * 5 * 4


def test_run_errors_recorded_not_raised(monkeypatch):
    def broken(*a, **k):
        raise OSError("disk gone")

    monkeypatch.setattr(faultproc, "run_job", broken)
    outcomes = run_slice(ExperimentSpec("A", LA, "22k", "baseline", 2), 0, MatrixConfig())
    assert [o.record.outcome for o in outcomes] == ["visible_error"] * 2
    assert all(o.oracle == "visible_error" for o in outcomes)
