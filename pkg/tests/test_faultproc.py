from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commitgap import faultproc, formats
from commitgap.faultproc import JobEnv, KillSchedule, Process, run_job, run_job_from_env
from commitgap.formats import TableFormat
from commitgap.formats.common import split_evenly
from commitgap.harness.datasets import SCALES
from commitgap.steps import Hang, Put, WaitUntil, Work
from commitgap.store import ObjectStore

LA, SP = TableFormat.LOG_APPEND, TableFormat.SNAPSHOT_POINTER


def _setup(fmt, scale="22k"):
    store = ObjectStore()
    formats.create_table(store, "t", fmt)
    durations = faultproc.default_timing_profile(fmt, scale)
    plan = formats.make_plan(store, "t", "job", SCALES[scale].partitions(), durations)
    return store, plan, durations


@pytest.mark.parametrize("fmt", [LA, SP])
@pytest.mark.parametrize("scale", ["22k", "100k", "500k"])
def test_uninterrupted_trace_matches_profile(fmt, scale):
    store, plan, durations = _setup(fmt, scale)
    result = run_job(store, plan)
    t_d, total = faultproc.PHASE_TIMES[(fmt, scale)]
    assert result.returncode == 0
    assert (result.trace.t_d, result.trace.t_c) == (t_d, total)
    assert faultproc.measure_gap(result.trace) == total - t_d == durations["commit"]
    assert all(s.completed for s in result.trace.steps)


def test_profile_noise_shares_one_factor():
    rng = random.Random(1)
    p = faultproc.default_timing_profile(LA, "22k", noise_cv=0.05, rng=rng)
    base = faultproc.default_timing_profile(LA, "22k")
    ratios = [p[k] / base[k] for k in base]
    assert max(ratios) - min(ratios) < 0.01
    with pytest.raises(ValueError):
        faultproc.default_timing_profile(LA, "1m")


@settings(max_examples=150, deadline=None)
@given(st.sampled_from([LA, SP]), st.sampled_from(["22k", "500k"]), st.integers(0, 9_200))
def test_kill_instant_against_interval_oracle(fmt, scale, t_kill):
    store, plan, d = _setup(fmt, scale)
    result = run_job(store, plan, kill=KillSchedule.at_time(t_kill))

    # Oracle from durations alone: file i is durable iff its put ends strictly before the kill.
    ends, t = [], d["startup"]
    for ms in split_evenly(d["data"], len(plan.files)):
        t += ms
        ends.append(t)
    total = sum(d.values())
    committed = t_kill > total
    durable = [f.key for f, e in zip(plan.files, ends) if e < t_kill]

    assert result.returncode == (0 if committed else faultproc.KILLED)
    assert result.duration_ms == (total if committed else t_kill)
    rows = formats.visible_row_count(store, "t")
    assert rows == (plan.total_rows if committed else 0)
    assert formats.find_orphans(store, "t") == ([] if committed else durable)
    assert store.in_flight() == []


def test_kill_at_exact_step_end_discards_that_step():
    store, plan, d = _setup(LA)
    total = sum(d.values())
    result = run_job(store, plan, kill=KillSchedule.at_time(total))
    assert result.returncode == faultproc.KILLED
    assert formats.read_version(store, "t").value == 0
    assert result.trace.steps[-1].status == "killed"


def test_after_data_hook_flushes_then_kills():
    store, plan, d = _setup(SP)
    result = run_job(store, plan, kill=KillSchedule.after_phase("data"))
    t_d = d["startup"] + d["data"]
    assert result.trace.killed_at == t_d + faultproc.KILL_FLUSH_MS
    assert result.duration_ms == t_d + faultproc.KILL_FLUSH_MS
    assert not any(s.name.startswith("commit:") for s in result.trace.steps)


def test_after_commit_hook_kills_inside_first_metadata_step():
    store, plan, d = _setup(SP)
    result = run_job(store, plan, kill=KillSchedule.after_phase("commit"))
    first = next(s for s in result.trace.steps if s.name.startswith("commit:"))
    assert first.status == "killed"
    assert first.start < result.trace.killed_at < first.end


def test_stall_without_watchdog_dies_at_timeout():
    store, plan, _ = _setup(LA)
    result = run_job(store, plan, kill=KillSchedule.after_phase("data", stall=True), timeout_ms=60_000)
    assert result.returncode == faultproc.KILLED
    assert result.duration_ms == 60_000
    assert result.trace.kill_cause == "timeout"


def test_killed_returncode_configurable():
    store, plan, _ = _setup(LA)
    result = run_job(store, plan, kill=KillSchedule.at_time(10), killed_returncode=faultproc.KILLED_SHELL)
    assert result.returncode == 137


def test_format_mismatch_rejected():
    store, plan, _ = _setup(LA)
    with pytest.raises(ValueError):
        run_job(store, plan, fmt=SP)


def test_process_priorities_and_waits():
    store = ObjectStore()
    order = []

    def actor(name, at):
        yield WaitUntil(f"{name}:wait", at)
        order.append(name)
        yield Put(f"{name}:put", name, b"x", 5)

    proc = Process(store, main="a")
    proc.spawn("b", actor("b", 10), priority=1)
    proc.spawn("a", actor("a", 10), priority=0)
    proc.run()
    assert order == ["a", "b"]
    assert proc.exit_code == 0 and store.exists("a")
    # b's put was in flight when the main actor exited; daemons die with it.
    assert not store.exists("b")


def test_process_deadlock_detected():
    store = ObjectStore()

    def stuck():
        yield Hang("forever")

    proc = Process(store)
    proc.spawn("writer", stuck())
    with pytest.raises(faultproc.ProcessDeadlock):
        proc.run()


def test_exception_is_visible_error():
    store = ObjectStore()

    def boom():
        yield Work("w", 5)
        raise RuntimeError("bad input")

    proc = Process(store)
    proc.spawn("writer", boom())
    proc.run()
    assert proc.exit_code == faultproc.VISIBLE_ERROR
    assert isinstance(proc.error, RuntimeError)


def test_job_env_parity():
    env = JobEnv("in/data.csv", "t", "r1", "data", True).as_environ()
    assert JobEnv.from_environ(env) == JobEnv("in/data.csv", "t", "r1", "data", True)
    with pytest.raises(ValueError):
        JobEnv.from_environ({"INPUT_PATH": "x"})
    with pytest.raises(ValueError):
        JobEnv.from_environ({**env, "KILL_AFTER_PHASE": "later"})
    assert KillSchedule.from_env({"KILL_AFTER_PHASE": ""}) == KillSchedule.none()


def test_run_job_from_env():
    store = ObjectStore()
    formats.create_table(store, "t", LA)
    store.put("in/data.csv", b"id;name\n1;a\n2;b\n")
    env = {"INPUT_PATH": "in/data.csv", "OUTPUT_PATH": "t", "RUN_ID": "r1", "KILL_AFTER_PHASE": "", "USE_SAFE_WRITER": "false"}
    assert run_job_from_env(store, env).returncode == 0
    assert formats.visible_row_count(store, "t") == 2
    env = {**env, "RUN_ID": "r2", "KILL_AFTER_PHASE": "data", "USE_SAFE_WRITER": "true", "SW_CHECKPOINT_BUCKET": "cp"}
    result = run_job_from_env(store, env)
    assert result.returncode == faultproc.KILLED and result.watchdog_fired
    assert formats.visible_row_count(store, "t") == 2


def test_trace_to_dict_is_json_ready():
    import json

    store, plan, _ = _setup(LA)
    body = run_job(store, plan, kill=KillSchedule.after_phase("data")).trace.to_dict()
    assert json.loads(json.dumps(body))["killed_at"] == body["killed_at"]
