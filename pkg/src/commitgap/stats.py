"""Closed-form exposure and cost models, and summaries of run records."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import faultproc, formats
from .clock import VirtualClock
from .formats import TableFormat
from .store import ObjectStore

OUTCOMES = ("success", "rollback_success", "silent_data_loss", "visible_error")
_SCENARIO_ORDER = ("baseline", "kill_data", "kill_commit", "sw_kill_data", "sw_kill_commit")
_SCALE_ORDER = ("22k", "100k", "500k")


def _rank(order: tuple[str, ...], value: str) -> tuple[int, str]:
    return (order.index(value), "") if value in order else (len(order), value)


def wilson_lower(n: int, k: int, z: float = 1.96) -> float:
    """Lower end of the Wilson score interval for ``k`` successes in ``n`` trials."""
    if n < 1 or not 0 <= k <= n or z <= 0:
        raise ValueError(f"need n >= 1, 0 <= k <= n, z > 0; got n={n} k={k} z={z}")
    if k == 0:
        return 0.0
    z2 = z * z
    lower = (k + z2 / 2 - z * math.sqrt(k * (n - k) / n + z2 / 4)) / (n + z2)
    return min(1.0, max(0.0, lower))


def exposure_probability(gap_ms: float, delta_ms: float) -> float:
    """Chance that a kill drawn uniformly from the last ``delta_ms`` lands in the gap."""
    if delta_ms <= 0 or gap_ms < 0:
        raise ValueError("need delta_ms > 0 and gap_ms >= 0")
    if gap_ms > delta_ms:
        raise ValueError(f"gap {gap_ms} ms exceeds the window {delta_ms} ms")
    return gap_ms / delta_ms


def estimate_gap(baseline_mean_ms: float, kill_mean_ms: float) -> float:
    if baseline_mean_ms < kill_mean_ms:
        raise ValueError("baseline mean must be at least the kill mean")
    return baseline_mean_ms - kill_mean_ms


def orphan_cost(f: float, retries: float = 3, s_gb: float = 0.0, r: float = 0.023) -> float:
    """Monthly storage cost ($) of orphans: ``f`` events x ``retries`` x ``s_gb`` x ``r``."""
    if min(f, retries, s_gb, r) < 0:
        raise ValueError("orphan cost inputs must be non-negative")
    return f * retries * s_gb * r


def orphan_gb_per_event(retries: float, s_gb: float) -> float:
    return retries * s_gb


# -- Monte Carlo check of the exposure model --------------------------------------


@dataclass(frozen=True)
class KillProbe:
    """Outcome of one kill instant, reconstructed from store state."""

    t_kill: int
    returncode: int
    silent: bool


def _probe(fmt: TableFormat, durations: dict[str, int], partitions, t_kill: int) -> KillProbe:
    store = ObjectStore(VirtualClock())
    formats.create_table(store, "t", fmt)
    before = sorted(formats.file_set(store, "t"))
    plan = formats.make_plan(store, "t", "mc", partitions, durations)
    kill = faultproc.KillSchedule.at_time(max(0, t_kill))
    result = faultproc.run_job(store, plan, kill=kill)
    unchanged = sorted(formats.file_set(store, "t")) == before
    silent = result.error is None and unchanged and bool(formats.find_orphans(store, "t"))
    return KillProbe(t_kill, result.returncode, silent)


def _profile_inputs(fmt: TableFormat, scale: str):
    from .harness.datasets import SCALES  # local import: harness depends on stats

    spec = SCALES[scale]
    return faultproc.default_timing_profile(fmt, scale), spec.partitions()


def job_duration(fmt: TableFormat | str, scale: str) -> int:
    return sum(faultproc.default_timing_profile(fmt, scale).values())


def sample_kill_times(window_end: int, delta_ms: int, trials: int, seed: int) -> np.ndarray:
    """Integer kill instants uniform over ``(window_end - delta_ms, window_end]``."""
    rng = np.random.default_rng(seed)
    return rng.integers(window_end - delta_ms + 1, window_end + 1, size=trials)


def monte_carlo_exposure(
    fmt: TableFormat | str,
    scale: str,
    delta_ms: int,
    trials: int,
    seed: int = 0,
    *,
    window_end: int | None = None,
    engine: str = "simulate",
) -> float:
    """Fraction of uniformly placed kills that end in silent data loss.

    ``window_end`` defaults to the job's uninterrupted duration. The
    ``simulate`` engine runs the simulator for every distinct sampled
    instant (runs are deterministic, so repeats reuse the result).
    ``intervals`` simulates once per step-boundary interval of the
    uninterrupted trace and buckets the samples into those intervals.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    kind = TableFormat.parse(fmt)
    durations, partitions = _profile_inputs(kind, scale)
    end = sum(durations.values()) if window_end is None else int(window_end)
    times = sample_kill_times(end, int(delta_ms), trials, seed)

    if engine == "simulate":
        uniq, counts = np.unique(times, return_counts=True)
        silent = sum(int(c) for t, c in zip(uniq, counts) if _probe(kind, durations, partitions, int(t)).silent)
        return silent / trials
    if engine == "intervals":
        cuts = step_boundaries(kind, durations, partitions)
        # Kill at instant t behaves like any other t' sharing the same
        # searchsorted bucket (strict rule: a step ending at t is lost).
        buckets = np.searchsorted(cuts, times, side="left")
        silent = 0
        for b, c in zip(*np.unique(buckets, return_counts=True)):
            rep = int(cuts[b]) if b < len(cuts) else int(cuts[-1]) + 1
            if _probe(kind, durations, partitions, rep).silent:
                silent += int(c)
        return silent / trials
    raise ValueError(f"unknown engine {engine!r}")


def step_boundaries(fmt: TableFormat, durations: dict[str, int], partitions) -> np.ndarray:
    """Sorted distinct step start/end instants of an uninterrupted run."""
    store = ObjectStore(VirtualClock())
    formats.create_table(store, "t", fmt)
    plan = formats.make_plan(store, "t", "mc", partitions, durations)
    result = faultproc.run_job(store, plan)
    points = {0}
    for s in result.trace.steps:
        points.add(s.start)
        if s.end is not None:
            points.add(s.end)
    return np.array(sorted(points), dtype=np.int64)


# -- record summaries ------------------------------------------------------------------


@dataclass
class SummaryRow:
    part: str
    table_format: str
    scenario: str
    dataset: str
    n: int
    counts: dict[str, int] = field(default_factory=dict)
    duration_mean: float = 0.0
    duration_std: float = 0.0

    @property
    def dominant(self) -> str:
        return max(OUTCOMES, key=lambda o: (self.counts.get(o, 0), -OUTCOMES.index(o)))

    def pct(self, outcome: str) -> float:
        return round(100.0 * self.counts.get(outcome, 0) / self.n, 1) if self.n else 0.0

    @property
    def wilson(self) -> float:
        return round(wilson_lower(self.n, self.counts.get(self.dominant, 0)), 3)

    @property
    def cv(self) -> float:
        return self.duration_std / self.duration_mean if self.duration_mean else 0.0

    def to_dict(self) -> dict:
        return {
            "part": self.part,
            "table_format": self.table_format,
            "scenario": self.scenario,
            "dataset": self.dataset,
            "n": self.n,
            "counts": {o: self.counts.get(o, 0) for o in OUTCOMES},
            "pct": {o: self.pct(o) for o in OUTCOMES},
            "dominant": self.dominant,
            "wilson_lower": self.wilson,
            "duration_mean_ms": round(self.duration_mean, 1),
            "duration_std_ms": round(self.duration_std, 1),
        }


def _record_key(rec) -> tuple[str, str, str, str]:
    get = rec.get if isinstance(rec, dict) else lambda k: getattr(rec, k)
    run_id = get("run_id")
    scenario, _, rest = run_id.partition("-")
    part = rest[:1] if rest[:1] in ("A", "B") else ""
    return part, get("table_format"), scenario, get("dataset")


def summarize(records: Iterable) -> list[SummaryRow]:
    """Outcome counts and duration stats per (part, format, scenario, dataset)."""
    groups: dict[tuple, list] = {}
    for rec in records:
        groups.setdefault(_record_key(rec), []).append(rec)
    rows = []
    ordered = sorted(groups, key=lambda k: (k[0], k[1], _rank(_SCENARIO_ORDER, k[2]), _rank(_SCALE_ORDER, k[3])))
    for key in ordered:
        recs = groups[key]
        get = (lambda r, k: r[k]) if isinstance(recs[0], dict) else getattr
        outcomes = Counter(get(r, "outcome") for r in recs)
        durations: Sequence[int] = [get(r, "duration_ms") for r in recs]
        rows.append(
            SummaryRow(
                *key,
                n=len(recs),
                counts=dict(outcomes),
                duration_mean=statistics.fmean(durations),
                duration_std=statistics.stdev(durations) if len(durations) > 1 else 0.0,
            )
        )
    return rows
