"""Experiment matrix: design, per-run execution, classification and JSONL records."""

from __future__ import annotations

import json
import logging
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

from .. import faultproc, formats, safewriter, stats
from ..clock import VirtualClock, iso_timestamp
from ..formats import TableFormat
from ..safewriter import SafeWriterConfig
from ..store import ObjectStore
from .datasets import get_spec

log = logging.getLogger(__name__)

SCENARIOS = ("baseline", "kill_data", "kill_commit", "sw_kill_data", "sw_kill_commit")
FORMATS = (TableFormat.LOG_APPEND, TableFormat.SNAPSHOT_POINTER)
DAY_MS = 86_400_000
RUN_SPACING_MS = 1_000
DEFAULT_SEED = 20260322
DEFAULT_NOISE_CV = 0.05
KILLED_CODES = (faultproc.KILLED, faultproc.KILLED_SHELL)


@dataclass(frozen=True)
class ExperimentSpec:
    part: str
    format: TableFormat
    scale: str
    scenario: str
    runs: int

    def __post_init__(self) -> None:
        if self.part not in ("A", "B"):
            raise ValueError(f"part must be A or B, got {self.part!r}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.runs < 0:
            raise ValueError("runs must be >= 0")
        get_spec(self.scale)
        object.__setattr__(self, "format", TableFormat.parse(self.format))

    @property
    def kill_phase(self) -> str | None:
        return {"kill_data": "data", "sw_kill_data": "data", "kill_commit": "commit", "sw_kill_commit": "commit"}.get(
            self.scenario
        )

    @property
    def use_safe_writer(self) -> bool:
        return self.scenario.startswith("sw_")

    @property
    def slug(self) -> str:
        return f"{self.part}/{self.format.value}/{self.scale}/{self.scenario}"


_PART_A = {"baseline": 50, "kill_data": 75, "kill_commit": 75, "sw_kill_data": 25, "sw_kill_commit": 25}
# Per-scale split of the 180 + 180 Part B runs.
_PART_B = {
    TableFormat.LOG_APPEND: {"22k": 30, "100k": 30, "500k": 20},
    TableFormat.SNAPSHOT_POINTER: {"22k": 50, "100k": 30, "500k": 20},
}


def default_design() -> list[ExperimentSpec]:
    design = [ExperimentSpec("A", fmt, "22k", sc, n) for fmt in FORMATS for sc, n in _PART_A.items()]
    for scenario in ("baseline", "kill_data"):
        for fmt in FORMATS:
            design += [ExperimentSpec("B", fmt, scale, scenario, n) for scale, n in _PART_B[fmt].items()]
    return design


def select(
    design: Sequence[ExperimentSpec],
    *,
    part: str | None = None,
    fmt: str | None = None,
    scenario: str | None = None,
    scale: str | None = None,
    runs: int | None = None,
) -> list[ExperimentSpec]:
    kind = TableFormat.parse(fmt) if fmt else None
    chosen = [
        s
        for s in design
        if (part is None or s.part == part)
        and (kind is None or s.format is kind)
        and (scenario is None or s.scenario == scenario)
        and (scale is None or s.scale == scale)
    ]
    if runs is not None:
        chosen = [ExperimentSpec(s.part, s.format, s.scale, s.scenario, runs) for s in chosen]
    return chosen


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    table_format: str
    dataset: str
    kill_phase: str | None
    use_safe_writer: bool
    outcome: str
    duration_ms: int
    returncode: int
    timestamp: str

    def to_line(self) -> bytes:
        return (json.dumps(asdict(self), separators=(",", ":")) + "\n").encode()

    @classmethod
    def from_dict(cls, body: dict) -> "RunRecord":
        names = [f.name for f in fields(cls)]
        if sorted(body) != sorted(names):
            raise ValueError(f"record fields {sorted(body)} != {sorted(names)}")
        return cls(**body)


def classify(returncode: int, safewriter_enabled: bool) -> str:
    if returncode == 0:
        return "success"
    if returncode in KILLED_CODES:
        return "rollback_success" if safewriter_enabled else "silent_data_loss"
    return "visible_error"


def monitor_view(store: ObjectStore, table_path: str, returncode: int) -> tuple[str, int]:
    """What an external monitor sees: an opaque exit class and the visible row count."""
    exit_class = "ok" if returncode == 0 else "Runtime.ExitError"
    return exit_class, formats.visible_row_count(store, table_path)


# -- state oracle -----------------------------------------------------------------------


@dataclass(frozen=True)
class TableState:
    version: int
    files: tuple[str, ...]
    rows: int
    orphans: frozenset[str]

    @classmethod
    def read(cls, store: ObjectStore, path: str) -> "TableState":
        return cls(
            formats.read_version(store, path).value,
            tuple(sorted(formats.file_set(store, path))),
            formats.visible_row_count(store, path),
            frozenset(formats.find_orphans(store, path)),
        )


def reconstruct_outcome(
    before: TableState, after: TableState, rows_written: int, doc_status: str | None, error: str | None
) -> str:
    """Outcome inferred from table state and the checkpoint trail, not the exit code."""
    if error is not None:
        return "visible_error"
    if after.files != before.files and after.rows == before.rows + rows_written:
        return "success"
    if after.files == before.files and after.rows == before.rows:
        if doc_status == safewriter.ROLLED_BACK:
            return "rollback_success"
        if after.orphans - before.orphans:
            return "silent_data_loss"
    return "visible_error"


@dataclass
class RunOutcome:
    record: RunRecord
    oracle: str
    before: TableState
    after: TableState
    monitor_after: tuple[str, int]
    doc_status: str | None = None

    @property
    def consistent(self) -> bool:
        return self.oracle == self.record.outcome


@dataclass
class MatrixConfig:
    seed: int = DEFAULT_SEED
    noise_cv: float = DEFAULT_NOISE_CV
    safewriter: SafeWriterConfig = field(default_factory=SafeWriterConfig)
    timeout_ms: int = faultproc.DEFAULT_TIMEOUT_MS
    killed_returncode: int = faultproc.KILLED


def table_path(spec: ExperimentSpec) -> str:
    return f"warehouse/{spec.slug}"


def run_slice(spec: ExperimentSpec, slice_index: int, config: MatrixConfig) -> list[RunOutcome]:
    """Run one design row against its own store; tables and orphans accumulate across runs."""
    rng = random.Random(f"{config.seed}:{spec.slug}")
    store = ObjectStore(VirtualClock(slice_index * DAY_MS))
    path = table_path(spec)
    formats.create_table(store, path, spec.format)
    sw = None
    if spec.use_safe_writer:
        sw = SafeWriterConfig(**{**asdict(config.safewriter), "checkpoint_bucket": f"checkpoints/{spec.slug}"})
    kill = (
        faultproc.KillSchedule.after_phase(spec.kill_phase, stall=sw is not None)
        if spec.kill_phase
        else faultproc.KillSchedule.none()
    )
    partitions = get_spec(spec.scale).partitions(config.seed)
    outcomes = []
    for i in range(spec.runs):
        store.clock.advance_to(store.clock.now + RUN_SPACING_MS)
        run_id = f"{spec.scenario}-{spec.part}{i:03d}-{rng.getrandbits(32):08x}"
        durations = faultproc.default_timing_profile(spec.format, spec.scale, noise_cv=config.noise_cv, rng=rng)
        started = store.clock.now
        before = TableState.read(store, path)
        error = None
        try:
            plan = formats.make_plan(store, path, run_id, partitions, durations)
            result = faultproc.run_job(
                store,
                plan,
                kill=kill,
                safewriter_config=sw,
                timeout_ms=config.timeout_ms,
                killed_returncode=config.killed_returncode,
            )
            rc, duration, error = result.returncode, result.duration_ms, result.error
        except Exception as err:  # noqa: BLE001 - a failed run never aborts the matrix
            log.warning("run %s failed outside the job: %s", run_id, err)
            rc, duration, error = faultproc.VISIBLE_ERROR, store.clock.now - started, repr(err)
        after = TableState.read(store, path)
        doc = safewriter.load_checkpoint(store, sw.checkpoint_bucket, run_id) if sw else None
        record = RunRecord(
            run_id=run_id,
            table_format=spec.format.value,
            dataset=spec.scale,
            kill_phase=spec.kill_phase,
            use_safe_writer=sw is not None,
            outcome=classify(rc, sw is not None),
            duration_ms=duration,
            returncode=rc,
            timestamp=iso_timestamp(started),
        )
        oracle = reconstruct_outcome(before, after, plan_rows(partitions), doc and doc.status, error)
        outcomes.append(
            RunOutcome(record, oracle, before, after, monitor_view(store, path, rc), doc and doc.status)
        )
    return outcomes


def plan_rows(partitions) -> int:
    return sum(p[0] for p in partitions)


def _slice_job(args) -> list[RunOutcome]:
    return run_slice(*args)


class RecordSink:
    """Append-only JSONL file; each record goes out in a single ``write(2)``."""

    def __init__(self, path: str | Path, truncate: bool = True) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        flags = os.O_WRONLY | os.O_CREAT | os.O_APPEND | (os.O_TRUNC if truncate else 0)
        self.fd = os.open(self.path, flags, 0o644)

    def write(self, record: RunRecord) -> None:
        line = record.to_line()
        if os.write(self.fd, line) != len(line):
            raise OSError(f"short write to {self.path}")

    def close(self) -> None:
        os.close(self.fd)

    def __enter__(self) -> "RecordSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_records(path: str | Path) -> list[RunRecord]:
    """Parse a JSONL file, skipping lines that are truncated or malformed."""
    records = []
    for n, line in enumerate(Path(path).read_bytes().split(b"\n"), 1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError) as err:
            log.warning("%s:%d: skipping unparseable record (%s)", path, n, err)
    return records


@dataclass
class MatrixResult:
    outcomes: list[RunOutcome]
    path: Path | None

    @property
    def records(self) -> list[RunRecord]:
        return [o.record for o in self.outcomes]

    @property
    def mismatches(self) -> list[RunOutcome]:
        return [o for o in self.outcomes if not o.consistent]

    def summary(self) -> list[stats.SummaryRow]:
        return stats.summarize(self.records)


def run_matrix(
    design: Sequence[ExperimentSpec] | None = None,
    seed: int = DEFAULT_SEED,
    out_path: str | Path | None = None,
    *,
    config: MatrixConfig | None = None,
    parallel: int = 1,
) -> MatrixResult:
    """Execute every run of ``design`` and append one JSONL line per run.

    Design rows run in isolated stores, so ``parallel > 1`` farms them out
    to worker processes; records are still written in design order.
    """
    design = default_design() if design is None else list(design)
    config = config or MatrixConfig(seed=seed)
    if config.seed != seed:
        config = MatrixConfig(**{**config.__dict__, "seed": seed})
    jobs = [(spec, i, config) for i, spec in enumerate(design)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            per_slice = list(pool.map(_slice_job, jobs))
    else:
        per_slice = [_slice_job(j) for j in jobs]
    outcomes = [o for chunk in per_slice for o in chunk]
    sink = RecordSink(out_path) if out_path is not None else None
    try:
        for o in outcomes:
            if sink:
                sink.write(o.record)
    finally:
        if sink:
            sink.close()
    return MatrixResult(outcomes, Path(out_path) if out_path is not None else None)


def records_from(items: Iterable[RunRecord | dict]) -> list[RunRecord]:
    return [r if isinstance(r, RunRecord) else RunRecord.from_dict(r) for r in items]
