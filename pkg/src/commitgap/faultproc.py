"""Virtual-time process model with uncatchable kills.

A :class:`Process` runs one or more actors (the writer, optionally a
watchdog) over a shared virtual clock. A kill at instant ``t`` stops every
actor: steps that would complete at or after ``t`` never land, in-flight
puts are dropped, and no handler or cleanup code runs afterwards.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping

from . import formats, safewriter
from .formats import TableFormat, VersionRef, WritePlan
from .formats.common import partition_layout
from .safewriter import SafeWriterConfig
from .steps import Delete, Hang, Mark, Program, Put, Step, WaitUntil, Work
from .store import ObjectStore, PendingPut

log = logging.getLogger(__name__)

PHASES = ("data", "commit")
KILL_FLUSH_MS = 100
KILLED = -9
KILLED_SHELL = 137
VISIBLE_ERROR = 1
RETURNCODES = (0, KILLED, KILLED_SHELL, VISIBLE_ERROR)
DEFAULT_TIMEOUT_MS = safewriter.DEFAULT_TIMEOUT_MS


@dataclass(frozen=True)
class KillSchedule:
    """When the hard kill lands.

    ``after_phase`` fires the injection hook at a phase boundary. By default
    the hook flushes logs for ``KILL_FLUSH_MS`` and kills the process; with
    ``stall=True`` the job instead stops making progress at the boundary and
    dies at the platform timeout (the situation a watchdog exists for).
    ``at_time`` kills at a fixed offset from job start.
    """

    mode: str = "none"
    phase: str | None = None
    t_kill: int | None = None
    stall: bool = False
    cause: str = "timeout"

    def __post_init__(self) -> None:
        if self.mode not in ("none", "after_phase", "at_time"):
            raise ValueError(f"unknown kill mode {self.mode!r}")
        if self.mode == "after_phase" and self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.mode == "at_time" and (self.t_kill is None or self.t_kill < 0):
            raise ValueError("at_time needs t_kill >= 0")

    @classmethod
    def none(cls) -> "KillSchedule":
        return cls()

    @classmethod
    def after_phase(cls, phase: str, stall: bool = False, cause: str = "timeout") -> "KillSchedule":
        return cls("after_phase", phase=phase, stall=stall, cause=cause)

    @classmethod
    def at_time(cls, t_kill: int, cause: str = "timeout") -> "KillSchedule":
        return cls("at_time", t_kill=int(t_kill), cause=cause)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, stall: bool = False) -> "KillSchedule":
        env = os.environ if env is None else env
        phase = env.get("KILL_AFTER_PHASE", "")
        return cls.after_phase(phase, stall=stall) if phase else cls.none()


@dataclass
class TraceStep:
    actor: str
    name: str
    start: int
    end: int | None
    status: str = "running"  # completed | killed | cancelled | stalled

    @property
    def completed(self) -> bool:
        return self.status == "completed"


@dataclass
class JobTrace:
    started_at: int
    steps: list[TraceStep] = field(default_factory=list)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    t_d: int | None = None
    t_c: int | None = None
    killed_at: int | None = None
    kill_cause: str | None = None

    @property
    def gap(self) -> tuple[int, int] | None:
        if self.t_d is None or self.t_c is None:
            return None
        return self.t_d, self.t_c

    def to_dict(self) -> dict:
        return {
            "started_at": self.started_at,
            "t_d": self.t_d,
            "t_c": self.t_c,
            "killed_at": self.killed_at,
            "kill_cause": self.kill_cause,
            "steps": [vars(s) for s in self.steps],
            "events": [list(e) for e in self.events],
        }


@dataclass
class JobResult:
    returncode: int
    trace: JobTrace
    duration_ms: int
    error: str | None = None
    version: VersionRef | None = None
    watchdog_fired: bool = False


class _Actor:
    def __init__(self, name: str, gen: Program, priority: int, seq: int) -> None:
        self.name = name
        self.gen = gen
        self.priority = priority
        self.seq = seq
        self.status = "running"  # running | blocked | done | failed | cancelled
        self.started = False
        self.step: Step | None = None
        self.end: int | None = None
        self.pending: PendingPut | None = None
        self.trace_step: TraceStep | None = None
        self.injected: deque[Step] = deque()
        self.kill_in_next: int | None = None
        self.stall_next = False
        self.result: Any = None
        self.error: BaseException | None = None

    @property
    def scheduled(self) -> bool:
        return self.status == "running" and self.end is not None


class ProcessDeadlock(RuntimeError):
    pass


class Process:
    """Discrete-event scheduler for one simulated job.

    The actor named ``main`` decides the exit: the process ends when it
    returns (exit 0) or raises (exit 1). Other actors are daemons and die
    with it. Ties at one instant resolve kill first, then actors by priority.
    """

    def __init__(
        self,
        store: ObjectStore,
        *,
        kill: KillSchedule | None = None,
        timeout_ms: int | None = None,
        flush_ms: int = KILL_FLUSH_MS,
        main: str = "writer",
        killed_returncode: int = KILLED,
    ) -> None:
        self.store = store
        self.clock = store.clock
        self.started_at = self.clock.now
        self.kill = kill or KillSchedule.none()
        self.flush_ms = flush_ms
        self.main = main
        self.killed_returncode = killed_returncode
        self.trace = JobTrace(started_at=self.started_at)
        self.actors: dict[str, _Actor] = {}
        self.kill_at: int | None = None
        self.kill_cause: str | None = None
        self.exit_code: int | None = None
        self.ended_at: int | None = None
        self.error: BaseException | None = None
        self.watchdog: safewriter.Watchdog | None = None
        if timeout_ms is not None:
            self.schedule_kill(self.started_at + timeout_ms, "timeout")
        if self.kill.mode == "at_time":
            self.schedule_kill(self.started_at + self.kill.t_kill, self.kill.cause)

    # -- public surface used by programs ------------------------------------

    @property
    def now(self) -> int:
        return self.clock.now

    def spawn(self, name: str, gen: Program, priority: int = 0) -> None:
        actor = _Actor(name, gen, priority, len(self.actors))
        self.actors[name] = actor
        self._advance(actor)

    def schedule_kill(self, at: int, cause: str) -> None:
        at = max(int(at), self.started_at)
        if self.kill_at is None or at < self.kill_at:
            self.kill_at = at
            self.kill_cause = cause

    def event(self, name: str, actor: str = "") -> None:
        self.trace.events.append((self.clock.now, actor, name))

    def cancel(self, name: str, reason: str = "") -> None:
        """Stop an actor's progress, dropping any in-flight put it owns.

        A cancelled ``main`` stays alive but blocked (the process keeps
        running until something kills it); a cancelled daemon just ends.
        """
        actor = self.actors.get(name)
        if actor is None or actor.status not in ("running", "blocked"):
            return
        self._drop_in_flight(actor, "cancelled")
        actor.status = "blocked" if name == self.main else "cancelled"
        actor.end = None
        self.event(f"cancel:{name}" + (f":{reason}" if reason else ""))
        actor.gen.close()

    # -- main loop -------------------------------------------------------------

    def run(self) -> "Process":
        while self.exit_code is None:
            runnable = [a for a in self.actors.values() if a.scheduled]
            nxt = min(runnable, key=lambda a: (a.end, a.priority, a.seq), default=None)
            if self.kill_at is not None and (nxt is None or self.kill_at <= nxt.end):
                self._kill()
                break
            if nxt is None:
                raise ProcessDeadlock("no runnable actor and no kill scheduled")
            self._complete(nxt)
        return self

    # -- internals ---------------------------------------------------------------

    def _advance(self, actor: _Actor) -> None:
        raised: Exception | None = None
        while actor.status == "running":
            if actor.injected and raised is None:
                step = actor.injected.popleft()
            else:
                try:
                    if raised is not None:
                        err, raised = raised, None
                        step = actor.gen.throw(err)
                    else:
                        step = actor.gen.send(None) if actor.started else next(actor.gen)
                    actor.started = True
                except StopIteration as stop:
                    actor.status, actor.result = "done", stop.value
                    self._actor_exited(actor)
                    return
                except Exception as err:  # noqa: BLE001 - any raise is a visible failure
                    actor.status, actor.error = "failed", err
                    self._actor_exited(actor)
                    return
            if isinstance(step, Mark):
                self._mark(actor, step.name)
                continue
            try:
                started = self._start(actor, step)
            except Exception as err:  # noqa: BLE001 - store errors surface inside the program
                actor.step, actor.trace_step, actor.end = None, None, None
                raised = err
                continue
            if not started:
                return
            if actor.end is None or actor.end > self.clock.now:
                return
            self._finish_step(actor)

    def _start(self, actor: _Actor, step: Step) -> bool:
        now = self.clock.now
        duration = getattr(step, "duration", 0)
        if actor.kill_in_next is not None:
            flush = actor.kill_in_next
            actor.kill_in_next = None
            self.schedule_kill(now + (min(flush, duration - 1) if duration >= 1 else 0), self.kill.cause)
        if self.kill_at is not None and now >= self.kill_at:
            actor.injected.appendleft(step)
            actor.end = None
            return False
        actor.step = step
        if isinstance(step, WaitUntil):
            actor.end = max(step.at, now)
            actor.trace_step = None
            return True
        if isinstance(step, Hang):
            actor.end = None
            actor.status = "blocked"
            actor.trace_step = TraceStep(actor.name, step.name, now, None, "stalled")
            self.trace.steps.append(actor.trace_step)
            return False
        actor.trace_step = TraceStep(actor.name, step.name, now, now + duration)
        self.trace.steps.append(actor.trace_step)
        actor.end = now + duration
        if isinstance(step, Put):
            pending = self.store.put(step.key, step.payload, duration, size=step.size)
            actor.pending = pending if pending.state == "in_flight" else None
        if actor.stall_next:
            actor.stall_next = False
            actor.end = None
            actor.status = "blocked"
            actor.trace_step.end = None
            actor.trace_step.status = "stalled"
            return False
        return True

    def _complete(self, actor: _Actor) -> None:
        self.clock.advance_to(actor.end)
        self._finish_step(actor)
        self._advance(actor)

    def _finish_step(self, actor: _Actor) -> None:
        step = actor.step
        if actor.pending is not None:
            self.store.complete(actor.pending)
            actor.pending = None
        if isinstance(step, Delete):
            self.store.delete(step.key)
        if actor.trace_step is not None:
            actor.trace_step.status = "completed"
        actor.step, actor.trace_step, actor.end = None, None, None

    def _mark(self, actor: _Actor, name: str) -> None:
        now = self.clock.now
        self.event(name, actor.name)
        if name == "data_complete":
            self.trace.t_d = now
        elif name == "commit_complete":
            self.trace.t_c = now
        elif name.startswith("hook:"):
            phase = name[len("hook:"):]
            if self.kill.mode != "after_phase" or self.kill.phase != phase:
                return
            self.event(f"kill_hook:{phase}", actor.name)
            if self.kill.stall:
                if phase == "data":
                    actor.injected.append(Hang("stall:data"))
                else:
                    actor.stall_next = True
            elif phase == "data":
                actor.injected.append(Work("kill_hook:flush", self.flush_ms))
                self.schedule_kill(now + self.flush_ms, self.kill.cause)
            else:
                # Kill lands inside the first metadata step, before it is durable.
                actor.kill_in_next = self.flush_ms

    def _drop_in_flight(self, actor: _Actor, status: str) -> None:
        if actor.pending is not None:
            self.store.abort(actor.pending)
            actor.pending = None
        if actor.trace_step is not None and actor.trace_step.status in ("running", "stalled"):
            actor.trace_step.status = status
        actor.step, actor.trace_step = None, None

    def _actor_exited(self, actor: _Actor) -> None:
        if actor.name != self.main:
            return
        self.ended_at = self.clock.now
        self.exit_code = 0 if actor.status == "done" else VISIBLE_ERROR
        self.error = actor.error
        for other in self.actors.values():
            if other is not actor and other.status in ("running", "blocked"):
                self._drop_in_flight(other, "cancelled")
                other.status = "cancelled"

    def _kill(self) -> None:
        at = max(self.kill_at, self.clock.now)
        self.clock.advance_to(at)
        for actor in self.actors.values():
            if actor.status in ("running", "blocked"):
                self._drop_in_flight(actor, "killed")
                actor.status = "killed"
        self.trace.killed_at = at
        self.trace.kill_cause = self.kill_cause
        self.ended_at = at
        self.exit_code = self.killed_returncode


# -- the write job ---------------------------------------------------------------


def _writer(proc: Process, store: ObjectStore, plan: WritePlan, sw: SafeWriterConfig | None) -> Program:
    doc = v0 = None
    if sw is not None:
        doc, v0 = yield from safewriter.begin_steps(store, sw, plan.run_id, plan.target_table)
        proc.watchdog = safewriter.arm_watchdog(
            proc, sw, lambda: safewriter.rollback_steps(store, sw, plan.target_table, v0, doc)
        )
    try:
        yield from formats.data_steps(store, plan)
        yield Mark("hook:data")
        yield Mark("hook:commit")
        version = yield from formats.commit_steps(store, plan)
    except Exception:
        if sw is not None:
            proc.cancel("watchdog", "exception")
            yield from safewriter.rollback_steps(store, sw, plan.target_table, v0, doc)
        raise
    if sw is not None:
        proc.cancel("watchdog", "success")
        yield from safewriter.finish_steps(store, sw, doc)
    return version


def run_job(
    store: ObjectStore,
    plan: WritePlan,
    fmt: TableFormat | str | None = None,
    kill: KillSchedule | None = None,
    safewriter_config: SafeWriterConfig | None = None,
    *,
    timeout_ms: int | None = None,
    flush_ms: int = KILL_FLUSH_MS,
    killed_returncode: int = KILLED,
) -> JobResult:
    """Run one write (optional checkpoint prologue, phase 1, phase 2, epilogue).

    The platform timeout always applies: ``safewriter_config.timeout_ms``
    when protected, else ``timeout_ms`` (default 900 s).
    """
    if fmt is not None:
        actual = formats.detect_format(store, plan.target_table)
        if actual is not TableFormat.parse(fmt):
            raise ValueError(f"{plan.target_table} is {actual.value}, not {fmt}")
    if safewriter_config is not None:
        timeout_ms = safewriter_config.timeout_ms
    elif timeout_ms is None:
        timeout_ms = DEFAULT_TIMEOUT_MS
    proc = Process(
        store, kill=kill, timeout_ms=timeout_ms, flush_ms=flush_ms, killed_returncode=killed_returncode
    )
    proc.spawn("writer", _writer(proc, store, plan, safewriter_config))
    proc.run()
    writer = proc.actors["writer"]
    return JobResult(
        returncode=proc.exit_code,
        trace=proc.trace,
        duration_ms=proc.ended_at - proc.started_at,
        error=None if proc.error is None else f"{type(proc.error).__name__}: {proc.error}",
        version=writer.result if writer.status == "done" else None,
        watchdog_fired=bool(proc.watchdog and proc.watchdog.fired),
    )


def measure_gap(trace: JobTrace) -> int:
    """Length of the commit-durability gap ``t_c - t_d`` of an uninterrupted run."""
    if trace.t_d is None or trace.t_c is None:
        raise ValueError("trace lacks t_d or t_c; the run did not complete both phases")
    return trace.t_c - trace.t_d


# -- timing profiles ---------------------------------------------------------------

SCALES = ("22k", "100k", "500k")

# (phase-1 end, total) in ms. Log-append rows and snapshot-pointer 22k are the
# measured baseline / kill-after-data means. Snapshot-pointer 100k and 500k
# baselines never completed in the measurements, so their totals extend the
# kill means by the 22k gap scaled like the log-append gap.
PHASE_TIMES: dict[tuple[TableFormat, str], tuple[int, int]] = {
    (TableFormat.LOG_APPEND, "22k"): (4124, 7644),
    (TableFormat.LOG_APPEND, "100k"): (4108, 7638),
    (TableFormat.LOG_APPEND, "500k"): (4468, 9020),
    (TableFormat.SNAPSHOT_POINTER, "22k"): (4090, 5477),
    (TableFormat.SNAPSHOT_POINTER, "100k"): (4132, 4132 + round(1387 * 3530 / 3520)),
    (TableFormat.SNAPSHOT_POINTER, "500k"): (4436, 4436 + round(1387 * 4552 / 3520)),
}
MEASURED = {k for k in PHASE_TIMES if not (k[0] is TableFormat.SNAPSHOT_POINTER and k[1] != "22k")}
STARTUP_SHARE = 0.6


def default_timing_profile(
    fmt: TableFormat | str,
    scale: str,
    *,
    noise_cv: float = 0.0,
    rng: random.Random | None = None,
) -> dict[str, int]:
    """Step budgets ``startup``/``data``/``commit`` reproducing the means.

    With ``noise_cv > 0`` every budget is scaled by one shared factor drawn
    from N(1, noise_cv), so whole-job durations have that coefficient of
    variation while the phase proportions hold.
    """
    kind = TableFormat.parse(fmt)
    if (kind, scale) not in PHASE_TIMES:
        raise ValueError(f"unknown scale {scale!r}; expected one of {SCALES}")
    t_d, total = PHASE_TIMES[(kind, scale)]
    startup = round(t_d * STARTUP_SHARE)
    budgets = {"startup": startup, "data": t_d - startup, "commit": total - t_d}
    if noise_cv > 0:
        rng = rng or random.Random()
        factor = max(0.5, rng.gauss(1.0, noise_cv))
        budgets = {k: round(v * factor) for k, v in budgets.items()}
    return budgets


def profile_gap(fmt: TableFormat | str, scale: str) -> int:
    t_d, total = PHASE_TIMES[(TableFormat.parse(fmt), scale)]
    return total - t_d


# -- environment-variable parity ----------------------------------------------------------


@dataclass(frozen=True)
class JobEnv:
    input_path: str
    output_path: str
    run_id: str
    kill_after_phase: str = ""
    use_safe_writer: bool = False

    @classmethod
    def from_environ(cls, env: Mapping[str, str] | None = None) -> "JobEnv":
        env = os.environ if env is None else env
        missing = [k for k in ("INPUT_PATH", "OUTPUT_PATH", "RUN_ID") if not env.get(k)]
        if missing:
            raise ValueError(f"missing environment variables: {', '.join(missing)}")
        phase = env.get("KILL_AFTER_PHASE", "")
        if phase and phase not in PHASES:
            raise ValueError(f"KILL_AFTER_PHASE must be empty or one of {PHASES}")
        return cls(
            input_path=env["INPUT_PATH"],
            output_path=env["OUTPUT_PATH"],
            run_id=env["RUN_ID"],
            kill_after_phase=phase,
            use_safe_writer=safewriter._truthy(env.get("USE_SAFE_WRITER", "false")),
        )

    def as_environ(self) -> dict[str, str]:
        return {
            "INPUT_PATH": self.input_path,
            "OUTPUT_PATH": self.output_path,
            "RUN_ID": self.run_id,
            "KILL_AFTER_PHASE": self.kill_after_phase,
            "USE_SAFE_WRITER": "true" if self.use_safe_writer else "false",
        }


def csv_partitions(raw: bytes) -> list[tuple[int, int, str]]:
    """Part-file layout for a CSV input object (header line excluded from rows)."""
    lines = raw.count(b"\n") + (0 if raw.endswith(b"\n") or not raw else 1)
    rows = max(0, lines - 1)
    digest = hashlib.sha256(raw).hexdigest()[:16]
    return [(r, b, f"{digest}:{i}") for i, (r, b) in enumerate(partition_layout(rows, len(raw)))]


def run_job_from_env(
    store: ObjectStore,
    env: Mapping[str, str] | None = None,
    phase_durations: dict[str, int] | None = None,
) -> JobResult:
    """Run a write configured exactly like the harness subprocess environment.

    The table at OUTPUT_PATH must exist; INPUT_PATH names a CSV object.
    """
    job_env = JobEnv.from_environ(env)
    raw = store.get(job_env.input_path)
    if raw is None:
        raise FileNotFoundError(job_env.input_path)
    fmt = formats.detect_format(store, job_env.output_path)
    durations = phase_durations or default_timing_profile(fmt, "22k")
    plan = formats.make_plan(store, job_env.output_path, job_env.run_id, csv_partitions(raw), durations)
    sw = SafeWriterConfig.from_env(env) if job_env.use_safe_writer else None
    kill = KillSchedule.from_env(env, stall=sw is not None)
    return run_job(store, plan, kill=kill, safewriter_config=sw)
