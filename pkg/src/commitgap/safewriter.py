"""Checkpoint, watchdog and rollback protection for table writes.

The protocol: read the table version ``v0`` and persist it in a checkpoint
document before any data is written; arm a watchdog that fires
``warn_before_ms`` ahead of the hard timeout and restores the table to
``v0``; on success cancel the watchdog and mark the document committed.
A stale ``in_progress`` document is the signal :func:`recover` acts on.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from . import formats
from .clock import iso_timestamp
from .formats import TableFormat, VersionRef
from .steps import Program, Put, Work, WaitUntil, drive
from .store import ObjectStore

log = logging.getLogger(__name__)
audit = logging.getLogger("commitgap.audit")

IN_PROGRESS = "in_progress"
COMMITTED = "committed"
ROLLED_BACK = "rolled_back"
STATUSES = (IN_PROGRESS, COMMITTED, ROLLED_BACK)

DEFAULT_TIMEOUT_MS = 900_000
DEFAULT_WARN_BEFORE_MS = 30_000


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class SafeWriterConfig:
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    warn_before_ms: int = DEFAULT_WARN_BEFORE_MS
    checkpoint_bucket: str = "checkpoints"
    audit_log: bool = True
    # Simulated latencies of the protocol's own I/O.
    read_version_ms: int = 20
    checkpoint_put_ms: int = 30
    restore_ms: int = 120

    def __post_init__(self) -> None:
        if not 0 < self.warn_before_ms < self.timeout_ms:
            raise ValueError(
                f"need 0 < warn_before_ms < timeout_ms, got {self.warn_before_ms} / {self.timeout_ms}"
            )
        if not self.checkpoint_bucket:
            raise ValueError("checkpoint bucket is required")

    @property
    def fire_after_ms(self) -> int:
        return self.timeout_ms - self.warn_before_ms

    @property
    def rollback_ms(self) -> int:
        return self.restore_ms + self.checkpoint_put_ms

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **overrides) -> "SafeWriterConfig":
        """Read the SW_* / LAMBDA_TIMEOUT_MS variables; env beats ``overrides``."""
        env = os.environ if env is None else env
        settings = {
            "timeout_ms": DEFAULT_TIMEOUT_MS,
            "warn_before_ms": DEFAULT_WARN_BEFORE_MS,
            "audit_log": True,
            **overrides,
        }
        if "LAMBDA_TIMEOUT_MS" in env:
            settings["timeout_ms"] = int(env["LAMBDA_TIMEOUT_MS"])
        if "SW_WARN_BEFORE_MS" in env:
            settings["warn_before_ms"] = int(env["SW_WARN_BEFORE_MS"])
        if "SW_AUDIT_LOG" in env:
            settings["audit_log"] = _truthy(env["SW_AUDIT_LOG"])
        if env.get("SW_CHECKPOINT_BUCKET"):
            settings["checkpoint_bucket"] = env["SW_CHECKPOINT_BUCKET"]
        if not settings.get("checkpoint_bucket"):
            raise ValueError("SW_CHECKPOINT_BUCKET is required")
        return cls(**settings)


def _truthy(value: str) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class CheckpointDoc:
    run_id: str
    format: str
    version_before: int
    status: str
    saved_at: str
    rolled_back_at: str | None = None

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise CheckpointError(f"unknown status {self.status!r}")
        if (self.status == ROLLED_BACK) != (self.rolled_back_at is not None):
            raise CheckpointError("rolled_back_at must be set exactly when status is rolled_back")

    def committed(self) -> "CheckpointDoc":
        self._require_open(COMMITTED)
        return replace(self, status=COMMITTED)

    def rolled_back(self, at: str) -> "CheckpointDoc":
        self._require_open(ROLLED_BACK)
        return replace(self, status=ROLLED_BACK, rolled_back_at=at)

    def _require_open(self, target: str) -> None:
        if self.status != IN_PROGRESS:
            raise CheckpointError(f"run {self.run_id}: cannot move {self.status} -> {target}")

    def to_json(self) -> bytes:
        body = {
            "run_id": self.run_id,
            "format": self.format,
            "version_before": self.version_before,
            "status": self.status,
            "saved_at": self.saved_at,
            "rolled_back_at": self.rolled_back_at,
        }
        return json.dumps(body, indent=2).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> "CheckpointDoc":
        body = json.loads(raw)
        return cls(
            run_id=body["run_id"],
            format=body["format"],
            version_before=int(body["version_before"]),
            status=body["status"],
            saved_at=body["saved_at"],
            rolled_back_at=body.get("rolled_back_at"),
        )


def checkpoint_key(bucket: str, run_id: str) -> str:
    return f"{bucket.rstrip('/')}/{run_id}.json"


def load_checkpoint(store: ObjectStore, bucket: str, run_id: str) -> CheckpointDoc | None:
    raw = store.get(checkpoint_key(bucket, run_id))
    return None if raw is None else CheckpointDoc.from_json(raw)


# -- step programs ------------------------------------------------------------


def begin_steps(
    store: ObjectStore, config: SafeWriterConfig, run_id: str, table_path: str
) -> Program:
    """Read ``v0`` and durably record it before any write step."""
    yield Work("sw:read_version", config.read_version_ms)
    v0 = formats.read_version(store, table_path)
    doc = CheckpointDoc(
        run_id=run_id,
        format=v0.kind.tag,
        version_before=v0.value,
        status=IN_PROGRESS,
        saved_at=iso_timestamp(store.clock.now),
    )
    yield Put("sw:checkpoint", checkpoint_key(config.checkpoint_bucket, run_id), doc.to_json(), config.checkpoint_put_ms)
    return doc, v0


def finish_steps(store: ObjectStore, config: SafeWriterConfig, doc: CheckpointDoc) -> Program:
    done = doc.committed()
    yield Put("sw:checkpoint_committed", checkpoint_key(config.checkpoint_bucket, doc.run_id), done.to_json(), config.checkpoint_put_ms)
    return done


def rollback_steps(
    store: ObjectStore, config: SafeWriterConfig, table_path: str, v0: VersionRef | int, doc: CheckpointDoc
) -> Program:
    """Restore the table to ``v0`` (metadata only), then close the document."""
    if doc.status != IN_PROGRESS:
        raise CheckpointError(f"run {doc.run_id}: rollback needs in_progress, found {doc.status}")
    yield from formats.restore_steps(store, table_path, v0, config.restore_ms)
    rolled_at = iso_timestamp(store.clock.now + config.checkpoint_put_ms)
    closed = doc.rolled_back(rolled_at)
    yield Put("sw:checkpoint_rolled_back", checkpoint_key(config.checkpoint_bucket, doc.run_id), closed.to_json(), config.checkpoint_put_ms)
    if config.audit_log:
        audit.info("rollback run_id=%s table=%s to=%s at=%s", doc.run_id, table_path, int(v0), rolled_at)
    return closed


# -- watchdog -------------------------------------------------------------------


@dataclass
class Watchdog:
    fire_at: int
    fired: bool = False
    cancelled: bool = False
    rolled_back: CheckpointDoc | None = field(default=None, repr=False)


def arm_watchdog(job, config: SafeWriterConfig, rollback_action: Callable[[], Program]) -> Watchdog:
    """Schedule the rollback ``timeout - warn_before`` after the job started.

    ``job`` is a running :class:`commitgap.faultproc.Process`. When the
    watchdog fires it cancels the writer's in-flight I/O, then runs
    ``rollback_action`` in its own actor. The writer stops the watchdog by
    calling :meth:`Process.cancel` with ``"watchdog"``.
    """
    dog = Watchdog(fire_at=job.started_at + config.fire_after_ms)

    def program() -> Program:
        yield WaitUntil("watchdog:armed", dog.fire_at)
        dog.fired = True
        job.event("watchdog_fired")
        job.cancel("writer", reason="watchdog")
        dog.rolled_back = yield from rollback_action()
        job.event("rollback_complete")

    job.spawn("watchdog", program(), priority=1)
    return dog


# -- synchronous API -------------------------------------------------------------


def begin(
    store: ObjectStore,
    checkpoint_bucket: str,
    run_id: str,
    table_format: TableFormat | str,
    table_path: str,
    config: SafeWriterConfig | None = None,
) -> tuple[CheckpointDoc, VersionRef]:
    config = _config(config, checkpoint_bucket)
    kind = TableFormat.parse(table_format)
    actual = formats.detect_format(store, table_path)
    if actual is not kind:
        raise ValueError(f"{table_path} is {actual.value}, not {kind.value}")
    return drive(store, begin_steps(store, config, run_id, table_path))


def finish_success(
    store: ObjectStore,
    checkpoint_bucket: str,
    doc: CheckpointDoc,
    watchdog: Watchdog | None = None,
    config: SafeWriterConfig | None = None,
) -> CheckpointDoc:
    if watchdog is not None:
        if watchdog.fired:
            raise CheckpointError(f"run {doc.run_id}: watchdog already fired")
        watchdog.cancelled = True
    stored = load_checkpoint(store, checkpoint_bucket, doc.run_id)
    if stored is None:
        raise CheckpointError(f"run {doc.run_id}: checkpoint document missing")
    return drive(store, finish_steps(store, _config(config, checkpoint_bucket), stored))


def rollback(
    store: ObjectStore,
    table_path: str,
    table_format: TableFormat | str,
    v0: VersionRef | int,
    doc: CheckpointDoc,
    checkpoint_bucket: str = "checkpoints",
    config: SafeWriterConfig | None = None,
) -> CheckpointDoc:
    TableFormat.parse(table_format)
    return drive(store, rollback_steps(store, _config(config, checkpoint_bucket), table_path, v0, doc))


def _config(config: SafeWriterConfig | None, bucket: str) -> SafeWriterConfig:
    if config is None:
        return SafeWriterConfig(checkpoint_bucket=bucket)
    if config.checkpoint_bucket != bucket:
        return replace(config, checkpoint_bucket=bucket)
    return config


class SafeWriter:
    """Context manager for synchronous (non-simulated-kill) use.

    ::

        with SafeWriter(store, "job-1", "delta", path, "checkpoints") as sw:
            formats.phase1_write_data(store, plan)
            formats.phase2_commit(store, plan)
            sw.success()

    Leaving the block without :meth:`success` restores the table to the
    checkpointed version. The virtual-time watchdog only exists inside
    :func:`commitgap.faultproc.run_job`.
    """

    def __init__(
        self,
        store: ObjectStore,
        run_id: str,
        table_format: TableFormat | str,
        table_path: str,
        checkpoint_bucket: str,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        config: SafeWriterConfig | None = None,
    ) -> None:
        self.store = store
        self.run_id = run_id
        self.table_format = TableFormat.parse(table_format)
        self.table_path = table_path
        self.config = config or SafeWriterConfig(timeout_ms=timeout_ms, checkpoint_bucket=checkpoint_bucket)
        self.doc: CheckpointDoc | None = None
        self.v0: VersionRef | None = None

    def __enter__(self) -> "SafeWriter":
        self.doc, self.v0 = begin(
            self.store, self.config.checkpoint_bucket, self.run_id, self.table_format, self.table_path, self.config
        )
        return self

    def success(self) -> CheckpointDoc:
        assert self.doc is not None, "SafeWriter used outside its with-block"
        self.doc = finish_success(self.store, self.config.checkpoint_bucket, self.doc, config=self.config)
        return self.doc

    def __exit__(self, exc_type, exc, tb) -> bool:
        if self.doc is not None and self.doc.status == IN_PROGRESS:
            self.doc = rollback(
                self.store, self.table_path, self.table_format, self.v0, self.doc,
                self.config.checkpoint_bucket, self.config,
            )
        return False


# -- recovery and audit ------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryAction:
    run_id: str
    action: str  # "restored" | "marked_rolled_back"
    version_before: int
    version_found: int


def _bucket_docs(store: ObjectStore, bucket: str) -> list[tuple[str, bytes]]:
    prefix = bucket.rstrip("/") + "/"
    return [
        (k, store.get(k))
        for k in store.list_prefix(prefix)
        if k.endswith(".json") and "/" not in k[len(prefix):]
    ]


def recover(
    store: ObjectStore,
    checkpoint_bucket: str,
    table_path: str,
    config: SafeWriterConfig | None = None,
) -> list[RecoveryAction]:
    """Close every stale ``in_progress`` document for the table.

    A document whose run moved the table past ``version_before`` gets its
    rollback completed; one whose run never committed is just marked
    rolled back so the audit trail stays intact.
    """
    config = _config(config, checkpoint_bucket)
    actions = []
    for key, raw in _bucket_docs(store, checkpoint_bucket):
        try:
            doc = CheckpointDoc.from_json(raw)
        except (ValueError, KeyError, CheckpointError) as err:
            log.warning("skipping malformed checkpoint %s: %s", key, err)
            continue
        if doc.status != IN_PROGRESS:
            continue
        found = formats.read_version(store, table_path).value
        if found != doc.version_before:
            drive(store, rollback_steps(store, config, table_path, doc.version_before, doc))
            actions.append(RecoveryAction(doc.run_id, "restored", doc.version_before, found))
        else:
            closed = doc.rolled_back(iso_timestamp(store.clock.now))
            store.put(key, closed.to_json())
            actions.append(RecoveryAction(doc.run_id, "marked_rolled_back", doc.version_before, found))
    return actions


def scan_rolled_back(store: ObjectStore, checkpoint_bucket: str) -> list[tuple[str, str]]:
    """``(run_id, rolled_back_at)`` for every rolled-back run, oldest first."""
    found = []
    for key, raw in _bucket_docs(store, checkpoint_bucket):
        try:
            doc = CheckpointDoc.from_json(raw)
        except (ValueError, KeyError, TypeError, CheckpointError) as err:
            log.warning("malformed checkpoint %s: %s", key, err)
            continue
        if doc.status == ROLLED_BACK:
            found.append((doc.run_id, doc.rolled_back_at))
    return sorted(found, key=lambda item: (item[1], item[0]))


def kill_during_rollback_probability(rollback_ms: int = 200, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> float:
    """Chance a uniformly placed kill lands inside the rollback window."""
    return rollback_ms / timeout_ms
