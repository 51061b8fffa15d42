"""In-memory object store with the S3 consistency surface.

Puts are atomic per key and become visible at their completion instant.
A put that is aborted (the writing process died mid-transfer) leaves no
trace in the object map. There is no multi-key primitive of any kind.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .clock import VirtualClock

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StoredObject:
    key: str
    payload: bytes
    put_completed_at: int
    # Logical size in bytes. Data files carry a small descriptor payload but
    # account for the full size of the Parquet file they stand in for.
    size: int


@dataclass(frozen=True)
class OpRecord:
    op: str  # put_begin | put | put_abort | delete
    key: str
    at: int
    payload: bytes | None = None
    size: int = 0


@dataclass(eq=False)
class PendingPut:
    key: str
    payload: bytes
    size: int
    started_at: int
    ends_at: int
    state: str = "in_flight"
    seq: int = field(default=0, repr=False)


def _check_key(key: str) -> None:
    if not key or not isinstance(key, str):
        raise ValueError("object key must be a non-empty string")


class ObjectStore:
    """Per-key atomic blob map on a virtual clock.

    ``put`` starts a transfer at ``clock.now``; the object appears only when
    the transfer completes. Zero-duration puts complete immediately. Callers
    driving time themselves use :meth:`complete` / :meth:`abort`; everyone
    else can call :meth:`settle` to let in-flight puts land.
    """

    def __init__(
        self,
        clock: VirtualClock | None = None,
        *,
        denied_prefixes: Iterable[str] = (),
        op_log_limit: int | None = None,
    ) -> None:
        self.clock = clock if clock is not None else VirtualClock()
        self.objects: dict[str, StoredObject] = {}
        self.op_log: deque[OpRecord] = deque(maxlen=op_log_limit)
        self.denied_prefixes = tuple(denied_prefixes)
        self._pending: list[PendingPut] = []
        self._seq = 0

    # -- writes -----------------------------------------------------------

    def put(
        self, key: str, payload: bytes, duration_ms: int = 0, *, size: int | None = None
    ) -> PendingPut:
        _check_key(key)
        if duration_ms < 0:
            raise ValueError("duration_ms must be >= 0")
        if any(key.startswith(p) for p in self.denied_prefixes):
            raise PermissionError(f"AccessDenied: PutObject on {key!r}")
        payload = bytes(payload)
        now = self.clock.now
        self._seq += 1
        pending = PendingPut(
            key=key,
            payload=payload,
            size=len(payload) if size is None else int(size),
            started_at=now,
            ends_at=now + int(duration_ms),
            seq=self._seq,
        )
        self.op_log.append(OpRecord("put_begin", key, now))
        if duration_ms == 0:
            self._land(pending, now)
        else:
            self._pending.append(pending)
        return pending

    def complete(self, pending: PendingPut) -> None:
        """Land an in-flight put at its scheduled end instant."""
        if pending.state != "in_flight":
            raise RuntimeError(f"put of {pending.key!r} is already {pending.state}")
        if self.clock.now < pending.ends_at:
            self.clock.advance_to(pending.ends_at)
        self._pending.remove(pending)
        self._land(pending, pending.ends_at)

    def abort(self, pending: PendingPut) -> None:
        """Drop an in-flight put; the store is left exactly as it was."""
        if pending.state != "in_flight":
            return
        self._pending.remove(pending)
        pending.state = "aborted"
        self.op_log.append(OpRecord("put_abort", pending.key, self.clock.now))

    def abort_all(self) -> list[PendingPut]:
        dropped = list(self._pending)
        for p in dropped:
            self.abort(p)
        return dropped

    def settle(self, until: int | None = None) -> None:
        """Advance the clock, landing every in-flight put that ends by ``until``."""
        due = sorted(
            (p for p in self._pending if until is None or p.ends_at <= until),
            key=lambda p: (p.ends_at, p.seq),
        )
        for p in due:
            self.complete(p)
        if until is not None and until > self.clock.now:
            self.clock.advance_to(until)

    def delete(self, key: str) -> None:
        _check_key(key)
        if any(key.startswith(p) for p in self.denied_prefixes):
            raise PermissionError(f"AccessDenied: DeleteObject on {key!r}")
        self.objects.pop(key, None)
        self.op_log.append(OpRecord("delete", key, self.clock.now))

    def _land(self, pending: PendingPut, at: int) -> None:
        pending.state = "completed"
        self.objects[pending.key] = StoredObject(pending.key, pending.payload, at, pending.size)
        self.op_log.append(OpRecord("put", pending.key, at, pending.payload, pending.size))

    # -- reads ------------------------------------------------------------

    def get(self, key: str) -> bytes | None:
        obj = self.objects.get(key)
        return None if obj is None else obj.payload

    def stat(self, key: str) -> StoredObject | None:
        return self.objects.get(key)

    def exists(self, key: str) -> bool:
        return key in self.objects

    def list_prefix(self, prefix: str = "") -> list[str]:
        return sorted(k for k in self.objects if k.startswith(prefix))

    def in_flight(self) -> list[PendingPut]:
        return list(self._pending)

    def snapshot(self) -> dict[str, bytes]:
        return {k: o.payload for k, o in self.objects.items()}

    def total_size(self, keys: Iterable[str]) -> int:
        return sum(self.objects[k].size for k in keys if k in self.objects)

    # -- persistence ------------------------------------------------------

    def dump(self, directory: str | Path) -> int:
        """Write one file per object under ``directory``; returns the count."""
        root = Path(directory)
        for key, obj in self.objects.items():
            path = root / key
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(obj.payload)
        return len(self.objects)

    @classmethod
    def load(cls, directory: str | Path, clock: VirtualClock | None = None) -> "ObjectStore":
        """Rebuild a store from a :meth:`dump` tree (sizes become payload lengths)."""
        store = cls(clock)
        root = Path(directory)
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            key = path.relative_to(root).as_posix()
            store.put(key, path.read_bytes())
        return store

    def __repr__(self) -> str:
        return (
            f"ObjectStore(objects={len(self.objects)}, in_flight={len(self._pending)}, "
            f"now={self.clock.now})"
        )


def replay(op_log: Iterable[OpRecord], until: int) -> dict[str, bytes]:
    """Rebuild the visible key -> payload map at instant ``until`` from a log."""
    state: dict[str, bytes] = {}
    for rec in op_log:
        if rec.at > until:
            continue
        if rec.op == "put":
            state[rec.key] = rec.payload  # type: ignore[assignment]
        elif rec.op == "delete":
            state.pop(rec.key, None)
    return state
