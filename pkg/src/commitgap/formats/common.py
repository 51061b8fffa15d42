from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from enum import Enum

from ..store import ObjectStore

# Fixed namespace so part-file and manifest names are reproducible.
_NAMESPACE = uuid.UUID("6f1c7a52-3d0e-4b8e-9a57-2c1f0e6b9d41")


class TableFormat(str, Enum):
    LOG_APPEND = "log_append"
    SNAPSHOT_POINTER = "snapshot_pointer"

    @property
    def tag(self) -> str:
        """Short name written into checkpoint documents."""
        return "delta" if self is TableFormat.LOG_APPEND else "iceberg"

    @classmethod
    def parse(cls, value: "str | TableFormat") -> "TableFormat":
        if isinstance(value, TableFormat):
            return value
        aliases = {"delta": cls.LOG_APPEND, "iceberg": cls.SNAPSHOT_POINTER}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown table format {value!r}") from None


@dataclass(frozen=True, order=True)
class VersionRef:
    kind: TableFormat
    # log_append: commit version >= 0; snapshot_pointer: snapshot id >= 1
    value: int

    def __int__(self) -> int:
        return self.value


@dataclass(frozen=True)
class DataFile:
    key: str
    row_count: int
    byte_size: int
    digest: str = ""

    def payload(self) -> bytes:
        return json.dumps(
            {"rows": self.row_count, "bytes": self.byte_size, "digest": self.digest},
            sort_keys=True,
        ).encode()


@dataclass
class WritePlan:
    run_id: str
    files: list[DataFile]
    target_table: str
    phase_durations: dict[str, int]
    # Table version observed when the write was planned (optimistic check).
    base_version: VersionRef | None = None
    attempt: int = 0
    check_conflicts: bool | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total_rows(self) -> int:
        return sum(f.row_count for f in self.files)

    @property
    def total_bytes(self) -> int:
        return sum(f.byte_size for f in self.files)


class TableError(Exception):
    pass


class TableExistsError(TableError):
    pass


class TableNotFoundError(TableError):
    pass


class UnknownVersionError(TableError):
    pass


class ConflictError(TableError):
    """Concurrent commit detected; the analogue of ConcurrentModificationException."""


def deterministic_uuid(*parts: object) -> str:
    return str(uuid.uuid5(_NAMESPACE, ":".join(str(p) for p in parts)))


def part_file_name(run_id: str, index: int, attempt: int = 0) -> str:
    return f"part-{index:05d}-{deterministic_uuid(run_id, attempt, index)}.snappy.parquet"


def read_data_file(store: ObjectStore, key: str) -> DataFile:
    raw = store.get(key)
    if raw is None:
        raise KeyError(key)
    meta = json.loads(raw)
    return DataFile(key, int(meta["rows"]), int(meta["bytes"]), meta.get("digest", ""))


def dumps(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def split_evenly(total: int, parts: int) -> list[int]:
    """Integer split whose pieces sum exactly to ``total``."""
    if parts <= 0:
        return []
    base, rem = divmod(int(total), parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


# Spark-style output split: one part-file per this many bytes of input.
TARGET_FILE_BYTES = 16 * 2**20


def partition_layout(rows: int, nbytes: int, target: int = TARGET_FILE_BYTES) -> list[tuple[int, int]]:
    """``(row_count, byte_size)`` per part-file for a write of the given size."""
    n = max(1, -(-int(nbytes) // target))
    return list(zip(split_evenly(rows, n), split_evenly(nbytes, n)))
