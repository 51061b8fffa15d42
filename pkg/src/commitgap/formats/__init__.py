"""Table-format commit protocols over the object store.

Every mutating operation exists in two shapes: a step program (``*_steps``)
that the process model can interrupt, and a synchronous wrapper that runs
the program to completion on the store's clock.
"""

from __future__ import annotations

from typing import Sequence

from ..steps import Mark, Program, Put, Work, drive
from ..store import ObjectStore
from . import log_append, snapshot_pointer
from .common import (
    ConflictError,
    DataFile,
    TableError,
    TableExistsError,
    TableFormat,
    TableNotFoundError,
    UnknownVersionError,
    VersionRef,
    WritePlan,
    part_file_name,
    read_data_file,
    split_evenly,
)

_IMPL = {
    TableFormat.LOG_APPEND: log_append,
    TableFormat.SNAPSHOT_POINTER: snapshot_pointer,
}

__all__ = [
    "ConflictError",
    "DataFile",
    "TableError",
    "TableExistsError",
    "TableFormat",
    "TableNotFoundError",
    "UnknownVersionError",
    "VersionRef",
    "WritePlan",
    "commit_steps",
    "committed_versions",
    "create_table",
    "data_steps",
    "detect_format",
    "file_set",
    "find_orphans",
    "make_plan",
    "orphan_bytes",
    "phase1_write_data",
    "phase2_commit",
    "read_version",
    "restore",
    "restore_steps",
    "row_count_at",
    "vacuum",
    "visible_row_count",
]


def detect_format(store: ObjectStore, path: str) -> TableFormat:
    for kind, impl in _IMPL.items():
        if impl.is_table(store, path):
            return kind
    raise TableNotFoundError(path)


def create_table(store: ObjectStore, path: str, fmt: TableFormat | str) -> VersionRef:
    kind = TableFormat.parse(fmt)
    for impl in _IMPL.values():
        if impl.is_table(store, path):
            raise TableExistsError(path)
    return drive(store, _IMPL[kind].create(store, path))


def read_version(store: ObjectStore, path: str) -> VersionRef:
    kind = detect_format(store, path)
    if kind is TableFormat.LOG_APPEND:
        return VersionRef(kind, log_append.latest_version(store, path))
    return VersionRef(kind, snapshot_pointer.current_snapshot(store, path))


def committed_versions(store: ObjectStore, path: str) -> list[int]:
    kind = detect_format(store, path)
    if kind is TableFormat.LOG_APPEND:
        return log_append.versions(store, path)
    return snapshot_pointer.snapshot_ids(store, path)


def file_set(store: ObjectStore, path: str, version: int | VersionRef | None = None) -> list[str]:
    kind = detect_format(store, path)
    v = read_version(store, path).value if version is None else int(version)
    return _IMPL[kind].file_set(store, path, v)


def row_count_at(store: ObjectStore, path: str, version: int | VersionRef) -> int:
    return sum(read_data_file(store, k).row_count for k in file_set(store, path, version))


def visible_row_count(store: ObjectStore, path: str) -> int:
    return row_count_at(store, path, read_version(store, path))


def find_orphans(store: ObjectStore, path: str) -> list[str]:
    impl = _IMPL[detect_format(store, path)]
    refs = impl.referenced_files(store, path)
    return [k for k in impl.data_files(store, path) if k not in refs]


def orphan_bytes(store: ObjectStore, path: str) -> int:
    return sum(read_data_file(store, k).byte_size for k in find_orphans(store, path))


def vacuum(store: ObjectStore, path: str) -> int:
    orphans = find_orphans(store, path)
    for key in orphans:
        store.delete(key)
    return len(orphans)


# -- write path -------------------------------------------------------------


def data_dir(store: ObjectStore, path: str) -> str:
    kind = detect_format(store, path)
    return _IMPL[kind].data_prefix(path)


def make_plan(
    store: ObjectStore,
    path: str,
    run_id: str,
    partitions: Sequence[tuple[int, int, str]],
    phase_durations: dict[str, int],
    *,
    attempt: int = 0,
    check_conflicts: bool | None = None,
) -> WritePlan:
    """Build a plan from ``(row_count, byte_size, digest)`` partitions.

    The table version is read now; commits compare against it.
    """
    prefix = data_dir(store, path)
    files = [
        DataFile(prefix + part_file_name(run_id, i, attempt), rows, size, digest)
        for i, (rows, size, digest) in enumerate(partitions)
    ]
    return WritePlan(
        run_id=run_id,
        files=files,
        target_table=path,
        phase_durations=dict(phase_durations),
        base_version=read_version(store, path),
        attempt=attempt,
        check_conflicts=check_conflicts,
    )


def data_steps(store: ObjectStore, plan: WritePlan) -> Program:
    """Phase 1: startup work then one put per part-file. Returns durable keys."""
    detect_format(store, plan.target_table)
    yield Work("startup", plan.phase_durations.get("startup", 0))
    per_file = split_evenly(plan.phase_durations.get("data", 0), len(plan.files))
    written = []
    for f, ms in zip(plan.files, per_file):
        yield Put(f"data:{f.key.rsplit('/', 1)[1]}", f.key, f.payload(), ms, size=f.byte_size)
        written.append(f.key)
    yield Mark("data_complete")
    return written


def commit_steps(store: ObjectStore, plan: WritePlan, check_conflicts: bool | None = None) -> Program:
    """Phase 2: format-specific metadata commit. Returns the new version."""
    kind = detect_format(store, plan.target_table)
    if check_conflicts is None:
        check_conflicts = plan.check_conflicts
    if check_conflicts is None:
        check_conflicts = kind is TableFormat.LOG_APPEND
    return (yield from _IMPL[kind].commit(store, plan, check_conflicts))


def restore_steps(store: ObjectStore, path: str, v0: int | VersionRef, duration: int = 0) -> Program:
    kind = detect_format(store, path)
    return (yield from _IMPL[kind].restore(store, path, int(v0), duration))


def phase1_write_data(store: ObjectStore, plan: WritePlan) -> list[str]:
    return drive(store, data_steps(store, plan))


def phase2_commit(store: ObjectStore, plan: WritePlan, check_conflicts: bool | None = None) -> VersionRef:
    return drive(store, commit_steps(store, plan, check_conflicts))


def restore(store: ObjectStore, path: str, v0: int | VersionRef, duration: int = 0) -> VersionRef:
    return drive(store, restore_steps(store, path, v0, duration))


def referenced_files(store: ObjectStore, path: str) -> set[str]:
    return _IMPL[detect_format(store, path)].referenced_files(store, path)


def data_files(store: ObjectStore, path: str) -> list[str]:
    return _IMPL[detect_format(store, path)].data_files(store, path)

