"""Log-append table protocol (Delta-style).

A table is a directory of part-files plus ``_delta_log/`` holding one JSON
entry per committed version. A write is visible once its log entry lands.
"""

from __future__ import annotations

import json

from ..steps import Mark, Program, Put, Work
from ..store import ObjectStore
from .common import (
    ConflictError,
    TableExistsError,
    TableFormat,
    TableNotFoundError,
    UnknownVersionError,
    VersionRef,
    WritePlan,
    dumps,
)

KIND = TableFormat.LOG_APPEND
LOG_DIR = "_delta_log"


def log_prefix(table: str) -> str:
    return f"{table}/{LOG_DIR}/"


def log_key(table: str, version: int) -> str:
    return f"{table}/{LOG_DIR}/{version:020d}.json"


def data_prefix(table: str) -> str:
    return f"{table}/"


def is_table(store: ObjectStore, table: str) -> bool:
    return store.exists(log_key(table, 0))


def _require(store: ObjectStore, table: str) -> None:
    if not is_table(store, table):
        raise TableNotFoundError(table)


def versions(store: ObjectStore, table: str) -> list[int]:
    out = []
    for key in store.list_prefix(log_prefix(table)):
        name = key.rsplit("/", 1)[1]
        if name.endswith(".json") and name[:-5].isdigit():
            out.append(int(name[:-5]))
    return out


def read_entry(store: ObjectStore, table: str, version: int) -> dict:
    raw = store.get(log_key(table, version))
    if raw is None:
        raise UnknownVersionError(f"{table}@{version}")
    return json.loads(raw)


def latest_version(store: ObjectStore, table: str) -> int:
    _require(store, table)
    return versions(store, table)[-1]


def file_set(store: ObjectStore, table: str, version: int) -> list[str]:
    """Data files visible at ``version``, replaying the log from 0."""
    files: list[str] = []
    for v in range(version + 1):
        entry = read_entry(store, table, v)
        if entry.get("restore_of") is not None:
            files = list(entry["added_files"])
        else:
            files.extend(entry["added_files"])
    return files


def _entry(version: int, added: list[str], restore_of: int | None, at: int) -> bytes:
    return dumps(
        {"version": version, "added_files": added, "restore_of": restore_of, "committed_at": at}
    )


def create(store: ObjectStore, table: str) -> Program:
    if is_table(store, table):
        raise TableExistsError(table)
    yield Put("create:log_entry", log_key(table, 0), _entry(0, [], None, store.clock.now), 0)
    return VersionRef(KIND, 0)


def commit(store: ObjectStore, plan: WritePlan, check_conflicts: bool = True) -> Program:
    table = plan.target_table
    _require(store, table)
    total = plan.phase_durations.get("commit", 0)
    prepare = total // 2
    yield Work("commit:prepare", prepare)
    current = latest_version(store, table)
    if check_conflicts and plan.base_version is not None and current != plan.base_version.value:
        raise ConflictError(
            f"{table}: planned against version {plan.base_version.value}, found {current}"
        )
    version = current + 1
    put_ms = total - prepare
    landed_at = store.clock.now + put_ms
    added = [f.key for f in plan.files]
    yield Put("commit:log_entry", log_key(table, version), _entry(version, added, None, landed_at), put_ms)
    yield Mark("commit_complete")
    return VersionRef(KIND, version)


def restore(store: ObjectStore, table: str, v0: int, duration: int = 0) -> Program:
    _require(store, table)
    known = versions(store, table)
    if v0 not in known:
        raise UnknownVersionError(f"{table}@{v0}")
    current = known[-1]
    if current == v0:
        yield Work("restore:noop", duration)
        return VersionRef(KIND, current)
    target_files = file_set(store, table, v0)
    version = current + 1
    landed_at = store.clock.now + duration
    yield Put("restore:log_entry", log_key(table, version), _entry(version, target_files, v0, landed_at), duration)
    return VersionRef(KIND, version)


def referenced_files(store: ObjectStore, table: str) -> set[str]:
    refs: set[str] = set()
    for v in versions(store, table):
        refs.update(read_entry(store, table, v)["added_files"])
    return refs


def data_files(store: ObjectStore, table: str) -> list[str]:
    prefix = data_prefix(table)
    return [
        k for k in store.list_prefix(prefix)
        if k.endswith(".parquet") and "/" not in k[len(prefix):]
    ]
