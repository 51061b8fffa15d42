"""Snapshot-pointer table protocol (Iceberg-style).

Commit chain: data files -> manifest -> manifest list (the snapshot) ->
table metadata -> ``version-hint.text``. Nothing is visible until the hint
names the new metadata object; every earlier put in the chain is invisible.
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
    deterministic_uuid,
    dumps,
    split_evenly,
)

KIND = TableFormat.SNAPSHOT_POINTER
FIRST_SNAPSHOT = 1


def hint_key(table: str) -> str:
    return f"{table}/metadata/version-hint.text"


def metadata_key(table: str, n: int) -> str:
    return f"{table}/metadata/v{n}.metadata.json"


def data_prefix(table: str) -> str:
    return f"{table}/data/"


def is_table(store: ObjectStore, table: str) -> bool:
    return store.exists(hint_key(table))


def current_metadata(store: ObjectStore, table: str) -> tuple[int, dict]:
    raw = store.get(hint_key(table))
    if raw is None:
        raise TableNotFoundError(table)
    n = int(raw.decode().strip())
    meta = store.get(metadata_key(table, n))
    if meta is None:
        raise TableNotFoundError(f"{table}: hint names missing metadata v{n}")
    return n, json.loads(meta)


def current_snapshot(store: ObjectStore, table: str) -> int:
    return current_metadata(store, table)[1]["current_snapshot_id"]


def snapshot_ids(store: ObjectStore, table: str) -> list[int]:
    return [s["snapshot_id"] for s in current_metadata(store, table)[1]["snapshots"]]


def _snapshot_entry(meta: dict, snapshot_id: int) -> dict:
    for s in meta["snapshots"]:
        if s["snapshot_id"] == snapshot_id:
            return s
    raise UnknownVersionError(str(snapshot_id))


def _manifests(store: ObjectStore, manifest_list_key: str) -> list[str]:
    return json.loads(store.get(manifest_list_key))["manifests"]


def file_set(store: ObjectStore, table: str, snapshot_id: int) -> list[str]:
    _, meta = current_metadata(store, table)
    entry = _snapshot_entry(meta, snapshot_id)
    files: list[str] = []
    for m in _manifests(store, entry["manifest_list"]):
        files.extend(json.loads(store.get(m))["data_files"])
    return files


def _metadata_doc(n: int, current: int, snapshots: list[dict], at: int) -> bytes:
    return dumps(
        {
            "format-version": 2,
            "metadata_version": n,
            "current_snapshot_id": current,
            "snapshots": snapshots,
            "last_updated_ms": at,
        }
    )


def create(store: ObjectStore, table: str) -> Program:
    if is_table(store, table):
        raise TableExistsError(table)
    now = store.clock.now
    mlist = f"{table}/metadata/snap-{FIRST_SNAPSHOT}-{deterministic_uuid(table, 'create')}.avro"
    yield Put("create:manifest_list", mlist, dumps({"snapshot_id": FIRST_SNAPSHOT, "manifests": []}), 0)
    snap = {"snapshot_id": FIRST_SNAPSHOT, "parent_id": None, "manifest_list": mlist, "committed_at": now}
    yield Put("create:metadata", metadata_key(table, 1), _metadata_doc(1, FIRST_SNAPSHOT, [snap], now), 0)
    yield Put("create:version_hint", hint_key(table), b"1", 0)
    return VersionRef(KIND, FIRST_SNAPSHOT)


def commit(store: ObjectStore, plan: WritePlan, check_conflicts: bool = False) -> Program:
    table = plan.target_table
    n, meta = current_metadata(store, table)
    d_manifest, d_list, d_meta, d_hint = split_evenly(plan.phase_durations.get("commit", 0), 4)
    tag = deterministic_uuid(plan.run_id, plan.attempt)
    new_id = max(s["snapshot_id"] for s in meta["snapshots"]) + 1
    parent = meta["current_snapshot_id"]

    manifest = f"{table}/metadata/{tag}-m0.avro"
    yield Put("commit:manifest", manifest, dumps({"data_files": [f.key for f in plan.files]}), d_manifest)

    mlist = f"{table}/metadata/snap-{new_id}-{tag}.avro"
    parent_manifests = _manifests(store, _snapshot_entry(meta, parent)["manifest_list"])
    yield Put(
        "commit:manifest_list",
        mlist,
        dumps({"snapshot_id": new_id, "manifests": parent_manifests + [manifest]}),
        d_list,
    )

    landed_at = store.clock.now + d_meta + d_hint
    snap = {"snapshot_id": new_id, "parent_id": parent, "manifest_list": mlist, "committed_at": landed_at}
    yield Put(
        "commit:metadata",
        metadata_key(table, n + 1),
        _metadata_doc(n + 1, new_id, meta["snapshots"] + [snap], landed_at),
        d_meta,
    )

    if check_conflicts:
        now_n, now_meta = current_metadata(store, table)
        base = plan.base_version.value if plan.base_version is not None else parent
        if now_n != n or now_meta["current_snapshot_id"] != base:
            raise ConflictError(f"{table}: pointer moved from v{n} to v{now_n} during commit")

    yield Put("commit:version_hint", hint_key(table), str(n + 1).encode(), d_hint)
    yield Mark("commit_complete")
    return VersionRef(KIND, new_id)


def restore(store: ObjectStore, table: str, v0: int, duration: int = 0) -> Program:
    n, meta = current_metadata(store, table)
    _snapshot_entry(meta, v0)
    if meta["current_snapshot_id"] == v0:
        yield Work("restore:noop", duration)
        return VersionRef(KIND, v0)
    d_meta, d_hint = split_evenly(duration, 2)
    yield Put(
        "restore:metadata",
        metadata_key(table, n + 1),
        _metadata_doc(n + 1, v0, meta["snapshots"], store.clock.now + duration),
        d_meta,
    )
    yield Put("restore:version_hint", hint_key(table), str(n + 1).encode(), d_hint)
    return VersionRef(KIND, v0)


def referenced_files(store: ObjectStore, table: str) -> set[str]:
    refs: set[str] = set()
    for sid in snapshot_ids(store, table):
        refs.update(file_set(store, table, sid))
    return refs


def data_files(store: ObjectStore, table: str) -> list[str]:
    return [k for k in store.list_prefix(data_prefix(table)) if k.endswith(".parquet")]
