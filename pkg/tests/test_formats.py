from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commitgap import formats
from commitgap.formats import (
    ConflictError,
    TableExistsError,
    TableFormat,
    TableNotFoundError,
    UnknownVersionError,
    log_append,
    snapshot_pointer,
)
from commitgap.formats.common import part_file_name, partition_layout, split_evenly
from commitgap.store import ObjectStore

FORMATS = [TableFormat.LOG_APPEND, TableFormat.SNAPSHOT_POINTER]
DUR = {"startup": 10, "data": 20, "commit": 40}


def _table(fmt):
    store = ObjectStore()
    formats.create_table(store, "t", fmt)
    return store


def _write(store, run_id, rows=10, parts=1):
    plan = formats.make_plan(store, "t", run_id, [(rows, rows * 10, f"{run_id}:{i}") for i in range(parts)], DUR)
    formats.phase1_write_data(store, plan)
    return plan, formats.phase2_commit(store, plan)


def test_format_aliases():
    assert TableFormat.parse("delta") is TableFormat.LOG_APPEND
    assert TableFormat.parse("iceberg") is TableFormat.SNAPSHOT_POINTER
    assert TableFormat.LOG_APPEND.tag == "delta"
    with pytest.raises(ValueError):
        TableFormat.parse("hudi")


@pytest.mark.parametrize("fmt", FORMATS)
def test_create_twice_rejected(fmt):
    store = _table(fmt)
    for other in FORMATS:
        with pytest.raises(TableExistsError):
            formats.create_table(store, "t", other)
    with pytest.raises(TableNotFoundError):
        formats.read_version(store, "missing")


def test_initial_versions():
    assert formats.read_version(_table(FORMATS[0]), "t").value == 0
    assert formats.read_version(_table(FORMATS[1]), "t").value == 1


@pytest.mark.parametrize("fmt", FORMATS)
def test_phase1_alone_leaves_orphans(fmt):
    store = _table(fmt)
    plan = formats.make_plan(store, "t", "r", [(5, 50, "d")], DUR)
    keys = formats.phase1_write_data(store, plan)
    assert formats.find_orphans(store, "t") == keys
    assert formats.visible_row_count(store, "t") == 0
    assert formats.orphan_bytes(store, "t") == 50
    assert formats.vacuum(store, "t") == 1
    assert formats.find_orphans(store, "t") == []


@pytest.mark.parametrize("fmt", FORMATS)
def test_commit_makes_rows_visible(fmt):
    store = _table(fmt)
    _write(store, "a", rows=7)
    _, v = _write(store, "b", rows=5)
    assert formats.visible_row_count(store, "t") == 12
    assert formats.read_version(store, "t") == v
    assert formats.find_orphans(store, "t") == []


@pytest.mark.parametrize("fmt", FORMATS)
def test_restore_is_metadata_only(fmt):
    store = _table(fmt)
    v0 = formats.read_version(store, "t")
    _write(store, "a", rows=7)
    data_before = set(formats.data_files(store, "t"))
    formats.restore(store, "t", v0)
    assert formats.visible_row_count(store, "t") == 0
    assert set(formats.data_files(store, "t")) == data_before
    assert formats.file_set(store, "t") == []


@pytest.mark.parametrize("fmt", FORMATS)
def test_restore_unknown_version(fmt):
    store = _table(fmt)
    with pytest.raises(UnknownVersionError):
        formats.restore(store, "t", 99)


def test_log_append_restore_entry_shape():
    store = _table(TableFormat.LOG_APPEND)
    _write(store, "a")
    formats.restore(store, "t", 0)
    entry = log_append.read_entry(store, "t", 2)
    assert entry["restore_of"] == 0 and entry["added_files"] == []
    assert store.get(log_append.log_key("t", 2)) is not None
    assert log_append.log_key("t", 2).endswith("_delta_log/00000000000000000002.json")


def test_snapshot_pointer_hint_is_decimal_metadata_version():
    store = _table(TableFormat.SNAPSHOT_POINTER)
    _write(store, "a")
    assert store.get(snapshot_pointer.hint_key("t")) == b"2"
    n, meta = snapshot_pointer.current_metadata(store, "t")
    assert n == 2 and meta["current_snapshot_id"] == 2


@pytest.mark.parametrize("fmt", FORMATS)
def test_conflict_detected_when_base_moved(fmt):
    store = _table(fmt)
    stale = formats.make_plan(store, "t", "b", [(1, 1, "")], DUR)
    _write(store, "a")
    formats.phase1_write_data(store, stale)
    with pytest.raises(ConflictError):
        formats.phase2_commit(store, stale, check_conflicts=True)


def test_part_files_distinct_per_attempt():
    assert part_file_name("r", 0, 0) != part_file_name("r", 0, 1)
    assert part_file_name("r", 3).startswith("part-00003-")


@given(st.integers(0, 10**6), st.integers(1, 50))
def test_split_evenly_sums(total, parts):
    pieces = split_evenly(total, parts)
    assert sum(pieces) == total and max(pieces) - min(pieces) <= 1


def test_partition_layout_counts():
    assert len(partition_layout(22_248, round(3.8 * 2**20))) == 1
    assert len(partition_layout(500_000, round(47.9 * 2**20))) == 3


# Random commit/restore histories checked against a plain list-of-sets model.
history = st.lists(st.one_of(st.tuples(st.just("write"), st.integers(1, 3)), st.tuples(st.just("restore"), st.integers(0, 10))), max_size=12)


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(FORMATS), history)
def test_file_sets_match_model(fmt, ops):
    store = _table(fmt)
    model: dict[int, frozenset] = {formats.read_version(store, "t").value: frozenset()}
    current = next(iter(model))
    for i, (op, arg) in enumerate(ops):
        if op == "write":
            plan, v = _write(store, f"w{i}", parts=arg)
            model[v.value] = model[current] | {f.key for f in plan.files}
            current = v.value
        else:
            target = sorted(model)[arg % len(model)]
            v = formats.restore(store, "t", target)
            if fmt is TableFormat.LOG_APPEND:
                new = formats.read_version(store, "t").value
                model[new] = model[target]
                current = new
            else:
                current = target
        assert frozenset(formats.file_set(store, "t")) == model[current]
    for version, files in model.items():
        assert frozenset(formats.file_set(store, "t", version)) == files
    assert formats.find_orphans(store, "t") == []
    referenced = set().union(*model.values())
    assert set(formats.data_files(store, "t")) == referenced
    json.dumps(formats.committed_versions(store, "t"))
