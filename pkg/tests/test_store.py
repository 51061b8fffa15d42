from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commitgap.clock import VirtualClock, iso_timestamp
from commitgap.store import ObjectStore, replay


def test_put_invisible_until_complete():
    store = ObjectStore()
    pending = store.put("a/b", b"x", 50)
    assert store.get("a/b") is None
    assert store.in_flight() == [pending]
    store.complete(pending)
    assert store.get("a/b") == b"x"
    assert store.clock.now == 50
    assert store.stat("a/b").put_completed_at == 50


def test_aborted_put_leaves_nothing():
    store = ObjectStore()
    store.put("k", b"old")
    pending = store.put("k", b"new", 10)
    store.abort(pending)
    assert store.get("k") == b"old"
    assert pending.state == "aborted"
    assert store.in_flight() == []


def test_zero_duration_lands_immediately():
    store = ObjectStore(VirtualClock(5))
    store.put("k", b"v")
    assert store.stat("k").put_completed_at == 5


def test_delete_is_idempotent_and_logged():
    store = ObjectStore()
    store.put("k", b"v")
    store.delete("k")
    store.delete("k")
    assert not store.exists("k")
    assert [r.op for r in store.op_log].count("delete") == 2


def test_denied_prefix():
    store = ObjectStore(denied_prefixes=("locked/",))
    with pytest.raises(PermissionError):
        store.put("locked/x", b"")
    store.put("open/x", b"")


def test_list_prefix_sorted_and_sizes():
    store = ObjectStore()
    store.put("t/b", b"22", size=100)
    store.put("t/a", b"1")
    store.put("u/a", b"1")
    assert store.list_prefix("t/") == ["t/a", "t/b"]
    assert store.total_size(["t/a", "t/b"]) == 101


def test_settle_lands_due_puts_in_order():
    store = ObjectStore()
    store.put("late", b"2", 30)
    store.put("early", b"1", 10)
    store.settle(until=20)
    assert store.exists("early") and not store.exists("late")
    assert store.clock.now == 20
    store.settle()
    assert store.exists("late")


def test_clock_is_monotone():
    clock = VirtualClock(10)
    with pytest.raises(ValueError):
        clock.advance_to(5)
    assert iso_timestamp(0) == "2026-03-22T00:00:00Z"


def test_dump_and_load_round_trip(tmp_path):
    store = ObjectStore()
    store.put("a/b.json", b"{}")
    store.put("c", b"xyz")
    assert store.dump(tmp_path) == 2
    loaded = ObjectStore.load(tmp_path)
    assert loaded.snapshot() == store.snapshot()


ops = st.lists(
    st.tuples(
        st.sampled_from(["put", "delete", "abort"]),
        st.sampled_from(["a", "b", "c"]),
        st.integers(0, 20),
        st.binary(max_size=3),
    ),
    max_size=25,
)


@settings(max_examples=200, deadline=None)
@given(ops)
def test_replay_matches_live_state_at_every_instant(seq):
    store = ObjectStore()
    history = []
    for op, key, duration, payload in seq:
        if op == "delete":
            store.delete(key)
        else:
            pending = store.put(key, payload, duration)
            if op == "abort":
                store.abort(pending)
            elif pending.state == "in_flight":
                store.complete(pending)
        history.append((store.clock.now, store.snapshot()))
    assert replay(store.op_log, store.clock.now) == store.snapshot()
    # The log rebuilds the state seen after the last op at each instant.
    last_at = {}
    for t, snap in history:
        last_at[t] = snap
    for t, snap in last_at.items():
        assert replay(store.op_log, t) == snap
