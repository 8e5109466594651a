import random

import pytest

from iconfluence.state import (
    D0,
    AbortIf,
    CascadeDelete,
    CollectionOp,
    CounterOp,
    DatabaseState,
    Delete,
    IdentityCollision,
    Insert,
    MissingItem,
    Read,
    ReplicaState,
    Schema,
    Update,
    Version,
    apply_transaction,
    merge,
    transaction,
    visible_state,
)
from iconfluence.invariants import attribute_inequality, checker

from conftest import random_subset_state


def row(item, writer, ts, **fields):
    return Version.make(item, writer, 0, "r0", ts, fields)


class TestMergeAlgebra:
    def test_union_semantics(self):
        a = DatabaseState.of([row("x:a", "w1", 1, v=1)])
        b = DatabaseState.of([row("x:b", "w2", 1, v=3)])
        merged = merge(a, b)
        assert merged.versions == a.versions | b.versions

    def test_identity_and_idempotence(self):
        s = DatabaseState.of([row("x:a", "w1", 1, v=1), row("y:a", "w2", 2, v=2)])
        assert merge(D0, s) == s
        assert merge(s, D0) == s
        assert merge(s, s) == s

    def test_algebra_over_random_states(self, pool):
        rng = random.Random(42)
        for _ in range(500):
            a = random_subset_state(rng, pool)
            b = random_subset_state(rng, pool)
            c = random_subset_state(rng, pool)
            assert merge(a, b) == merge(b, a)
            assert merge(a, merge(b, c)) == merge(merge(a, b), c)
            assert merge(a, a) == a
            assert merge(D0, a) == a
            assert a.versions <= merge(a, b).versions  # monotone growth

    def test_conflicting_identity_rejected(self):
        a = DatabaseState.of([row("x:a", "w1", 1, v=1)])
        b = DatabaseState.of([row("x:a", "w1", 2, v=9)])
        with pytest.raises(IdentityCollision):
            merge(a, b)


class TestVisibleState:
    def test_last_writer_wins(self):
        s = DatabaseState.of([row("x:a", "w1", 1, v=1), row("x:a", "w2", 2, v=2)])
        assert visible_state(s).row("x:a") == {"v": 2}

    def test_ts_tie_broken_by_replica(self):
        a = Version.make("x:a", "w1", 0, "rA", 5, {"v": 1})
        b = Version.make("x:a", "w2", 0, "rB", 5, {"v": 2})
        view = visible_state(DatabaseState.of([a, b]))
        assert view.row("x:a") == {"v": 2}  # rB > rA

    def test_tombstone_suppresses_item_forever(self):
        from iconfluence.state import tombstone
        s = DatabaseState.of([
            row("x:a", "w1", 1, v=1),
            tombstone("x:a", "w2", 0, "r0", 2),
            row("x:a", "w3", 3, v=9),  # later write does not resurrect
        ])
        view = visible_state(s)
        assert view.row("x:a") is None
        assert "x:a" in view.tombstoned

    def test_empty_state_empty_view(self):
        view = visible_state(D0)
        assert view.rows == {} and view.counters == {} and view.collections == {}


NOT_TWO = [attribute_inequality("x", "v", 2)]


def _write_txn(value, name="t"):
    return transaction(name, f"w.{name}.{value}", "r0",
                       [Insert.make("x:a", {"v": value})])


class TestApplyTransaction:
    def test_commit_when_valid(self):
        rep = ReplicaState("r0")
        outcome, rep = apply_transaction(_write_txn(1), rep, checker(NOT_TWO))
        assert outcome.committed
        assert visible_state(rep.state).row("x:a") == {"v": 1}

    def test_abort_on_invariant_violation(self):
        rep = ReplicaState("r0")
        outcome, rep2 = apply_transaction(_write_txn(2), rep, checker(NOT_TWO))
        assert outcome.decision == "abort"
        assert outcome.abort_reason == "invariant-violation"
        assert outcome.produced == frozenset()
        assert rep2.state == rep.state  # abort purity

    def test_explicit_abort(self):
        rep = ReplicaState("r0")
        txn = transaction("t", "w1", "r0", [AbortIf(True)])
        outcome, rep2 = apply_transaction(txn, rep, checker(NOT_TWO))
        assert outcome.abort_reason == "explicit-abort"
        assert rep2.state == rep.state

    def test_deterministic_bitwise_equal_outputs(self):
        rep = ReplicaState("r0")
        txn = transaction("t", "w9", "rX", [
            Insert.make("x:a", {"v": 5}),
            CounterOp("ctr:c", "inc", 2),
            CollectionOp("coll:l", "add", "q"),
        ])
        out1, _ = apply_transaction(txn, rep)
        out2, _ = apply_transaction(txn, rep)
        assert out1.produced == out2.produced
        assert out1 == out2

    def test_update_overlays_visible_row(self):
        rep = ReplicaState("r0")
        t1 = transaction("t1", "w1", "r0", [Insert.make("x:a", {"v": 1, "note": "init"})])
        _, rep = apply_transaction(t1, rep)
        t2 = transaction("t2", "w2", "r0", [Update.make("x:a", {"v": 7})])
        _, rep = apply_transaction(t2, rep)
        assert visible_state(rep.state).row("x:a") == {"v": 7, "note": "init"}

    def test_cascade_delete_tombstones_matches_and_marks(self):
        rep = ReplicaState("r0")
        t1 = transaction("t1", "w1", "r0", [
            Insert.make("emp:a", {"dept_id": 1}),
            Insert.make("emp:b", {"dept_id": 2}),
        ])
        _, rep = apply_transaction(t1, rep)
        t2 = transaction("t2", "w2", "r0", [CascadeDelete("dept_id", 1)])
        _, rep = apply_transaction(t2, rep)
        view = visible_state(rep.state)
        assert view.row("emp:a") is None
        assert view.row("emp:b") == {"dept_id": 2}
        assert ("dept_id", 1) in view.cascades

    def test_schema_rejects_unknown_read(self):
        rep = ReplicaState("r0")
        schema = Schema(tables=frozenset({"x"}))
        txn = transaction("t", "w1", "r0", [Read("ghost:1")])
        with pytest.raises(MissingItem):
            apply_transaction(txn, rep, schema=schema)

    def test_writes_outside_declared_writeset_rejected(self):
        from iconfluence.state import ModelError, Transaction
        txn = Transaction("t", "w1", "r0",
                          (Insert.make("x:a", {"v": 1}),),
                          writeset=frozenset({"y:b"}))
        with pytest.raises(ModelError):
            apply_transaction(txn, ReplicaState("r0"))
