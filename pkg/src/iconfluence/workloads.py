"""Canned workloads for every row of the classification table.

Each workload pairs an invariant with a random transaction generator whose
committed executions stay valid locally; the dynamic checker then probes
whether merges of divergent branches can go invalid.  Workloads for
I-confluent rows are designed so no counterexample exists; the rest give
the checker a fair shot at the published counterexample shapes.
"""

from __future__ import annotations

import random

from . import invariants as inv
from .checker import CheckedWorkload, TxnIds
from .classify import TABLE_ROWS, TableRow
from .state import (
    CascadeDelete,
    CollectionOp,
    CounterOp,
    DatabaseState,
    Delete,
    IndexedUpdate,
    Insert,
    Transaction,
    Version,
    collection_event,
    transaction,
    visible_state,
)


def _txn(name: str, ids: TxnIds, *ops) -> Transaction:
    return transaction(name, ids.writer(name), f"r.{ids.tag}", ops)


def _coin(rng: random.Random, p: float) -> bool:
    return rng.random() < p


# --- per-item constraints ---------------------------------------------------

def _equality_build(rng, ids, state):
    value = 7 if not _coin(rng, 0.15) else rng.randint(1, 9)
    return _txn("set-flag", ids, Insert.make(f"r:{ids.fresh('k')}", {"v": value}))


def _inequality_build(rng, ids, state):
    value = rng.randint(1, 20)
    return _txn("write-row", ids, Insert.make(f"r:{ids.fresh('k')}", {"v": value}))


# --- uniqueness --------------------------------------------------------------

def _unique_specific_build(rng, ids, state):
    chosen = rng.randrange(1, 6)
    return _txn("create-user", ids,
                Insert.make(f"user:{ids.fresh('u')}", {"id": chosen}))


def _unique_nonce_build(rng, ids, state):
    return _txn("create-user", ids,
                Insert.make(f"user:{ids.fresh('u')}", {"id": ids.nonce()},
                            nonce_fields=("id",)))


# --- sequential id assignment ------------------------------------------------

def _sequential_build(rng, ids, state):
    taken = [row["id"] for row in visible_state(state).rows_of("acct").values()
             if "id" in row]
    next_id = max(taken) + 1 if taken else rng.randint(1, 3)
    return _txn("open-acct", ids,
                Insert.make(f"acct:{ids.fresh('a')}", {"id": next_id}))


# --- foreign keys ------------------------------------------------------------

def _dept_ids(state):
    view = visible_state(state)
    return sorted(row["id"] for row in view.rows_of("dept").values() if "id" in row)


def _dept_items(state):
    return sorted(visible_state(state).rows_of("dept"))


def _fk_insert_build(rng, ids, state):
    depts = _dept_ids(state)
    if not depts or _coin(rng, 0.4):
        did = ids.fresh("d")
        return _txn("create-dept", ids, Insert.make(f"dept:{did}", {"id": did}))
    return _txn("hire", ids,
                Insert.make(f"emp:{ids.fresh('e')}",
                            {"dept_id": rng.choice(depts)}))


def _fk_delete_build(rng, ids, state):
    if _coin(rng, 0.3):
        items = _dept_items(state)
        if items:
            return _txn("drop-dept", ids, Delete(rng.choice(items)))
    return _fk_insert_build(rng, ids, state)


def _fk_cascade_build(rng, ids, state):
    if _coin(rng, 0.3):
        depts = _dept_ids(state)
        if depts:
            did = rng.choice(depts)
            # Cascade both sides: remove the department and everything that
            # references it, leaving markers that survive merge.
            return _txn("drop-dept-cascade", ids,
                        CascadeDelete("id", did), CascadeDelete("dept_id", did))
    return _fk_insert_build(rng, ids, state)


_FK_INITIAL = DatabaseState.of([
    Version.make(f"dept:{name}", "init", i, "init", 0, {"id": name})
    for i, name in enumerate(("d1", "d2"))
])


# --- secondary index ---------------------------------------------------------

def _index_build(rng, ids, state):
    item = f"rec:{rng.randint(1, 3)}"
    return _txn("retag", ids, IndexedUpdate(item, "tag", ids.fresh("t"), "idx"))


# --- materialized view -------------------------------------------------------

_EMAIL_COUNT = inv.ViewFunction("unread-count", "ct:e", "count", "e")


def _view_build(rng, ids, state):
    return _txn("file-email", ids,
                Insert.make(f"e:{ids.fresh('m')}", {"read": False}))


# --- counters ----------------------------------------------------------------

def _counter_build(op):
    def build(rng, ids, state):
        return _txn(f"counter-{op}", ids, CounterOp("c", op, 1))
    return build


def _assign_build(lo, hi):
    def build(rng, ids, state):
        return _txn("counter-assign", ids,
                    CounterOp("c", "assign", rng.randint(lo, hi)))
    return build


# --- collections --------------------------------------------------------------

_POOL = ("a", "b", "c")


def _collection_build(extra):
    values = _POOL + (extra,) if extra else _POOL

    def build(rng, ids, state):
        ops = []
        for _ in range(rng.randint(1, 2)):
            op = "add" if _coin(rng, 0.6) else "del"
            ops.append(CollectionOp("l", op, rng.choice(values)))
        return _txn("edit-list", ids, *ops)
    return build


def _swap_build(rng, ids, state):
    members = visible_state(state).collection("l").ordered()
    victim = rng.choice(members)
    return _txn("swap-element", ids,
                CollectionOp("l", "del", victim),
                CollectionOp("l", "add", ids.fresh("x")))


def _seeded_list(*values):
    return DatabaseState.of([
        collection_event("l", "add", v, "init", i, "init", 0)
        for i, v in enumerate(values)
    ])


# --- the catalog --------------------------------------------------------------

PROOF_WORKLOADS: dict[int, CheckedWorkload] = {
    1: CheckedWorkload("equality/any-write",
                       (inv.attribute_equality("r", "v", 7),), _equality_build),
    2: CheckedWorkload("inequality/any-write",
                       (inv.attribute_inequality("r", "v", 13),), _inequality_build),
    3: CheckedWorkload("uniqueness/choose-specific",
                       (inv.uniqueness("user", "id"),), _unique_specific_build),
    4: CheckedWorkload("uniqueness/choose-some",
                       (inv.uniqueness("user", "id"),), _unique_nonce_build),
    5: CheckedWorkload("sequential-ids/insert",
                       (inv.sequentiality("acct", "id"),), _sequential_build),
    6: CheckedWorkload("foreign-key/insert",
                       (inv.foreign_key("emp", "dept_id", "dept", "id"),),
                       _fk_insert_build, initial=_FK_INITIAL),
    7: CheckedWorkload("foreign-key/delete",
                       (inv.foreign_key("emp", "dept_id", "dept", "id"),),
                       _fk_delete_build, initial=_FK_INITIAL),
    8: CheckedWorkload("foreign-key/cascading-delete",
                       (inv.foreign_key("emp", "dept_id", "dept", "id", cascade=True),),
                       _fk_cascade_build, initial=_FK_INITIAL),
    9: CheckedWorkload("secondary-index/update",
                       (inv.secondary_index("rec", "tag", "idx"),), _index_build),
    10: CheckedWorkload("materialized-view/update",
                        (inv.materialized_view(_EMAIL_COUNT),), _view_build),
    11: CheckedWorkload("greater-than/increment",
                        (inv.counter_greater("c", -2),), _counter_build("inc")),
    12: CheckedWorkload("less-than/increment",
                        (inv.counter_less("c", 2),), _counter_build("inc")),
    13: CheckedWorkload("greater-than/decrement",
                        (inv.counter_greater("c", -2),), _counter_build("dec")),
    14: CheckedWorkload("less-than/decrement",
                        (inv.counter_less("c", 2),), _counter_build("dec")),
    15: CheckedWorkload("contains/any-mutation",
                        (inv.contains("l", "keep"),), _collection_build("keep"),
                        initial=_seeded_list("keep")),
    16: CheckedWorkload("not-contains/any-mutation",
                        (inv.not_contains("l", "ban"),), _collection_build("ban")),
    17: CheckedWorkload("size-equals/mutation",
                        (inv.size_equals("l", 1),), _swap_build,
                        initial=_seeded_list("m.0")),
}

# Threshold constraints tolerate pure assigns (last-writer-wins base).
ASSIGN_WORKLOADS = (
    CheckedWorkload("greater-than/assign", (inv.counter_greater("c", -2),),
                    _assign_build(-1, 5)),
    CheckedWorkload("less-than/assign", (inv.counter_less("c", 2),),
                    _assign_build(-5, 1)),
)

YES_PROOFS = (1, 2, 4, 6, 8, 9, 10, 11, 14, 15, 16)
NO_PROOFS = (3, 5, 7, 12, 13, 17)


def row_workloads() -> list[tuple[TableRow, tuple[CheckedWorkload, ...]]]:
    """The published table rows paired with their dynamic workloads."""
    return [(row, tuple(PROOF_WORKLOADS[p] for p in row.proofs))
            for row in TABLE_ROWS]
