"""Static classification of (invariant class, operation class) pairs.

The rule table covers the sixteen published rows (proof ids 1-17; the
containment row carries two proofs) plus a handful of text-anchored entries:
reads are safe against everything, deletion cannot introduce duplicates
under uniqueness, threshold invariants tolerate last-writer-wins assigns,
and recency guarantees always require coordination.  Every pair outside the
table classifies Unknown, which reports treat as requiring coordination for
soundness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from . import invariants as inv
from .state import (
    AbortIf,
    CascadeDelete,
    CollectionOp,
    CounterOp,
    Delete,
    IndexedUpdate,
    Insert,
    Op,
    Read,
    Transaction,
    Update,
)

ICONFLUENT = "I-confluent"
NOT_ICONFLUENT = "not-I-confluent"
UNKNOWN = "unknown"

# Operation classes.
OP_READ = "read"
OP_WRITE_ANY = "write-any-value"
OP_WRITE_NONCE = "write-chosen-unique"
OP_INSERT = "insert"
OP_DELETE = "delete"
OP_CASCADE = "cascade-delete"
OP_UPDATE_INDEXED = "update-indexed"
OP_VIEW_UPDATE = "view-update"
OP_COUNTER_INC = "counter-increment"
OP_COUNTER_DEC = "counter-decrement"
OP_COUNTER_ASSIGN = "counter-assign"
OP_COLLECTION_ADD = "collection-add"
OP_COLLECTION_DEL = "collection-del"

OP_CLASSES = (
    OP_READ, OP_WRITE_ANY, OP_WRITE_NONCE, OP_INSERT, OP_DELETE, OP_CASCADE,
    OP_UPDATE_INDEXED, OP_VIEW_UPDATE, OP_COUNTER_INC, OP_COUNTER_DEC,
    OP_COUNTER_ASSIGN, OP_COLLECTION_ADD, OP_COLLECTION_DEL,
)


@dataclass(frozen=True)
class Classification:
    verdict: str
    proof: Optional[int] = None     # rule-table proof number (1..17)

    @property
    def iconfluent(self) -> bool:
        return self.verdict == ICONFLUENT


_YES = lambda n=None: Classification(ICONFLUENT, n)   # noqa: E731
_NO = lambda n=None: Classification(NOT_ICONFLUENT, n)  # noqa: E731

_ANY_OP = tuple(c for c in OP_CLASSES if c != OP_READ)

RULES: dict[tuple[str, str], Classification] = {}

# Per-record equality / inequality constraints hold under any operation:
# a committed local state can never contain the forbidden value, and set
# union introduces no new versions.
for _op in _ANY_OP:
    RULES[(inv.ATTRIBUTE_EQUALITY, _op)] = _YES(1)
    RULES[(inv.ATTRIBUTE_INEQUALITY, _op)] = _YES(2)

RULES.update({
    (inv.UNIQUENESS, OP_WRITE_ANY): _NO(3),
    (inv.UNIQUENESS, OP_WRITE_NONCE): _YES(4),
    (inv.UNIQUENESS, OP_INSERT): _NO(3),
    (inv.UNIQUENESS, OP_DELETE): _YES(),      # removing items cannot duplicate
    (inv.SEQUENTIALITY, OP_INSERT): _NO(5),
    (inv.FOREIGN_KEY, OP_INSERT): _YES(6),
    (inv.FOREIGN_KEY, OP_DELETE): _NO(7),
    (inv.FOREIGN_KEY, OP_CASCADE): _YES(8),
    (inv.SECONDARY_INDEX, OP_UPDATE_INDEXED): _YES(9),
    (inv.MATERIALIZED_VIEW, OP_VIEW_UPDATE): _YES(10),
    (inv.COUNTER_GREATER, OP_COUNTER_INC): _YES(11),
    (inv.COUNTER_LESS, OP_COUNTER_INC): _NO(12),
    (inv.COUNTER_GREATER, OP_COUNTER_DEC): _NO(13),
    (inv.COUNTER_LESS, OP_COUNTER_DEC): _YES(14),
    (inv.COUNTER_GREATER, OP_COUNTER_ASSIGN): _YES(),
    (inv.COUNTER_LESS, OP_COUNTER_ASSIGN): _YES(),
    (inv.CONTAINS, OP_COLLECTION_ADD): _YES(15),
    (inv.CONTAINS, OP_COLLECTION_DEL): _YES(15),
    (inv.NOT_CONTAINS, OP_COLLECTION_ADD): _YES(16),
    (inv.NOT_CONTAINS, OP_COLLECTION_DEL): _YES(16),
    (inv.SIZE_EQUALS, OP_COLLECTION_ADD): _NO(17),
    (inv.SIZE_EQUALS, OP_COLLECTION_DEL): _NO(17),
})


@dataclass(frozen=True)
class TableRow:
    """One published classification row."""

    invariant: str
    operation: str
    iconfluent: bool
    proofs: tuple[int, ...]
    pairs: tuple[tuple[str, str], ...]   # canonical (invariant, op) lookups


TABLE_ROWS: tuple[TableRow, ...] = (
    TableRow("Attribute Equality", "Any", True, (1,),
             ((inv.ATTRIBUTE_EQUALITY, OP_WRITE_ANY),)),
    TableRow("Attribute Inequality", "Any", True, (2,),
             ((inv.ATTRIBUTE_INEQUALITY, OP_WRITE_ANY),)),
    TableRow("Uniqueness", "Choose specific value", False, (3,),
             ((inv.UNIQUENESS, OP_WRITE_ANY),)),
    TableRow("Uniqueness", "Choose some value", True, (4,),
             ((inv.UNIQUENESS, OP_WRITE_NONCE),)),
    TableRow("AUTO_INCREMENT", "Insert", False, (5,),
             ((inv.SEQUENTIALITY, OP_INSERT),)),
    TableRow("Foreign Key", "Insert", True, (6,),
             ((inv.FOREIGN_KEY, OP_INSERT),)),
    TableRow("Foreign Key", "Delete", False, (7,),
             ((inv.FOREIGN_KEY, OP_DELETE),)),
    TableRow("Foreign Key", "Cascading Delete", True, (8,),
             ((inv.FOREIGN_KEY, OP_CASCADE),)),
    TableRow("Secondary Indexing", "Update", True, (9,),
             ((inv.SECONDARY_INDEX, OP_UPDATE_INDEXED),)),
    TableRow("Materialized Views", "Update", True, (10,),
             ((inv.MATERIALIZED_VIEW, OP_VIEW_UPDATE),)),
    TableRow(">", "Increment [Counter]", True, (11,),
             ((inv.COUNTER_GREATER, OP_COUNTER_INC),)),
    TableRow("<", "Increment [Counter]", False, (12,),
             ((inv.COUNTER_LESS, OP_COUNTER_INC),)),
    TableRow(">", "Decrement [Counter]", False, (13,),
             ((inv.COUNTER_GREATER, OP_COUNTER_DEC),)),
    TableRow("<", "Decrement [Counter]", True, (14,),
             ((inv.COUNTER_LESS, OP_COUNTER_DEC),)),
    TableRow("[NOT] CONTAINS", "Any [Set, List, Map]", True, (15, 16),
             ((inv.CONTAINS, OP_COLLECTION_ADD), (inv.CONTAINS, OP_COLLECTION_DEL),
              (inv.NOT_CONTAINS, OP_COLLECTION_ADD), (inv.NOT_CONTAINS, OP_COLLECTION_DEL))),
    TableRow("SIZE=", "Mutation [Set, List, Map]", False, (17,),
             ((inv.SIZE_EQUALS, OP_COLLECTION_ADD), (inv.SIZE_EQUALS, OP_COLLECTION_DEL))),
)


def classify_static(invariant_class: str, operation_class: str) -> Classification:
    """Pure table lookup; Unknown exactly when the pair is untabulated."""
    if operation_class == OP_READ:
        return _YES()
    if invariant_class == inv.RECENCY:
        return _NO()
    return RULES.get((invariant_class, operation_class), Classification(UNKNOWN))


# ---------------------------------------------------------------------------
# Transaction-level classification.

@dataclass(frozen=True)
class PairFinding:
    invariant: str          # spec name
    invariant_class: str
    operation_class: str
    classification: Classification


@dataclass(frozen=True)
class TransactionReport:
    transaction: str
    findings: tuple[PairFinding, ...]
    coordination_free: bool

    @property
    def offending(self) -> tuple[PairFinding, ...]:
        return tuple(f for f in self.findings
                     if f.classification.verdict != ICONFLUENT)


def _table_of(item: str) -> str:
    return item.split(":", 1)[0]


def _writes_field(op: Op, field: str) -> bool:
    if isinstance(op, (Insert, Update)):
        return any(k == field for k, _ in op.fields)
    return False


def _written_value(op: Op, field: str):
    if isinstance(op, (Insert, Update)):
        for k, v in op.fields:
            if k == field:
                return v
    return None


def _in_table(op_item: str, table: Optional[str]) -> bool:
    return table is None or _table_of(op_item) == table


def operation_classes(spec: inv.InvariantSpec, op: Op) -> tuple[str, ...]:
    """Operation classes of `op` that are relevant to `spec`.

    Empty means the operation cannot affect the invariant (a delete of a
    referencing-side row under a foreign key, for example).
    """
    if isinstance(op, (Read, AbortIf)):
        return ()
    cls = spec.cls

    if cls in (inv.ATTRIBUTE_EQUALITY, inv.ATTRIBUTE_INEQUALITY):
        field = spec.param("field")
        table = spec.param("table")
        if isinstance(op, (Insert, Update)) and _in_table(op.item, table) \
                and _writes_field(op, field):  # type: ignore[arg-type]
            return (OP_WRITE_ANY,)
        if isinstance(op, IndexedUpdate) and _in_table(op.item, table) and op.field == field:
            return (OP_WRITE_ANY,)
        return ()

    if cls == inv.UNIQUENESS:
        field = spec.param("field")
        table = spec.param("table")
        if isinstance(op, Insert) and _in_table(op.item, table) and _writes_field(op, field):  # type: ignore[arg-type]
            chosen = field in op.nonce_fields
            return (OP_WRITE_NONCE,) if chosen else (OP_WRITE_ANY,)
        if isinstance(op, Update) and _in_table(op.item, table) and _writes_field(op, field):  # type: ignore[arg-type]
            return (OP_WRITE_ANY,)
        if isinstance(op, Delete) and _in_table(op.item, table):
            return (OP_DELETE,)
        return ()

    if cls == inv.SEQUENTIALITY:
        field = spec.param("field")
        table = spec.param("table")
        if isinstance(op, Insert) and _in_table(op.item, table) and _writes_field(op, field):  # type: ignore[arg-type]
            return (OP_INSERT,)
        if isinstance(op, Delete) and _in_table(op.item, table):
            return (OP_DELETE,)
        if isinstance(op, CascadeDelete):
            return (OP_CASCADE,)
        return ()

    if cls == inv.FOREIGN_KEY:
        src_table = spec.param("src_table")
        src_field = spec.param("src_field")
        dst_table = spec.param("dst_table")
        dst_field = spec.param("dst_field")
        if isinstance(op, (Insert, Update)) and _in_table(op.item, src_table) \
                and _writes_field(op, src_field):  # type: ignore[arg-type]
            return (OP_INSERT,)
        if isinstance(op, Delete) and _in_table(op.item, dst_table):
            # Deleting a referenced-side row can strand references; deleting
            # a referencing-side row cannot, so it stays unpaired above.
            return (OP_DELETE,)
        if isinstance(op, CascadeDelete) and op.field in (src_field, dst_field):
            return (OP_CASCADE,)
        return ()

    if cls == inv.SECONDARY_INDEX:
        field = spec.param("field")
        table = spec.param("table")
        if isinstance(op, IndexedUpdate) and _in_table(op.item, table) and op.field == field:
            return (OP_UPDATE_INDEXED,)
        if isinstance(op, (Insert, Update)) and _in_table(op.item, table) \
                and _writes_field(op, field) and _written_value(op, field) is not None:  # type: ignore[arg-type]
            # Writes the indexed attribute without maintaining the index.
            return (OP_WRITE_ANY,)
        return ()

    if cls == inv.MATERIALIZED_VIEW:
        vf: inv.ViewFunction = spec.param("view")  # type: ignore[assignment]
        if vf.source_table is not None and isinstance(op, (Insert, Delete)) \
                and _in_table(op.item, vf.source_table):
            return (OP_VIEW_UPDATE,)
        if isinstance(op, Update) and _in_table(op.item, vf.source_table) \
                and vf.field is not None and _writes_field(op, vf.field):
            return (OP_VIEW_UPDATE,)
        if isinstance(op, CounterOp) and (op.counter == vf.view_counter
                                          or op.counter in vf.source_counters):
            return (OP_VIEW_UPDATE,)
        return ()

    if cls in (inv.COUNTER_GREATER, inv.COUNTER_LESS):
        if isinstance(op, CounterOp) and op.counter == spec.param("counter"):
            return {"inc": (OP_COUNTER_INC,), "dec": (OP_COUNTER_DEC,),
                    "assign": (OP_COUNTER_ASSIGN,)}[op.op]
        return ()

    if cls in (inv.CONTAINS, inv.NOT_CONTAINS, inv.SIZE_EQUALS):
        if isinstance(op, CollectionOp) and op.collection == spec.param("collection"):
            return (OP_COLLECTION_ADD,) if op.op == "add" else (OP_COLLECTION_DEL,)
        return ()

    return ()


def classify_transaction(t: Transaction, specs: Sequence[inv.InvariantSpec],
                         ) -> TransactionReport:
    """Pair every invariant with every relevant operation and look each pair
    up in the rule table.

    The transaction is coordination-free iff every pair is I-confluent; any
    Unknown or not-I-confluent pair marks it as requiring coordination.
    """
    findings: list[PairFinding] = []
    seen: set[tuple[str, str, str]] = set()
    read_only = all(isinstance(op, (Read, AbortIf)) for op in t.ops)
    for spec in specs:
        if spec.cls == inv.RECENCY:
            findings.append(PairFinding(spec.name, spec.cls, "any",
                                        classify_static(spec.cls, OP_WRITE_ANY)))
            continue
        for op in t.ops:
            if isinstance(op, Read):
                key = (spec.name, spec.cls, OP_READ)
                if read_only and key not in seen:
                    seen.add(key)
                    findings.append(PairFinding(spec.name, spec.cls, OP_READ,
                                                classify_static(spec.cls, OP_READ)))
                continue
            for op_class in operation_classes(spec, op):
                key = (spec.name, spec.cls, op_class)
                if key in seen:
                    continue
                seen.add(key)
                findings.append(PairFinding(spec.name, spec.cls, op_class,
                                            classify_static(spec.cls, op_class)))
    coordination_free = all(f.classification.verdict == ICONFLUENT
                            for f in findings)
    return TransactionReport(t.name, tuple(findings), coordination_free)
