"""Core replicated-state model.

A database state is a set of immutable versions; merge is set union, which
is commutative, associative, and idempotent by construction.  Transactions
run against a replica snapshot, produce new versions, and commit only if the
post-state satisfies the configured invariant (local validity checking).

Plain items resolve by last-writer-wins over a (timestamp, replica, writer,
sequence) total order; deletion is a tombstone version that suppresses the
item forever.  Counter and collection items are event logs resolved by the
value functions in `adt`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Optional, Union

Scalar = Union[int, float, str, bool, None]

# Reserved field names; user schemas must not use a leading underscore.
F_KIND = "_kind"
F_OP = "_op"
F_AMOUNT = "_amount"
F_VALUE = "_value"
F_FIELD = "_field"

KIND_ROW = "row"
KIND_TOMBSTONE = "tombstone"
KIND_COUNTER = "counter"
KIND_COLLECTION = "collection"
KIND_CASCADE = "cascade"

COUNTER_INC = "inc"
COUNTER_DEC = "dec"
COUNTER_ASSIGN = "assign"
COLLECTION_ADD = "add"
COLLECTION_DEL = "del"


class ModelError(Exception):
    """Misuse of the state model (not a transaction abort)."""


class IdentityCollision(ModelError):
    """Two distinct versions share (item, writer, sequence)."""


class MissingItem(ModelError):
    """A transaction referenced an item outside the configured schema."""


@dataclass(frozen=True)
class Version:
    """One immutable write of one item: the atom of database state.

    (item, writer, seq) uniquely identifies a version; `ts` is a logical
    timestamp used only for last-writer-wins resolution of plain items.
    """

    item: str
    writer: str
    seq: int
    replica: str
    ts: int
    fields: tuple[tuple[str, Scalar], ...]

    @staticmethod
    def make(item: str, writer: str, seq: int, replica: str, ts: int,
             fields: Mapping[str, Scalar]) -> "Version":
        return Version(item, writer, seq, replica, ts, tuple(sorted(fields.items())))

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.item, self.writer, self.seq)

    @property
    def order_key(self) -> tuple[int, str, str, int]:
        # Total order for last-writer-wins; replica then writer break ts ties.
        return (self.ts, self.replica, self.writer, self.seq)

    def get(self, name: str, default: Scalar = None) -> Scalar:
        for k, v in self.fields:
            if k == name:
                return v
        return default

    @property
    def kind(self) -> str:
        return self.get(F_KIND, KIND_ROW)  # type: ignore[return-value]

    def as_dict(self) -> dict[str, Scalar]:
        return dict(self.fields)

    def user_fields(self) -> dict[str, Scalar]:
        return {k: v for k, v in self.fields if not k.startswith("_")}


def tombstone(item: str, writer: str, seq: int, replica: str, ts: int) -> Version:
    return Version.make(item, writer, seq, replica, ts, {F_KIND: KIND_TOMBSTONE})


def counter_event(counter: str, op: str, writer: str, seq: int, replica: str,
                  ts: int, amount: int = 1) -> Version:
    if op not in (COUNTER_INC, COUNTER_DEC, COUNTER_ASSIGN):
        raise ModelError(f"unknown counter op {op!r}")
    return Version.make(counter, writer, seq, replica, ts,
                        {F_KIND: KIND_COUNTER, F_OP: op, F_AMOUNT: amount})


def collection_event(collection: str, op: str, value: Scalar, writer: str,
                     seq: int, replica: str, ts: int) -> Version:
    if op not in (COLLECTION_ADD, COLLECTION_DEL):
        raise ModelError(f"unknown collection op {op!r}")
    return Version.make(collection, writer, seq, replica, ts,
                        {F_KIND: KIND_COLLECTION, F_OP: op, F_VALUE: value})


def cascade_marker(fieldname: str, value: Scalar, writer: str, seq: int,
                   replica: str, ts: int) -> Version:
    item = f"~cascade:{fieldname}={value!r}"
    return Version.make(item, writer, seq, replica, ts,
                        {F_KIND: KIND_CASCADE, F_FIELD: fieldname, F_VALUE: value})


@dataclass(frozen=True)
class DatabaseState:
    """A finite set of versions.  Equality is version-set equality."""

    versions: frozenset[Version] = frozenset()

    @staticmethod
    def of(versions: Iterable[Version]) -> "DatabaseState":
        vs = frozenset(versions)
        _check_identity(vs)
        return DatabaseState(vs)

    def union(self, other: "DatabaseState") -> "DatabaseState":
        return merge(self, other)

    def with_versions(self, extra: Iterable[Version]) -> "DatabaseState":
        return DatabaseState(self.versions | frozenset(extra))

    def of_item(self, item: str) -> list[Version]:
        return [v for v in self.versions if v.item == item]

    def items(self) -> set[str]:
        return {v.item for v in self.versions}

    def max_ts(self) -> int:
        return max((v.ts for v in self.versions), default=0)

    def __len__(self) -> int:
        return len(self.versions)

    def __iter__(self) -> Iterator[Version]:
        return iter(self.versions)

    def __contains__(self, v: Version) -> bool:
        return v in self.versions


D0 = DatabaseState()


def _check_identity(versions: frozenset[Version]) -> None:
    seen: dict[tuple[str, str, int], Version] = {}
    for v in versions:
        prior = seen.get(v.key)
        if prior is not None and prior != v:
            raise IdentityCollision(f"conflicting versions for {v.key}")
        seen[v.key] = v


def merge(a: DatabaseState, b: DatabaseState) -> DatabaseState:
    """Set union of the two version sets.

    Total, commutative, associative, and idempotent; D0 is the identity.
    Raises IdentityCollision if the inputs disagree on a version's content,
    which indicates states from incompatible histories.
    """
    union = a.versions | b.versions
    if len(union) != len({v.key for v in union}):
        _check_identity(union)  # raises with the offending key
    return DatabaseState(union)


@dataclass(frozen=True)
class ReplicaState:
    """A replica: an id, a local state, and a monotone nonce counter."""

    replica_id: str
    state: DatabaseState = D0
    nonce_counter: int = 0

    def with_state(self, state: DatabaseState) -> "ReplicaState":
        return ReplicaState(self.replica_id, state, self.nonce_counter)

    def merge_in(self, other: DatabaseState) -> "ReplicaState":
        return self.with_state(merge(self.state, other))


# ---------------------------------------------------------------------------
# Logical view: resolve versions into per-item values.

@dataclass(frozen=True)
class CollectionState:
    """Resolved add/del events of one collection, deduplicated by value.

    Two events with the same (op, value) denote the same logical event, so
    independent deletions of one element collapse under merge.
    """

    added: frozenset
    deleted: frozenset

    def contains(self, value: Scalar) -> bool:
        return value in self.added and value not in self.deleted

    def members(self) -> frozenset:
        return self.added - self.deleted

    def size(self) -> int:
        return len(self.added) - len(self.deleted)

    def ordered(self) -> list:
        # Collection values must be mutually comparable (one scalar type per
        # collection); list order is plain lexicographic sorting.
        return sorted(self.members())


class LogicalView:
    """Per-item logical values: plain rows, counters, collections, markers."""

    __slots__ = ("rows", "counters", "collections", "cascades", "tombstoned")

    def __init__(self, rows: dict[str, dict[str, Scalar]], counters: dict[str, int],
                 collections: dict[str, CollectionState],
                 cascades: frozenset, tombstoned: frozenset):
        self.rows = rows
        self.counters = counters
        self.collections = collections
        self.cascades = cascades          # set of (field, value) markers
        self.tombstoned = tombstoned      # item ids suppressed by tombstones

    def row(self, item: str) -> Optional[dict[str, Scalar]]:
        return self.rows.get(item)

    def counter(self, item: str) -> int:
        return self.counters.get(item, 0)

    def collection(self, item: str) -> CollectionState:
        return self.collections.get(item, _EMPTY_COLLECTION)

    def rows_of(self, table: Optional[str]) -> dict[str, dict[str, Scalar]]:
        if table is None:
            return self.rows
        prefix = table + ":"
        return {k: v for k, v in self.rows.items() if k.startswith(prefix)}


_EMPTY_COLLECTION = CollectionState(frozenset(), frozenset())


def _counter_value(events: list[Version]) -> int:
    base = 0
    cutoff = None
    assigns = [e for e in events if e.get(F_OP) == COUNTER_ASSIGN]
    if assigns:
        winner = max(assigns, key=lambda e: e.order_key)
        base = winner.get(F_AMOUNT, 0)  # type: ignore[assignment]
        cutoff = winner.order_key
    total = base
    for e in events:
        op = e.get(F_OP)
        if op == COUNTER_ASSIGN:
            continue
        if cutoff is not None and e.order_key <= cutoff:
            continue
        amount = e.get(F_AMOUNT, 1)
        if op == COUNTER_INC:
            total += amount  # type: ignore[operator]
        elif op == COUNTER_DEC:
            total -= amount  # type: ignore[operator]
    return total  # type: ignore[return-value]


def visible_state(s: DatabaseState) -> LogicalView:
    """Deterministic reduction of a version set to a logical view.

    Plain items resolve by last-writer-wins; any tombstone suppresses the
    item permanently; counter and collection items resolve from their event
    sets; cascade markers surface as (field, value) pairs.
    """
    by_item: dict[str, list[Version]] = {}
    for v in s.versions:
        by_item.setdefault(v.item, []).append(v)

    rows: dict[str, dict[str, Scalar]] = {}
    counters: dict[str, int] = {}
    collections: dict[str, CollectionState] = {}
    cascades: set = set()
    dead: set = set()

    for item, versions in by_item.items():
        kind = versions[0].kind
        if any(v.kind == KIND_TOMBSTONE for v in versions):
            dead.add(item)
            continue
        if kind == KIND_COUNTER:
            counters[item] = _counter_value(versions)
        elif kind == KIND_COLLECTION:
            added = frozenset(v.get(F_VALUE) for v in versions
                              if v.get(F_OP) == COLLECTION_ADD)
            deleted = frozenset(v.get(F_VALUE) for v in versions
                                if v.get(F_OP) == COLLECTION_DEL)
            collections[item] = CollectionState(added, deleted)
        elif kind == KIND_CASCADE:
            for v in versions:
                cascades.add((v.get(F_FIELD), v.get(F_VALUE)))
        else:
            winner = max(versions, key=lambda v: v.order_key)
            rows[item] = winner.user_fields()
    return LogicalView(rows, counters, collections, frozenset(cascades), frozenset(dead))


# ---------------------------------------------------------------------------
# Transactions.

@dataclass(frozen=True)
class Read:
    item: str


@dataclass(frozen=True)
class Insert:
    """Write a new plain row.  `nonce_fields` marks generated (not
    user-chosen) field values, which classifies as choose-some-value."""

    item: str
    fields: tuple[tuple[str, Scalar], ...]
    nonce_fields: frozenset = frozenset()

    @staticmethod
    def make(item: str, fields: Mapping[str, Scalar],
             nonce_fields: Iterable[str] = ()) -> "Insert":
        return Insert(item, tuple(sorted(fields.items())), frozenset(nonce_fields))


@dataclass(frozen=True)
class Update:
    """Overlay fields onto the currently visible row of `item`."""

    item: str
    fields: tuple[tuple[str, Scalar], ...]

    @staticmethod
    def make(item: str, fields: Mapping[str, Scalar]) -> "Update":
        return Update(item, tuple(sorted(fields.items())))


@dataclass(frozen=True)
class IndexedUpdate:
    """Update one indexed attribute and its index entry atomically.

    Writes row[field] = value, inserts an entry row under
    `{index}:{value}:{item}`, and tombstones the entry for the previous
    value, all in one commit.
    """

    item: str
    field: str
    value: Scalar
    index: str


@dataclass(frozen=True)
class Delete:
    item: str


@dataclass(frozen=True)
class CascadeDelete:
    """Tombstone every visible row whose `field` equals `value` and leave a
    marker recording that the cascade happened (the marker survives merge)."""

    field: str
    value: Scalar


@dataclass(frozen=True)
class CounterOp:
    counter: str
    op: str          # inc | dec | assign
    amount: int = 1


@dataclass(frozen=True)
class CollectionOp:
    collection: str
    op: str          # add | del
    value: Scalar = None


@dataclass(frozen=True)
class AbortIf:
    condition: bool
    reason: str = "explicit-abort"


Op = Union[Read, Insert, Update, IndexedUpdate, Delete, CascadeDelete,
           CounterOp, CollectionOp, AbortIf]


@dataclass(frozen=True)
class Transaction:
    """A named, fully concrete transformation of a replica state.

    The writer id is fixed at instantiation so re-executing the transaction
    anywhere (including replay on a fresh replica) reproduces bit-identical
    versions; `origin` is stamped into produced versions as their replica.
    """

    name: str
    writer: str
    origin: str
    ops: tuple[Op, ...]
    writeset: Optional[frozenset] = None   # None disables the check

    def static_write_items(self) -> set[str]:
        out: set[str] = set()
        for op in self.ops:
            if isinstance(op, (Insert, Update, IndexedUpdate, Delete)):
                out.add(op.item)
            elif isinstance(op, CounterOp):
                out.add(op.counter)
            elif isinstance(op, CollectionOp):
                out.add(op.collection)
        return out

    def operation_tags(self) -> frozenset:
        """Context-free operation classes of this transaction's ops; the
        classifier refines these against each invariant's scope."""
        tags: set[str] = set()
        for op in self.ops:
            if isinstance(op, Read):
                tags.add("read")
            elif isinstance(op, Insert):
                tags.add("insert")
                tags.add("write-chosen-unique" if op.nonce_fields
                         else "write-any-value")
            elif isinstance(op, Update):
                tags.add("write-any-value")
            elif isinstance(op, IndexedUpdate):
                tags.add("update-indexed")
            elif isinstance(op, Delete):
                tags.add("delete")
            elif isinstance(op, CascadeDelete):
                tags.add("cascade-delete")
            elif isinstance(op, CounterOp):
                tags.add({"inc": "counter-increment", "dec": "counter-decrement",
                          "assign": "counter-assign"}[op.op])
            elif isinstance(op, CollectionOp):
                tags.add("collection-add" if op.op == COLLECTION_ADD
                         else "collection-del")
        return frozenset(tags)


def transaction(name: str, writer: str, origin: str, ops: Iterable[Op]) -> Transaction:
    txn = Transaction(name, writer, origin, tuple(ops), None)
    return Transaction(txn.name, txn.writer, txn.origin, txn.ops,
                       frozenset(txn.static_write_items()))


@dataclass(frozen=True)
class Witness:
    """Names the invariant and at least one offending item when invalid."""

    invariant: str
    items: tuple[str, ...]
    detail: str


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    witness: Optional[Witness] = None


VALID = ValidityVerdict(True)


@dataclass(frozen=True)
class TransactionOutcome:
    decision: str                       # "commit" | "abort"
    produced: frozenset[Version]
    abort_reason: Optional[str] = None  # "explicit-abort" | "invariant-violation"
    witness: Optional[Witness] = None

    @property
    def committed(self) -> bool:
        return self.decision == "commit"


@dataclass(frozen=True)
class Schema:
    """Known item namespaces; used only to reject reads of unknown items."""

    tables: frozenset = frozenset()
    counters: frozenset = frozenset()
    collections: frozenset = frozenset()
    indexes: frozenset = frozenset()

    def knows(self, item: str) -> bool:
        prefix = item.split(":", 1)[0]
        return (prefix in self.tables or item in self.counters
                or item in self.collections or prefix in self.indexes
                or prefix in self.counters or prefix in self.collections)


InvariantFn = Callable[[DatabaseState], ValidityVerdict]
MaintenanceFn = Callable[[DatabaseState, str, int, str, int], Iterable[Version]]


def apply_transaction(t: Transaction, r: ReplicaState,
                      invariant: Optional[InvariantFn] = None,
                      schema: Optional[Schema] = None,
                      maintenance: Optional[MaintenanceFn] = None,
                      ) -> tuple[TransactionOutcome, ReplicaState]:
    """Execute `t` against r's local snapshot with local validity checking.

    Commits (merging produced versions into the local state) only when the
    post-state satisfies `invariant` and no abort-if fired; otherwise the
    replica is returned unchanged.  Deterministic: equal inputs produce
    bit-equal version sets, since timestamps derive from the input state.
    """
    base = r.state
    ts = base.max_ts() + 1
    produced: list[Version] = []
    seq = 0

    def view() -> LogicalView:
        return visible_state(base.with_versions(produced))

    for op in t.ops:
        if isinstance(op, AbortIf):
            if op.condition:
                return TransactionOutcome("abort", frozenset(), "explicit-abort"), r
            continue
        if isinstance(op, Read):
            if schema is not None and not schema.knows(op.item):
                raise MissingItem(op.item)
            continue
        if isinstance(op, Insert):
            produced.append(Version(op.item, t.writer, seq, t.origin, ts, op.fields))
            seq += 1
        elif isinstance(op, Update):
            current = view().row(op.item) or {}
            merged = dict(current)
            merged.update(dict(op.fields))
            produced.append(Version.make(op.item, t.writer, seq, t.origin, ts, merged))
            seq += 1
        elif isinstance(op, IndexedUpdate):
            current = view().row(op.item) or {}
            old = current.get(op.field)
            if old is not None:
                produced.append(tombstone(f"{op.index}:{old}:{op.item}",
                                          t.writer, seq, t.origin, ts))
                seq += 1
            merged = dict(current)
            merged[op.field] = op.value
            produced.append(Version.make(op.item, t.writer, seq, t.origin, ts, merged))
            seq += 1
            produced.append(Version.make(f"{op.index}:{op.value}:{op.item}",
                                         t.writer, seq, t.origin, ts, {"ref": op.item}))
            seq += 1
        elif isinstance(op, Delete):
            produced.append(tombstone(op.item, t.writer, seq, t.origin, ts))
            seq += 1
        elif isinstance(op, CascadeDelete):
            v = view()
            for item in sorted(v.rows):
                if v.rows[item].get(op.field) == op.value:
                    produced.append(tombstone(item, t.writer, seq, t.origin, ts))
                    seq += 1
            produced.append(cascade_marker(op.field, op.value, t.writer, seq,
                                           t.origin, ts))
            seq += 1
        elif isinstance(op, CounterOp):
            produced.append(counter_event(op.counter, op.op, t.writer, seq,
                                          t.origin, ts, op.amount))
            seq += 1
        elif isinstance(op, CollectionOp):
            produced.append(collection_event(op.collection, op.op, op.value,
                                             t.writer, seq, t.origin, ts))
            seq += 1
        else:
            raise ModelError(f"unknown op {op!r}")

    if t.writeset is not None:
        # Cascade targets are value-dependent; only statically named writes
        # are required to appear in the declared writeset.
        for item in t.static_write_items():
            if item not in t.writeset:
                raise ModelError(f"{t.name} writes {item} outside declared writeset")

    candidate = base.with_versions(produced)
    if maintenance is not None:
        extra = list(maintenance(candidate, t.writer, seq, t.origin, ts))
        produced.extend(extra)
        candidate = candidate.with_versions(extra)

    if invariant is not None:
        verdict = invariant(candidate)
        if not verdict.valid:
            return TransactionOutcome("abort", frozenset(), "invariant-violation",
                                      verdict.witness), r
    out = TransactionOutcome("commit", frozenset(produced))
    return out, r.with_state(candidate)
