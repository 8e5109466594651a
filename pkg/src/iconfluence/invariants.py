"""Invariant catalog: constructors and evaluators for every supported class.

Every evaluator is a total, deterministic predicate over a database state's
logical view; it depends only on the version set, never on arrival order.
A list of specs evaluates as a single conjunction (one invariant set per
database), and an invalid verdict always carries a witness naming the
invariant and at least one offending item.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence
from .state import (
    COUNTER_DEC,
    COUNTER_INC,
    DatabaseState,
    LogicalView,
    ModelError,
    ReplicaState,
    Scalar,
    Schema,
    Transaction,
    TransactionOutcome,
    VALID,
    ValidityVerdict,
    Version,
    Witness,
    apply_transaction,
    cascade_marker,
    counter_event,
    tombstone,
    visible_state,
)

ATTRIBUTE_EQUALITY = "attribute-equality"
ATTRIBUTE_INEQUALITY = "attribute-inequality"
UNIQUENESS = "uniqueness"
SEQUENTIALITY = "sequentiality"
FOREIGN_KEY = "foreign-key"
SECONDARY_INDEX = "secondary-index-consistency"
MATERIALIZED_VIEW = "materialized-view"
COUNTER_GREATER = "counter-greater-than"
COUNTER_LESS = "counter-less-than"
CONTAINS = "contains"
NOT_CONTAINS = "not-contains"
SIZE_EQUALS = "size-equals"
RECENCY = "recency"

CLASSES = (
    ATTRIBUTE_EQUALITY, ATTRIBUTE_INEQUALITY, UNIQUENESS, SEQUENTIALITY,
    FOREIGN_KEY, SECONDARY_INDEX, MATERIALIZED_VIEW, COUNTER_GREATER,
    COUNTER_LESS, CONTAINS, NOT_CONTAINS, SIZE_EQUALS, RECENCY,
)


class SchemaMismatch(ModelError):
    """An invariant references a field absent from the configured schema."""


@dataclass(frozen=True)
class ViewFunction:
    """A count or sum over a filtered row range, stored in a view counter.

    `source_counters` names counter items the view also derives from (a
    rollup of other counters); they scope static classification but are not
    part of the row recomputation.
    """

    name: str
    view_counter: str
    agg: str                       # "count" | "sum"
    source_table: Optional[str]
    field: Optional[str] = None    # summed field when agg == "sum"
    filter_field: Optional[str] = None
    filter_value: Scalar = None
    source_counters: tuple[str, ...] = ()

    def recompute(self, view: LogicalView) -> int:
        if self.source_table is None:
            # Pure counter rollup: the view aggregates other counters.
            return sum(view.counter(c) for c in self.source_counters)
        total = 0
        for item, row in view.rows_of(self.source_table).items():
            if self.filter_field is not None and row.get(self.filter_field) != self.filter_value:
                continue
            if self.agg == "count":
                total += 1
            else:
                total += row.get(self.field, 0) or 0  # type: ignore[operator]
        return total


@dataclass(frozen=True)
class InvariantSpec:
    """One invariant: a class tag plus class-specific parameters.

    The parameters fully determine a total predicate over database states.
    """

    cls: str
    name: str
    params: tuple[tuple[str, object], ...] = ()

    @staticmethod
    def make(cls: str, name: Optional[str] = None, **params: object) -> "InvariantSpec":
        if cls not in CLASSES:
            raise ModelError(f"unknown invariant class {cls!r}")
        return InvariantSpec(cls, name or cls, tuple(sorted(params.items())))

    def param(self, key: str, default: object = None) -> object:
        for k, v in self.params:
            if k == key:
                return v
        return default


def attribute_equality(table: Optional[str], field: str, value: Scalar,
                       name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(ATTRIBUTE_EQUALITY, name, table=table, field=field,
                              value=value)


def attribute_inequality(table: Optional[str], field: str, value: Scalar,
                         name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(ATTRIBUTE_INEQUALITY, name, table=table, field=field,
                              value=value)


def uniqueness(table: Optional[str], field: str, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(UNIQUENESS, name, table=table, field=field)


def sequentiality(table: Optional[str], field: str, group_by: Optional[str] = None,
                  name: Optional[str] = None) -> InvariantSpec:
    """Assigned ids per group must form a duplicate-free, gap-free interval."""
    return InvariantSpec.make(SEQUENTIALITY, name, table=table, field=field,
                              group_by=group_by)


def foreign_key(src_table: Optional[str], src_field: str,
                dst_table: Optional[str], dst_field: str,
                cascade: bool = False, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(FOREIGN_KEY, name, src_table=src_table,
                              src_field=src_field, dst_table=dst_table,
                              dst_field=dst_field, cascade=cascade)


def secondary_index(table: Optional[str], field: str, index: str,
                    name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(SECONDARY_INDEX, name, table=table, field=field,
                              index=index)


def materialized_view(view: ViewFunction, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(MATERIALIZED_VIEW, name or view.name, view=view)


def counter_greater(counter: str, bound: int, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(COUNTER_GREATER, name, counter=counter, bound=bound)


def counter_less(counter: str, bound: int, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(COUNTER_LESS, name, counter=counter, bound=bound)


def contains(collection: str, value: Scalar, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(CONTAINS, name, collection=collection, value=value)


def not_contains(collection: str, value: Scalar, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(NOT_CONTAINS, name, collection=collection, value=value)


def size_equals(collection: str, size: int, name: Optional[str] = None) -> InvariantSpec:
    return InvariantSpec.make(SIZE_EQUALS, name, collection=collection, size=size)


def recency(name: Optional[str] = None) -> InvariantSpec:
    """Operational recency guarantee; static-analysis rule only, no state
    predicate (always evaluates valid)."""
    return InvariantSpec.make(RECENCY, name)


def _invalid(spec: InvariantSpec, items: Iterable[str], detail: str) -> ValidityVerdict:
    return ValidityVerdict(False, Witness(spec.name, tuple(items), detail))


def _eval_rows_constraint(spec: InvariantSpec, view: LogicalView, want_equal: bool) -> ValidityVerdict:
    table = spec.param("table")
    field = spec.param("field")
    value = spec.param("value")
    for item, row in view.rows_of(table).items():
        if field not in row:
            continue
        if want_equal and row[field] != value:
            return _invalid(spec, [item], f"{field}={row[field]!r}, required ={value!r}")
        if not want_equal and row[field] == value:
            return _invalid(spec, [item], f"{field} carries forbidden value {value!r}")
    return VALID


def _eval_uniqueness(spec: InvariantSpec, view: LogicalView) -> ValidityVerdict:
    table = spec.param("table")
    field = spec.param("field")
    seen: dict[Scalar, str] = {}
    for item in sorted(view.rows_of(table)):
        row = view.rows[item]
        if field not in row or row[field] is None:
            continue
        value = row[field]
        if value in seen:
            return _invalid(spec, [seen[value], item], f"value {value!r} duplicated")
        seen[value] = item
    return VALID


def _eval_sequentiality(spec: InvariantSpec, view: LogicalView) -> ValidityVerdict:
    table = spec.param("table")
    field = spec.param("field")
    group_by = spec.param("group_by")
    groups: dict[object, list[tuple[int, str]]] = {}
    for item, row in view.rows_of(table).items():
        if field not in row or row[field] is None:
            continue
        key = row.get(group_by) if group_by else None
        groups.setdefault(key, []).append((row[field], item))  # type: ignore[arg-type]
    for key, pairs in groups.items():
        ids = sorted(i for i, _ in pairs)
        if not ids:
            continue
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            items = [it for i, it in pairs if i == dup]
            return _invalid(spec, items, f"id {dup} assigned twice (group {key!r})")
        if ids[-1] - ids[0] != len(ids) - 1:
            return _invalid(spec, [it for _, it in pairs],
                            f"ids {ids} are not a gap-free interval (group {key!r})")
    return VALID


def _eval_foreign_key(spec: InvariantSpec, view: LogicalView) -> ValidityVerdict:
    src_table = spec.param("src_table")
    src_field = spec.param("src_field")
    dst_table = spec.param("dst_table")
    dst_field = spec.param("dst_field")
    cascade = bool(spec.param("cascade"))
    targets = {row.get(dst_field) for row in view.rows_of(dst_table).values()
               if row.get(dst_field) is not None}
    for item, row in view.rows_of(src_table).items():
        ref = row.get(src_field)
        if ref is None:
            continue
        if ref in targets:
            continue
        if cascade and ((dst_field, ref) in view.cascades
                        or (src_field, ref) in view.cascades):
            continue
        return _invalid(spec, [item], f"dangling {src_field}={ref!r}")
    return VALID


def _eval_secondary_index(spec: InvariantSpec, view: LogicalView) -> ValidityVerdict:
    table = spec.param("table")
    field = spec.param("field")
    index = spec.param("index")
    for item, row in view.rows_of(table).items():
        value = row.get(field)
        if value is None:
            continue
        entry = f"{index}:{value}:{item}"
        if entry not in view.rows:
            return _invalid(spec, [item], f"{field}={value!r} missing index entry {entry}")
    return VALID


def _eval_materialized_view(spec: InvariantSpec, view: LogicalView) -> ValidityVerdict:
    vf: ViewFunction = spec.param("view")  # type: ignore[assignment]
    expected = vf.recompute(view)
    stored = view.counter(vf.view_counter)
    if stored != expected:
        return _invalid(spec, [vf.view_counter],
                        f"stored {stored} != recomputed {expected}")
    return VALID


def evaluate(spec: InvariantSpec, s: DatabaseState,
             schema: Optional[Schema] = None) -> ValidityVerdict:
    """Evaluate one invariant; total and deterministic over any state."""
    if schema is not None:
        _check_schema(spec, schema)
    view = visible_state(s)
    return evaluate_on_view(spec, view, s)


def evaluate_on_view(spec: InvariantSpec, view: LogicalView,
                     s: DatabaseState) -> ValidityVerdict:
    cls = spec.cls
    if cls == ATTRIBUTE_EQUALITY:
        return _eval_rows_constraint(spec, view, want_equal=True)
    if cls == ATTRIBUTE_INEQUALITY:
        return _eval_rows_constraint(spec, view, want_equal=False)
    if cls == UNIQUENESS:
        return _eval_uniqueness(spec, view)
    if cls == SEQUENTIALITY:
        return _eval_sequentiality(spec, view)
    if cls == FOREIGN_KEY:
        return _eval_foreign_key(spec, view)
    if cls == SECONDARY_INDEX:
        return _eval_secondary_index(spec, view)
    if cls == MATERIALIZED_VIEW:
        return _eval_materialized_view(spec, view)
    if cls == COUNTER_GREATER:
        value = view.counter(spec.param("counter"))  # type: ignore[arg-type]
        bound = spec.param("bound")
        if not value > bound:  # type: ignore[operator]
            return _invalid(spec, [spec.param("counter")],  # type: ignore[list-item]
                            f"value {value} not > {bound}")
        return VALID
    if cls == COUNTER_LESS:
        value = view.counter(spec.param("counter"))  # type: ignore[arg-type]
        bound = spec.param("bound")
        if not value < bound:  # type: ignore[operator]
            return _invalid(spec, [spec.param("counter")],  # type: ignore[list-item]
                            f"value {value} not < {bound}")
        return VALID
    if cls == CONTAINS:
        coll = spec.param("collection")
        if not view.collection(coll).contains(spec.param("value")):  # type: ignore[arg-type]
            return _invalid(spec, [coll], f"required element {spec.param('value')!r} absent")  # type: ignore[list-item]
        return VALID
    if cls == NOT_CONTAINS:
        coll = spec.param("collection")
        if view.collection(coll).contains(spec.param("value")):  # type: ignore[arg-type]
            return _invalid(spec, [coll], f"forbidden element {spec.param('value')!r} present")  # type: ignore[list-item]
        return VALID
    if cls == SIZE_EQUALS:
        coll = spec.param("collection")
        size = view.collection(coll).size()  # type: ignore[arg-type]
        if size != spec.param("size"):
            return _invalid(spec, [coll], f"size {size} != {spec.param('size')}")  # type: ignore[list-item]
        return VALID
    if cls == RECENCY:
        return VALID
    raise ModelError(f"unknown invariant class {cls!r}")


def _check_schema(spec: InvariantSpec, schema: Schema) -> None:
    for key in ("table", "src_table", "dst_table"):
        table = spec.param(key)
        if table is not None and table not in schema.tables:
            raise SchemaMismatch(f"{spec.name}: unknown table {table!r}")
    counter = spec.param("counter")
    if counter is not None and not schema.knows(str(counter)):
        raise SchemaMismatch(f"{spec.name}: unknown counter {counter!r}")
    collection = spec.param("collection")
    if collection is not None and not schema.knows(str(collection)):
        raise SchemaMismatch(f"{spec.name}: unknown collection {collection!r}")


def evaluate_all(specs: Sequence[InvariantSpec], s: DatabaseState,
                 schema: Optional[Schema] = None) -> ValidityVerdict:
    """Conjunction of the spec list, evaluated as a single invariant."""
    view = visible_state(s)
    if schema is not None:
        for spec in specs:
            _check_schema(spec, schema)
    for spec in specs:
        verdict = evaluate_on_view(spec, view, s)
        if not verdict.valid:
            return verdict
    return VALID


def is_valid(specs: Sequence[InvariantSpec], s: DatabaseState) -> ValidityVerdict:
    return evaluate_all(specs, s)


def checker(specs: Sequence[InvariantSpec],
            schema: Optional[Schema] = None) -> Callable[[DatabaseState], ValidityVerdict]:
    specs = tuple(specs)
    return lambda s: evaluate_all(specs, s, schema)


def maintain_view(vf: ViewFunction, s: DatabaseState, writer: str = "view",
                  seq_start: int = 0, origin: str = "view",
                  ts: Optional[int] = None) -> tuple[Version, ...]:
    """Adjustment events that reconcile the stored view counter with a full
    recomputation over `s`; empty when the view is already consistent."""
    view = visible_state(s)
    delta = vf.recompute(view) - view.counter(vf.view_counter)
    if delta == 0:
        return ()
    op = COUNTER_INC if delta > 0 else COUNTER_DEC
    stamp = s.max_ts() + 1 if ts is None else ts
    return (counter_event(vf.view_counter, op, writer, seq_start, origin,
                          stamp, abs(delta)),)


def maintenance_for(specs: Sequence[InvariantSpec]):
    """Commit-time view maintenance for every materialized-view spec.

    Adjustments are written by the committing transaction itself, which
    keeps replica states convergent: merge of two maintained states needs
    no further adjustment for additive views, and any residual difference
    is surfaced by the materialized-view invariant rather than patched.
    """
    views = [spec.param("view") for spec in specs if spec.cls == MATERIALIZED_VIEW]
    if not views:
        return None

    def maintain(candidate: DatabaseState, writer: str, seq: int, origin: str,
                 ts: int) -> list[Version]:
        out: list[Version] = []
        working = candidate
        for vf in views:
            extra = maintain_view(vf, working, writer, seq + len(out), origin, ts)
            out.extend(extra)
            if extra:
                working = working.with_versions(extra)
        return out

    return maintain


def run_transaction(t: Transaction, r: ReplicaState, specs: Sequence[InvariantSpec],
                    schema: Optional[Schema] = None,
                    ) -> tuple[TransactionOutcome, ReplicaState]:
    """Execute with the spec conjunction as the invariant, maintaining any
    materialized views at commit time."""
    return apply_transaction(t, r, invariant=checker(specs, None), schema=schema,
                             maintenance=maintenance_for(specs))


def cascade_delete(s: DatabaseState, field: str, value: Scalar,
                   writer: str = "cascade", seq_start: int = 0,
                   origin: str = "cascade", ts: Optional[int] = None,
                   ) -> tuple[Version, ...]:
    """Tombstones for every visible record whose `field` equals `value`,
    plus a marker recording the cascade so the fact survives merge."""
    view = visible_state(s)
    stamp = s.max_ts() + 1 if ts is None else ts
    out: list[Version] = []
    seq = seq_start
    for item in sorted(view.rows):
        if view.rows[item].get(field) == value:
            out.append(tombstone(item, writer, seq, origin, stamp))
            seq += 1
    out.append(cascade_marker(field, value, writer, seq, origin, stamp))
    return tuple(out)
