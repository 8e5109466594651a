"""Declarative workload specs: schema, invariants, transactions, generator.

A spec is a YAML document (JSON works too) naming tables and ADT items,
the invariant list, parameterized transaction templates, an optional
literal initial state, and generation weights.  Parsing resolves every
reference against the schema and reports all problems at once with their
locations; a parsed spec round-trips through serialization unchanged.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Optional

import yaml

from . import invariants as inv
from .checker import CheckedWorkload, TxnIds
from .classify import operation_classes
from .invariants import InvariantSpec, ViewFunction, evaluate_all
from .state import (
    AbortIf,
    CascadeDelete,
    CollectionOp,
    CounterOp,
    D0,
    DatabaseState,
    Delete,
    IndexedUpdate,
    Insert,
    Op,
    Read,
    Schema,
    Transaction,
    Update,
    Version,
    collection_event,
    counter_event,
    transaction,
    visible_state,
)


class WorkloadSpecError(Exception):
    """Carries every resolution problem found, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class TransactionTemplate:
    name: str
    params: tuple[tuple[str, Any], ...]       # param name -> distribution doc
    ops: tuple[tuple[str, Any], ...]          # normalized op documents
    declared_writeset: tuple[str, ...] = ()   # table names, optional


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    schema: Schema
    tables: tuple[tuple[str, tuple[str, ...]], ...]   # table -> fields
    specs: tuple[InvariantSpec, ...]
    templates: tuple[TransactionTemplate, ...]
    initial: DatabaseState
    weights: tuple[tuple[str, float], ...]
    document: str                                     # canonical serialization

    def fields_of(self, table: str) -> tuple[str, ...]:
        return dict(self.tables).get(table, ())

    def template(self, name: str) -> TransactionTemplate:
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(name)

    def checked_workload(self) -> CheckedWorkload:
        return CheckedWorkload(self.name, self.specs, _builder(self),
                               initial=self.initial, schema=self.schema)

    def serialize(self) -> str:
        return self.document


# --- parsing -----------------------------------------------------------------

_INVARIANT_CLASSES = {
    "attribute-equality", "attribute-inequality", "uniqueness",
    "sequentiality", "foreign-key", "secondary-index-consistency",
    "materialized-view", "counter-greater-than", "counter-less-than",
    "contains", "not-contains", "size-equals", "recency",
}

_OP_KINDS = {"insert", "update", "update-indexed", "delete", "cascade-delete",
             "counter", "collection", "read", "abort-if"}


def parse_spec(text: str) -> WorkloadSpec:
    """Parse and fully resolve a spec document.

    Raises WorkloadSpecError listing every unresolved reference, malformed
    section, or invalid initial state, each tagged with its location.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise WorkloadSpecError([f"syntax: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise WorkloadSpecError(["document must be a mapping"])

    problems: list[str] = []

    def fail(where: str, what: str) -> None:
        problems.append(f"{where}: {what}")

    name = doc.get("name") or "workload"
    schema_doc = doc.get("schema") or {}
    tables_doc = schema_doc.get("tables") or {}
    tables: dict[str, tuple[str, ...]] = {}
    for tname, tdoc in tables_doc.items():
        fields = tuple((tdoc or {}).get("fields") or ())
        tables[str(tname)] = tuple(str(f) for f in fields)
    counters = tuple(str(c) for c in schema_doc.get("counters") or ())
    collections = tuple(str(c) for c in schema_doc.get("collections") or ())
    indexes = tuple(str(i) for i in schema_doc.get("indexes") or ())
    schema = Schema(tables=frozenset(tables), counters=frozenset(counters),
                    collections=frozenset(collections), indexes=frozenset(indexes))

    def known_field(table: str, field_name: str) -> bool:
        return field_name in tables.get(table, ())

    def check_table(where: str, table: Any) -> Optional[str]:
        if table is None:
            return None
        if table not in tables:
            fail(where, f"unknown table {table!r}")
            return None
        return str(table)

    def check_field(where: str, table: Optional[str], field_name: Any) -> str:
        if table is not None and not known_field(table, str(field_name)):
            fail(where, f"field {field_name!r} not in table {table!r}")
        return str(field_name)

    def check_counter(where: str, counter: Any) -> str:
        if counter not in counters:
            fail(where, f"unknown counter {counter!r}")
        return str(counter)

    def check_collection(where: str, coll: Any) -> str:
        if coll not in collections:
            fail(where, f"unknown collection {coll!r}")
        return str(coll)

    # invariants ---------------------------------------------------------
    specs: list[InvariantSpec] = []
    for i, idoc in enumerate(doc.get("invariants") or ()):
        where = f"invariants[{i}]"
        cls = (idoc or {}).get("class")
        if cls not in _INVARIANT_CLASSES:
            fail(where, f"unknown invariant class {cls!r}")
            continue
        iname = idoc.get("name")
        try:
            specs.append(_parse_invariant(cls, iname, idoc, where, check_table,
                                          check_field, check_counter,
                                          check_collection))
        except _Skip:
            pass

    # transactions -------------------------------------------------------
    templates: list[TransactionTemplate] = []
    for tname, tdoc in (doc.get("transactions") or {}).items():
        where = f"transactions.{tname}"
        tdoc = tdoc or {}
        params = tuple(sorted((str(k), v) for k, v in (tdoc.get("params") or {}).items()))
        param_names = {k for k, _ in params} | {"nonce"}
        ops_norm: list[tuple[str, Any]] = []
        for j, opdoc in enumerate(tdoc.get("ops") or ()):
            opwhere = f"{where}.ops[{j}]"
            kind = (opdoc or {}).get("op")
            if kind not in _OP_KINDS:
                fail(opwhere, f"unknown op kind {kind!r}")
                continue
            _check_op(kind, opdoc, opwhere, fail, check_table, check_field,
                      check_counter, check_collection, param_names, tables)
            ops_norm.append((str(kind), {k: v for k, v in opdoc.items() if k != "op"}))
        declared = tuple(str(t) for t in tdoc.get("writeset") or ())
        for t in declared:
            check_table(f"{where}.writeset", t)
        templates.append(TransactionTemplate(str(tname), params, tuple(ops_norm),
                                             declared))

    # generator ----------------------------------------------------------
    weights_doc = (doc.get("generator") or {}).get("weights") or {}
    weights: list[tuple[str, float]] = []
    known_txns = {t.name for t in templates}
    for k, v in weights_doc.items():
        if k not in known_txns:
            fail(f"generator.weights.{k}", "unknown transaction")
        else:
            weights.append((str(k), float(v)))
    if not weights:
        weights = [(t.name, 1.0) for t in templates]

    # initial state ------------------------------------------------------
    initial = _parse_initial(doc.get("initial") or {}, tables, counters,
                             collections, fail)

    if problems:
        raise WorkloadSpecError(problems)

    verdict = evaluate_all(specs, initial)
    if not verdict.valid:
        raise WorkloadSpecError(
            [f"initial: state violates {verdict.witness.invariant}: "
             f"{verdict.witness.detail}"])

    canonical = yaml.safe_dump(doc, sort_keys=True)
    templates.sort(key=lambda t: t.name)    # canonical order survives round trips
    return WorkloadSpec(str(name), schema, tuple(sorted(tables.items())),
                        tuple(specs), tuple(templates), initial,
                        tuple(sorted(weights)), canonical)


class _Skip(Exception):
    pass


def _parse_invariant(cls, iname, idoc, where, check_table, check_field,
                     check_counter, check_collection) -> InvariantSpec:
    if cls in ("attribute-equality", "attribute-inequality"):
        table = check_table(where, idoc.get("table"))
        field = check_field(where, table, idoc.get("field"))
        maker = (inv.attribute_equality if cls == "attribute-equality"
                 else inv.attribute_inequality)
        return maker(table, field, idoc.get("value"), name=iname)
    if cls == "uniqueness":
        table = check_table(where, idoc.get("table"))
        return inv.uniqueness(table, check_field(where, table, idoc.get("field")),
                              name=iname)
    if cls == "sequentiality":
        table = check_table(where, idoc.get("table"))
        return inv.sequentiality(table, check_field(where, table, idoc.get("field")),
                                 group_by=idoc.get("group-by"), name=iname)
    if cls == "foreign-key":
        src = idoc.get("src") or {}
        dst = idoc.get("dst") or {}
        st = check_table(f"{where}.src", src.get("table"))
        dt = check_table(f"{where}.dst", dst.get("table"))
        return inv.foreign_key(st, check_field(f"{where}.src", st, src.get("field")),
                               dt, check_field(f"{where}.dst", dt, dst.get("field")),
                               cascade=bool(idoc.get("cascade")), name=iname)
    if cls == "secondary-index-consistency":
        table = check_table(where, idoc.get("table"))
        return inv.secondary_index(table,
                                   check_field(where, table, idoc.get("field")),
                                   str(idoc.get("index")), name=iname)
    if cls == "materialized-view":
        vdoc = idoc.get("view") or {}
        table = vdoc.get("table")
        if table is not None:
            table = check_table(f"{where}.view", table)
        counter = check_counter(f"{where}.view", vdoc.get("counter"))
        vf = ViewFunction(iname or f"view-{counter}", counter,
                          str(vdoc.get("aggregate", "count")), table,
                          field=vdoc.get("field"),
                          filter_field=vdoc.get("filter-field"),
                          filter_value=vdoc.get("filter-value"),
                          source_counters=tuple(vdoc.get("source-counters") or ()))
        return inv.materialized_view(vf, name=iname)
    if cls in ("counter-greater-than", "counter-less-than"):
        counter = check_counter(where, idoc.get("counter"))
        maker = (inv.counter_greater if cls == "counter-greater-than"
                 else inv.counter_less)
        return maker(counter, int(idoc.get("bound", 0)), name=iname)
    if cls in ("contains", "not-contains"):
        coll = check_collection(where, idoc.get("collection"))
        maker = inv.contains if cls == "contains" else inv.not_contains
        return maker(coll, idoc.get("value"), name=iname)
    if cls == "size-equals":
        coll = check_collection(where, idoc.get("collection"))
        return inv.size_equals(coll, int(idoc.get("size", 0)), name=iname)
    if cls == "recency":
        return inv.recency(name=iname)
    raise _Skip()


def _check_op(kind, opdoc, where, fail, check_table, check_field,
              check_counter, check_collection, param_names, tables) -> None:
    def check_params(value: Any) -> None:
        for ref in _param_refs(value):
            if ref not in param_names and ref != "row-of":
                fail(where, f"unknown parameter {{{ref}}}")

    if kind in ("insert", "update", "update-indexed", "delete", "read"):
        table = check_table(where, opdoc.get("table"))
        check_params(opdoc.get("row"))
        if kind in ("insert", "update"):
            for field_name, value in (opdoc.get("set") or {}).items():
                check_field(where, table, field_name)
                check_params(value)
        if kind == "update-indexed":
            check_field(where, table, opdoc.get("field"))
            check_params(opdoc.get("value"))
    elif kind == "cascade-delete":
        field_name = str(opdoc.get("field"))
        if not any(field_name in fields for fields in tables.values()):
            fail(where, f"cascade field {field_name!r} not in any table")
        check_params(opdoc.get("value"))
    elif kind == "counter":
        check_counter(where, opdoc.get("counter"))
        if opdoc.get("kind", "inc") not in ("inc", "dec", "assign"):
            fail(where, f"bad counter kind {opdoc.get('kind')!r}")
    elif kind == "collection":
        check_collection(where, opdoc.get("collection"))
        if opdoc.get("kind", "add") not in ("add", "del"):
            fail(where, f"bad collection kind {opdoc.get('kind')!r}")
        check_params(opdoc.get("value"))


def _param_refs(value: Any) -> list[str]:
    if not isinstance(value, str):
        return []
    out, i = [], 0
    while True:
        start = value.find("{", i)
        if start < 0:
            return out
        end = value.find("}", start)
        if end < 0:
            return out
        out.append(value[start + 1:end])
        i = end + 1


def _parse_initial(doc, tables, counters, collections, fail) -> DatabaseState:
    versions: list[Version] = []
    seq = 0
    for table, rows in (doc.get("rows") or {}).items():
        if table not in tables:
            fail(f"initial.rows.{table}", "unknown table")
            continue
        for r in rows or ():
            key = r.get("row")
            fields = r.get("set") or {}
            for f in fields:
                if f not in tables[table]:
                    fail(f"initial.rows.{table}", f"field {f!r} not in schema")
            versions.append(Version.make(f"{table}:{key}", "init", seq, "init",
                                         0, dict(fields)))
            seq += 1
    for counter, value in (doc.get("counters") or {}).items():
        if counter not in counters:
            fail(f"initial.counters.{counter}", "unknown counter")
            continue
        op = "inc" if value >= 0 else "dec"
        if value != 0:
            versions.append(counter_event(counter, op, "init", seq, "init", 0,
                                          abs(int(value))))
            seq += 1
    for coll, values in (doc.get("collections") or {}).items():
        if coll not in collections:
            fail(f"initial.collections.{coll}", "unknown collection")
            continue
        for v in values or ():
            versions.append(collection_event(coll, "add", v, "init", seq,
                                             "init", 0))
            seq += 1
    return DatabaseState.of(versions) if versions else D0


# --- instantiation -----------------------------------------------------------

def _substitute(value: Any, bound: dict[str, Any]) -> Any:
    if not isinstance(value, str):
        return value
    refs = _param_refs(value)
    if not refs:
        return value
    if value == "{" + refs[0] + "}":
        return bound[refs[0]]          # exact reference keeps its type
    out = value
    for ref in refs:
        out = out.replace("{" + ref + "}", str(bound[ref]))
    return out


def _draw_param(pdoc: Any, rng: random.Random, ids: TxnIds,
                view_rows: dict[str, list[str]]) -> Any:
    if isinstance(pdoc, dict):
        if "int" in pdoc:
            lo, hi = pdoc["int"]
            return rng.randint(int(lo), int(hi))
        if "choice" in pdoc:
            return rng.choice(list(pdoc["choice"]))
        if "row-of" in pdoc:
            keys = view_rows.get(str(pdoc["row-of"]), [])
            return rng.choice(keys) if keys else None
        if "nonce" in pdoc:
            return ids.nonce()
    return pdoc


def instantiate(spec: WorkloadSpec, template: TransactionTemplate,
                rng: random.Random, ids: TxnIds,
                state: DatabaseState) -> Transaction:
    """One concrete transaction from a template: draw parameters, render
    item keys and values, and fix the writer id."""
    view = visible_state(state)
    view_rows: dict[str, list[str]] = {}
    for item in sorted(view.rows):
        table, _, key = item.partition(":")
        view_rows.setdefault(table, []).append(key)

    bound: dict[str, Any] = {}
    missing_row = False
    for pname, pdoc in template.params:
        value = _draw_param(pdoc, rng, ids, view_rows)
        if value is None and isinstance(pdoc, dict) and "row-of" in pdoc:
            missing_row = True
        bound[pname] = value
    bound["nonce"] = ids.nonce()

    if missing_row:
        # No visible row to target; emit an explicitly aborting transaction
        # so the caller can move on.
        return transaction(template.name, ids.writer(template.name),
                           f"r.{ids.tag}", [AbortIf(True)])

    ops: list[Op] = []
    for kind, opdoc in template.ops:
        item = None
        if "table" in opdoc:
            item = f"{opdoc['table']}:{_substitute(opdoc.get('row'), bound)}"
        if kind == "insert":
            fields = {k: _substitute(v, bound) for k, v in (opdoc.get("set") or {}).items()}
            ops.append(Insert.make(item, fields,
                                   nonce_fields=tuple(opdoc.get("nonce_fields") or ())))
        elif kind == "update":
            fields = {k: _substitute(v, bound) for k, v in (opdoc.get("set") or {}).items()}
            ops.append(Update.make(item, fields))
        elif kind == "update-indexed":
            ops.append(IndexedUpdate(item, str(opdoc["field"]),
                                     _substitute(opdoc.get("value"), bound),
                                     str(opdoc["index"])))
        elif kind == "delete":
            ops.append(Delete(item))
        elif kind == "read":
            ops.append(Read(item))
        elif kind == "cascade-delete":
            ops.append(CascadeDelete(str(opdoc["field"]),
                                     _substitute(opdoc.get("value"), bound)))
        elif kind == "counter":
            amount = _substitute(opdoc.get("amount", 1), bound)
            ops.append(CounterOp(str(opdoc["counter"]), str(opdoc.get("kind", "inc")),
                                 int(amount)))
        elif kind == "collection":
            ops.append(CollectionOp(str(opdoc["collection"]),
                                    str(opdoc.get("kind", "add")),
                                    _substitute(opdoc.get("value"), bound)))
        elif kind == "abort-if":
            ops.append(AbortIf(bool(opdoc.get("condition", True))))
    return transaction(template.name, ids.writer(template.name),
                       f"r.{ids.tag}", ops)


def _builder(spec: WorkloadSpec):
    names = [n for n, _ in spec.weights]
    weights = [w for _, w in spec.weights]

    def build(rng: random.Random, ids: TxnIds, state: DatabaseState) -> Transaction:
        name = rng.choices(names, weights=weights, k=1)[0]
        return instantiate(spec, spec.template(name), rng, ids, state)

    return build


# --- lint --------------------------------------------------------------------

def validate_spec(spec: WorkloadSpec, samples: int = 5) -> list[str]:
    """Lint a parsed spec: invariants nothing exercises, transactions with
    no classifiable operations, writes no invariant covers, and writes
    outside a declared writeset.  Incomplete invariants are the main way
    the analysis silently under-protects, so surface them loudly."""
    warnings: list[str] = []
    rng = random.Random("lint")
    ids = TxnIds("lint")
    instances: dict[str, list[Transaction]] = {}
    for template in spec.templates:
        instances[template.name] = [
            instantiate(spec, template, rng, ids, spec.initial)
            for _ in range(samples)]

    exercised: set[str] = set()
    for template in spec.templates:
        tagged = False
        for txn in instances[template.name]:
            for s in spec.specs:
                for op in txn.ops:
                    if operation_classes(s, op):
                        exercised.add(s.name)
                        tagged = True
        mutates = any(not isinstance(op, (Read, AbortIf))
                      for txn in instances[template.name] for op in txn.ops)
        if mutates and not tagged:
            warnings.append(f"transaction {template.name!r} carries no "
                            f"operation classes relevant to any invariant")
        if template.declared_writeset:
            allowed = set(template.declared_writeset)
            for txn in instances[template.name]:
                for item in txn.static_write_items():
                    table = item.split(":", 1)[0]
                    if table not in allowed:
                        warnings.append(
                            f"transaction {template.name!r} writes {table!r} "
                            f"outside its declared writeset")
                        break
                else:
                    continue
                break

    for s in spec.specs:
        if s.cls == inv.RECENCY:
            continue
        if s.name not in exercised:
            warnings.append(f"invariant {s.name!r} is never exercised by any "
                            f"transaction")

    covered_tables: set[str] = set()
    for s in spec.specs:
        for key in ("table", "src_table", "dst_table"):
            t = s.param(key)
            if t:
                covered_tables.add(str(t))
        view = s.param("view")
        if view is not None and view.source_table:
            covered_tables.add(view.source_table)
    for template in spec.templates:
        for txn in instances[template.name]:
            for item in txn.static_write_items():
                table = item.split(":", 1)[0]
                if table in dict(spec.tables) and table not in covered_tables:
                    warnings.append(f"transaction {template.name!r} writes "
                                    f"table {table!r} with no invariant coverage")
                    break
            else:
                continue
            break

    return sorted(set(warnings))
