"""Desk-scale TPC-C New-Order workload over the replicated-state model.

The schema keeps only what the twelve consistency conditions exercise:
warehouses, districts (always ten per warehouse, each with a next-order-id
record), customers, orders, new-orders, order lines, stock, and payment
history.  Year-to-date totals, balances, and next-ids are counter items so
concurrent updates merge; order rows are immutable inserts keyed by a
temporary unique id, bound to a sequential real id at commit time through a
per-district lookup table.

Two execution strategies: the coordination-avoiding plan (everything local
except a single-site id increment at the district's home replica) and a
two-phase-locking baseline against one partitioned store.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from . import invariants as inv
from .adt import counter_value, nonce
from .classify import PairFinding, classify_transaction
from .invariants import InvariantSpec, ViewFunction
from .sim import (
    EventQueue,
    NetworkModel,
    Partition,
    SimulationError,
    _Lock,
    _conflict_serializable,
    _percentiles,
)
from .state import (
    CascadeDelete,
    CounterOp,
    DatabaseState,
    IndexedUpdate,
    Insert,
    LogicalView,
    ModelError,
    Read,
    ReplicaState,
    Transaction,
    TransactionOutcome,
    Update,
    Version,
    counter_event,
    tombstone,
    transaction,
    visible_state,
)

DISTRICTS_PER_WAREHOUSE = 10


class ItemNotFound(ModelError):
    """An order referenced an item id outside the catalog."""


@dataclass(frozen=True)
class TpccConfig:
    warehouses: int = 2
    items: int = 100
    customers_per_district: int = 30

    servers: int = 2
    clients_per_server: int = 2
    duration_ms: float = 1000.0
    strategy: str = "coordination-avoiding"   # | "coordinated-2pl"
    distributed_fraction: float = 0.10
    payment_fraction: float = 0.10
    bad_item_fraction: float = 0.0
    delivery_interval_ms: float = 150.0
    anti_entropy_ms: float = 50.0
    think_ms: float = 4.0
    exec_ms: float = 0.2
    seed: int | str = 0
    network: NetworkModel = NetworkModel.constant(5.0)
    partitions: tuple[Partition, ...] = ()
    check_intermediate: bool = False

    @property
    def districts(self) -> int:
        return DISTRICTS_PER_WAREHOUSE

    def home(self, w: int) -> int:
        return (w - 1) % self.servers

    def validate(self) -> None:
        if self.warehouses < 1 or self.items < 1 or self.customers_per_district < 1:
            raise SimulationError("schema sizes must be >= 1")
        if self.servers < 1 or self.clients_per_server < 1:
            raise SimulationError("servers and clients must be >= 1")
        if self.think_ms <= 0 and self.exec_ms <= 0:
            raise SimulationError("clients need think or exec time")
        if not 0 <= self.distributed_fraction <= 1:
            raise SimulationError("distributed fraction out of range")


def price_cents(item: int) -> int:
    return 100 + (item * 37) % 900


# item naming -----------------------------------------------------------------

def k_wh(w): return f"wh:{w}"
def k_dist(w, d): return f"dist:{w}:{d}"
def k_cust(w, d, c): return f"cust:{w}:{d}:{c}"
def k_item(i): return f"item:{i}"
def k_wytd(w): return f"wytd:{w}"
def k_dytd(w, d): return f"dytd:{w}:{d}"
def k_cbal(w, d, c): return f"cbal:{w}:{d}:{c}"
def k_cpay(w, d, c): return f"cpay:{w}:{d}:{c}"
def k_noid(w, d): return f"noid:{w}:{d}"
def k_dlvd(w, d): return f"dlvd:{w}:{d}"
def k_sqty(w, i): return f"sqty:{w}:{i}"
def k_ord(w, d, key): return f"ord:{w}:{d}:{key}"
def k_no(w, d, key): return f"no:{w}:{d}:{key}"
def k_ol(w, d, key, n): return f"ol:{w}:{d}:{key}:{n}"
def k_map(w, d, key): return f"map:{w}:{d}:{key}"
def k_hist(w, d, c, key): return f"hist:{w}:{d}:{c}:{key}"


def build_initial_versions(cfg: TpccConfig) -> list[Version]:
    """Static catalog rows plus initial stock; balances and YTDs start at
    zero so the consistency conditions hold over the empty history."""
    out: list[Version] = []
    seq = 0

    def add(item: str, fields: dict) -> None:
        nonlocal seq
        out.append(Version.make(item, "load", seq, "load", 0, fields))
        seq += 1

    for i in range(1, cfg.items + 1):
        add(k_item(i), {"price": price_cents(i)})
    for w in range(1, cfg.warehouses + 1):
        add(k_wh(w), {"w": w})
        for d in range(1, cfg.districts + 1):
            add(k_dist(w, d), {"w": w, "d": d})
            for c in range(1, cfg.customers_per_district + 1):
                add(k_cust(w, d, c), {"c": c})
        for i in range(1, cfg.items + 1):
            out.append(counter_event(k_sqty(w, i), "inc", "load", seq, "load", 0, 100))
            seq += 1
    return out


def initial_state(cfg: TpccConfig) -> DatabaseState:
    return DatabaseState.of(build_initial_versions(cfg))


# ---------------------------------------------------------------------------
# New-Order plan.

@dataclass(frozen=True)
class OrderLine:
    item: int
    supply_w: int
    qty: int


@dataclass(frozen=True)
class OrderRequest:
    w: int
    d: int
    c: int
    lines: tuple[OrderLine, ...]


def plan_new_order(req: OrderRequest, tmp: str, writer: str, origin: str,
                   ts: int, cfg: TpccConfig,
                   view: Optional[LogicalView] = None) -> list[Version]:
    """Versions for one order written under its temporary id: the order row,
    its new-order row, order lines, and stock decrements.  Everything is
    atomically visible together, so the foreign-key and rollup conditions
    hold at every replica that sees any of it."""
    for line in req.lines:
        if not 1 <= line.item <= cfg.items:
            raise ItemNotFound(f"item {line.item}")
        if not 1 <= line.supply_w <= cfg.warehouses:
            raise ItemNotFound(f"warehouse {line.supply_w}")
    out: list[Version] = []
    seq = 0

    def add(v: Version) -> None:
        nonlocal seq
        out.append(v)
        seq += 1

    w, d = req.w, req.d
    add(Version.make(k_ord(w, d, tmp), writer, seq, origin, ts,
                     {"c": req.c, "ol_cnt": len(req.lines), "carrier": None,
                      "tmp": tmp}))
    add(Version.make(k_no(w, d, tmp), writer, seq, origin, ts, {"tmp": tmp}))
    for n, line in enumerate(req.lines, start=1):
        amount = line.qty * price_cents(line.item)
        add(Version.make(k_ol(w, d, tmp, n), writer, seq, origin, ts,
                         {"item": line.item, "supply_w": line.supply_w,
                          "qty": line.qty, "amount": amount, "delivery_d": None}))
        add(counter_event(k_sqty(line.supply_w, line.item), "dec", writer, seq,
                          origin, ts, line.qty))
    return out


def id_binding(req: OrderRequest, tmp: str, real_id: int, writer: str,
               origin: str, ts: int, seq: int = 0) -> list[Version]:
    """The commit-time binding: one next-id increment for the district plus
    the lookup-table row mapping the temporary id to the real one."""
    return [
        counter_event(k_noid(req.w, req.d), "inc", writer, seq, origin, ts, 1),
        Version.make(k_map(req.w, req.d, tmp), writer, seq + 1, origin, ts,
                     {"oid": real_id}),
    ]


def new_order_coordination_avoiding(req: OrderRequest, replica: ReplicaState,
                                    cfg: TpccConfig,
                                    ) -> tuple[TransactionOutcome, ReplicaState]:
    """Single-site form of the coordination-avoiding plan: generate a
    temporary id, write the order under it, and bind the real id by
    incrementing the district's next-id record.

    This form runs entirely on one replica (tests and single-server use);
    the simulator splits the id binding out to the district's home replica,
    which is the plan's one residual coordination point.
    """
    try:
        tmp_value, replica = nonce(replica)
    except Exception:  # pragma: no cover - nonce cannot fail
        raise
    tmp = str(tmp_value)
    writer = f"no.{tmp}"
    ts = replica.state.max_ts() + 1
    try:
        produced = plan_new_order(req, tmp, writer, replica.replica_id, ts, cfg)
    except ItemNotFound:
        return TransactionOutcome("abort", frozenset(), "explicit-abort"), replica
    real_id = counter_value(replica.state, k_noid(req.w, req.d)) + 1
    produced += id_binding(req, tmp, real_id, writer, replica.replica_id, ts,
                           seq=len(produced))
    new_state = replica.state.with_versions(produced)
    return (TransactionOutcome("commit", frozenset(produced)),
            replica.with_state(new_state))


def resolve_order_id(s: DatabaseState, w: int, d: int, tmp: str) -> Optional[int]:
    """The real id for a committed order, or None while the id-lookup row
    has not yet reached this state.  Temporary ids never escape id reads."""
    view = visible_state(s)
    row = view.row(k_map(w, d, tmp))
    if row is None:
        return None
    return row["oid"]  # type: ignore[return-value]


def payment_versions(w: int, d: int, c: int, amount: int, key: str, writer: str,
                     origin: str, ts: int) -> list[Version]:
    return [
        counter_event(k_wytd(w), "inc", writer, 0, origin, ts, amount),
        counter_event(k_dytd(w, d), "inc", writer, 1, origin, ts, amount),
        counter_event(k_cbal(w, d, c), "dec", writer, 2, origin, ts, amount),
        counter_event(k_cpay(w, d, c), "inc", writer, 3, origin, ts, amount),
        Version.make(k_hist(w, d, c, key), writer, 4, origin, ts,
                     {"amount": amount}),
    ]


def delivery_versions(w: int, d: int, key: str, order_row: dict,
                      ol_rows: list[tuple[str, dict]], carrier: int,
                      when: int, writer: str, origin: str, ts: int,
                      ) -> list[Version]:
    """One order's delivery: consume the new-order row, stamp the carrier
    and delivery dates, and credit the customer, all atomically visible."""
    out = [tombstone(k_no(w, d, key), writer, 0, origin, ts)]
    seq = 1
    updated = dict(order_row)
    updated["carrier"] = carrier
    out.append(Version.make(k_ord(w, d, key), writer, seq, origin, ts, updated))
    seq += 1
    total = 0
    for item, row in ol_rows:
        stamped = dict(row)
        stamped["delivery_d"] = when
        out.append(Version.make(item, writer, seq, origin, ts, stamped))
        seq += 1
        total += row["amount"]
    out.append(counter_event(k_cbal(w, d, order_row["c"]), "inc", writer, seq,
                             origin, ts, total))
    seq += 1
    out.append(counter_event(k_dlvd(w, d), "inc", writer, seq, origin, ts, 1))
    return out


# ---------------------------------------------------------------------------
# The twelve consistency conditions.

@dataclass(frozen=True)
class AuditRow:
    number: int
    description: str
    ok: bool
    detail: str = ""


@dataclass
class _Order:
    key: str
    w: int
    d: int
    row: dict
    oid: Optional[int]
    has_new_order: bool = False
    ol_rows: list = field(default_factory=list)   # (item, row) pairs


def _collect(view: LogicalView) -> dict[tuple[int, int], dict[str, _Order]]:
    orders: dict[tuple[int, int], dict[str, _Order]] = {}
    for item, row in view.rows.items():
        parts = item.split(":")
        if parts[0] == "ord":
            w, d, key = int(parts[1]), int(parts[2]), parts[3]
            order = orders.setdefault((w, d), {}).setdefault(
                key, _Order(key, w, d, {}, None))
            order.row = row
    for item, row in view.rows.items():
        parts = item.split(":")
        if parts[0] in ("no", "ol", "map"):
            w, d, key = int(parts[1]), int(parts[2]), parts[3]
            order = orders.setdefault((w, d), {}).get(key)
            if order is None:
                order = orders[(w, d)].setdefault(key, _Order(key, w, d, {}, None))
            if parts[0] == "no":
                order.has_new_order = True
            elif parts[0] == "ol":
                order.ol_rows.append((item, row))
            else:
                order.oid = row["oid"]
    return orders


def audit(s: DatabaseState, cfg: TpccConfig,
          include_sequential: bool = True) -> list[AuditRow]:
    """Evaluate the consistency conditions over one state.

    The two sequential-id conditions (2 and 3) only hold once id bindings
    and order rows have met, so intermediate per-replica checks pass
    include_sequential=False and the converged-state audit checks all 12.
    """
    view = visible_state(s)
    orders = _collect(view)
    rows: list[AuditRow] = []

    def check(number: int, description: str, failures: list[str]) -> None:
        rows.append(AuditRow(number, description, not failures,
                             "; ".join(failures[:3])))

    hist: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for item, row in view.rows.items():
        parts = item.split(":")
        if parts[0] == "hist":
            w, d, c = int(parts[1]), int(parts[2]), int(parts[3])
            hist.setdefault((w, d), []).append((c, row["amount"]))

    # 1. Warehouse YTD equals the sum of its district YTDs.
    fails = []
    for w in range(1, cfg.warehouses + 1):
        total = sum(view.counter(k_dytd(w, d)) for d in range(1, cfg.districts + 1))
        if view.counter(k_wytd(w)) != total:
            fails.append(f"w{w}: {view.counter(k_wytd(w))} != {total}")
    check(1, "warehouse YTD = sum of district YTDs", fails)

    if include_sequential:
        # 2. Next-id record agrees with the newest order and new-order ids.
        fails = []
        for (w, d), by_key in sorted(orders.items()):
            next_id = view.counter(k_noid(w, d))
            oids = sorted(o.oid for o in by_key.values() if o.oid is not None)
            unmapped = [o.key for o in by_key.values() if o.oid is None]
            if unmapped:
                fails.append(f"w{w}d{d}: unmapped orders {unmapped}")
                continue
            if oids != list(range(1, next_id + 1)):
                fails.append(f"w{w}d{d}: ids {oids} vs next-id {next_id}")
            no_oids = [o.oid for o in by_key.values() if o.has_new_order]
            if no_oids and max(no_oids) != next_id:
                fails.append(f"w{w}d{d}: max pending {max(no_oids)} != {next_id}")
        check(2, "district next-id = max(order id) = max(new-order id)", fails)

        # 3. Pending new-order ids are a contiguous block.
        fails = []
        for (w, d), by_key in sorted(orders.items()):
            no_oids = sorted(o.oid for o in by_key.values()
                             if o.has_new_order and o.oid is not None)
            if no_oids and no_oids[-1] - no_oids[0] + 1 != len(no_oids):
                fails.append(f"w{w}d{d}: pending ids {no_oids} not contiguous")
        check(3, "new-order ids are contiguous per district", fails)

    # 4. District order-line counts roll up.
    fails = []
    for (w, d), by_key in sorted(orders.items()):
        declared = sum(o.row.get("ol_cnt", 0) for o in by_key.values() if o.row)
        actual = sum(len(o.ol_rows) for o in by_key.values())
        if declared != actual:
            fails.append(f"w{w}d{d}: {declared} != {actual}")
    check(4, "per-district order-line rollup", fails)

    # 5. Carrier unset exactly while the order is pending.  Entries known
    # only through an id binding have no order row yet; condition 11 owns
    # the new-order-to-order reference.
    fails = []
    for by_key in orders.values():
        for o in by_key.values():
            if not o.row:
                continue
            pending = o.row.get("carrier") is None
            if pending != o.has_new_order:
                fails.append(f"{o.key}: carrier={o.row.get('carrier')} "
                             f"pending={o.has_new_order}")
    check(5, "order carrier set iff order delivered", fails)

    # 6. Per-order line counts.
    fails = [f"{o.key}: {o.row.get('ol_cnt')} != {len(o.ol_rows)}"
             for by_key in orders.values() for o in by_key.values()
             if o.row and o.row.get("ol_cnt") != len(o.ol_rows)]
    check(6, "order line count matches line rows", fails)

    # 7. Delivery dates set exactly with the carrier.
    fails = []
    for by_key in orders.values():
        for o in by_key.values():
            if not o.row:
                continue
            delivered = o.row.get("carrier") is not None
            for item, row in o.ol_rows:
                if (row.get("delivery_d") is not None) != delivered:
                    fails.append(item)
    check(7, "delivery date set iff carrier set", fails)

    # 8 / 9. YTD totals match payment history.
    fails8, fails9 = [], []
    for w in range(1, cfg.warehouses + 1):
        wh_total = 0
        for d in range(1, cfg.districts + 1):
            d_total = sum(a for _, a in hist.get((w, d), []))
            wh_total += d_total
            if view.counter(k_dytd(w, d)) != d_total:
                fails9.append(f"w{w}d{d}")
        if view.counter(k_wytd(w)) != wh_total:
            fails8.append(f"w{w}")
    check(8, "warehouse YTD = sum of history amounts", fails8)
    check(9, "district YTD = sum of history amounts", fails9)

    # 10 / 12. Customer balances match deliveries and payments.
    delivered_by_cust: dict[tuple[int, int, int], int] = {}
    for by_key in orders.values():
        for o in by_key.values():
            if o.row and o.row.get("carrier") is not None:
                key = (o.w, o.d, o.row["c"])
                delivered_by_cust[key] = (delivered_by_cust.get(key, 0)
                                          + sum(r["amount"] for _, r in o.ol_rows))
    paid_by_cust: dict[tuple[int, int, int], int] = {}
    for (w, d), entries in hist.items():
        for c, amount in entries:
            paid_by_cust[(w, d, c)] = paid_by_cust.get((w, d, c), 0) + amount
    fails10, fails12 = [], []
    for w in range(1, cfg.warehouses + 1):
        for d in range(1, cfg.districts + 1):
            for c in range(1, cfg.customers_per_district + 1):
                bal = view.counter(k_cbal(w, d, c))
                pay = view.counter(k_cpay(w, d, c))
                delivered = delivered_by_cust.get((w, d, c), 0)
                paid = paid_by_cust.get((w, d, c), 0)
                if bal != delivered - paid:
                    fails10.append(f"w{w}d{d}c{c}: {bal} != {delivered}-{paid}")
                if bal + pay != delivered:
                    fails12.append(f"w{w}d{d}c{c}: {bal}+{pay} != {delivered}")
    check(10, "customer balance = deliveries - payments", fails10)
    check(12, "balance + YTD payment = delivered amounts", fails12)

    # 11. Every pending new-order references an order row.
    fails = [o.key for by_key in orders.values() for o in by_key.values()
             if o.has_new_order and not o.row]
    check(11, "new-orders reference orders", fails)

    rows.sort(key=lambda r: r.number)
    return rows


def ids_gap_free(s: DatabaseState, cfg: TpccConfig) -> bool:
    view = visible_state(s)
    orders = _collect(view)
    for (w, d), by_key in orders.items():
        oids = sorted(o.oid for o in by_key.values() if o.oid is not None)
        if oids != list(range(1, len(oids) + 1)):
            return False
    return True


# ---------------------------------------------------------------------------
# Static classification of the twelve conditions.

@dataclass(frozen=True)
class TpccInvariantRow:
    number: int
    description: str
    type_label: str         # MV | S_ID | FK | S_ID+FK
    transactions: str       # paper attribution: N / P / D letters
    iconfluent: bool
    offending: tuple[PairFinding, ...]


def _classification_specs() -> list[tuple[int, str, str, str, InvariantSpec]]:
    mv = inv.materialized_view
    vf = ViewFunction
    return [
        (1, "YTD wh sales = sum(YTD district sales)", "MV", "P",
         mv(vf("wh-ytd-rollup", "wytd:_", "sum", None,
               source_counters=("dytd:_",)), name="inv-1")),
        (2, "Per-district order IDs are sequential", "S_ID+FK", "N, D",
         inv.sequentiality("ord", "oid", name="inv-2")),
        (3, "New order IDs are sequentially assigned", "S_ID", "N, D",
         inv.sequentiality("no", "oid", name="inv-3")),
        (4, "Per-district, item order count = roll-up", "MV", "N",
         mv(vf("district-line-rollup", "~rollup4", "count", "ol"), name="inv-4")),
        (5, "Order carrier is set iff order is pending", "FK", "N, D",
         inv.foreign_key("ord", "tmp", "no", "tmp", cascade=True, name="inv-5")),
        (6, "Per-order item count = line item roll-up", "MV", "N",
         mv(vf("order-line-rollup", "~rollup6", "count", "ol"), name="inv-6")),
        (7, "Delivery date set iff carrier ID set", "FK", "D",
         inv.secondary_index("ol", "delivery_d", "carrier-pair", name="inv-7")),
        (8, "YTD wh = sum(historical wh)", "MV", "D",
         mv(vf("wh-history-rollup", "wytd:_", "sum", "hist", field="amount"),
            name="inv-8")),
        (9, "YTD district = sum(historical district)", "MV", "P",
         mv(vf("district-history-rollup", "dytd:_", "sum", "hist",
               field="amount"), name="inv-9")),
        (10, "Customer balance matches expenditures", "MV", "P, D",
         mv(vf("balance-rollup", "cbal:_", "sum", "ol", field="amount"),
            name="inv-10")),
        (11, "Orders reference New-Orders table", "FK", "N",
         inv.foreign_key("no", "tmp", "ord", "tmp", name="inv-11")),
        (12, "Per-customer balance = cust. expenditures", "MV", "P, D",
         mv(vf("balance-payment-rollup", "cbal:_", "sum", "ol", field="amount",
               source_counters=("cpay:_",)), name="inv-12")),
    ]


def _symbolic_transactions() -> dict[str, Transaction]:
    """Operation-class skeletons of the three workload transactions; the id
    fields here represent the sequential assignment the plan performs."""
    new_order = transaction("new-order", "sym.n", "sym", [
        Read("item:_"),
        Insert.make("ord:_", {"oid": 1, "c": 1, "ol_cnt": 1, "carrier": None,
                              "tmp": "K"}, nonce_fields=("tmp",)),
        Insert.make("no:_", {"oid": 1, "tmp": "K"}, nonce_fields=("tmp",)),
        Insert.make("ol:_", {"item": 1, "amount": 1, "delivery_d": None}),
        Insert.make("map:_", {"oid": 1}),
        CounterOp("sqty:_", "dec", 1),
    ])
    payment = transaction("payment", "sym.p", "sym", [
        CounterOp("wytd:_", "inc", 1),
        CounterOp("dytd:_", "inc", 1),
        CounterOp("cbal:_", "dec", 1),
        CounterOp("cpay:_", "inc", 1),
        Insert.make("hist:_", {"amount": 1}),
    ])
    delivery = transaction("delivery", "sym.d", "sym", [
        CascadeDelete("tmp", "K"),
        Update.make("ord:_", {"carrier": 1}),
        IndexedUpdate("ol:_", "delivery_d", 1, "carrier-pair"),
        CounterOp("cbal:_", "inc", 1),
        CounterOp("dlvd:_", "inc", 1),
    ])
    return {"N": new_order, "P": payment, "D": delivery}


def classify_tpcc() -> list[TpccInvariantRow]:
    """Derive the twelve-row classification by pairing each encoded
    condition with the workload transactions' operation classes."""
    txns = _symbolic_transactions()
    rows: list[TpccInvariantRow] = []
    for number, description, type_label, letters, spec in _classification_specs():
        offending: list[PairFinding] = []
        for txn in txns.values():
            report = classify_transaction(txn, [spec])
            offending.extend(report.offending)
        rows.append(TpccInvariantRow(number, description, type_label, letters,
                                     not offending, tuple(offending)))
    return rows


# ---------------------------------------------------------------------------
# Simulation.

@dataclass(frozen=True)
class TpccMetrics:
    strategy: str
    servers: int
    warehouses: int
    attempts: int
    committed: int
    aborted: int
    new_order_commits: int
    payment_commits: int
    deliveries: int
    duration_ms: float
    new_order_throughput_per_s: float
    latency_ms: tuple[tuple[str, float], ...]
    messages_sent: int
    coordination_stall_ms: float
    intermediate_violations: int
    convergence_achieved: bool
    audit_rows: tuple[AuditRow, ...]
    ids_gap_free: bool

    @property
    def audit_clean(self) -> bool:
        return all(r.ok for r in self.audit_rows)

    def latency(self, label: str) -> float:
        return dict(self.latency_ms)[label]


class _Node:
    """One simulated server: a mutable version set plus an arrival-order log
    so anti-entropy can ship full-state semantics incrementally, and a
    per-item index so hot paths resolve single items without a full view."""

    def __init__(self, idx: int, initial: list[Version]):
        self.idx = idx
        self.rid = f"s{idx}"
        self.versions: set[Version] = set(initial)
        self.log: list[Version] = list(initial)
        self.by_item: dict[str, list[Version]] = {}
        for v in self.log:
            self.by_item.setdefault(v.item, []).append(v)
        self.max_ts = max((v.ts for v in initial), default=0)
        self.sent_upto: dict[int, int] = {}
        self.nonce = 0
        self.next_oid: dict[tuple[int, int], int] = {}
        self.delivered: dict[tuple[int, int], int] = {}
        self.tmp_of_oid: dict[tuple[int, int, int], str] = {}

    def absorb(self, versions: Iterable[Version]) -> bool:
        changed = False
        for v in versions:
            if v not in self.versions:
                self.versions.add(v)
                self.log.append(v)
                self.by_item.setdefault(v.item, []).append(v)
                if v.ts > self.max_ts:
                    self.max_ts = v.ts
                changed = True
        return changed

    def row(self, item: str) -> Optional[dict]:
        """Last-writer-wins resolution of one plain item; None when absent
        or tombstoned."""
        versions = self.by_item.get(item)
        if not versions:
            return None
        from .state import KIND_TOMBSTONE
        if any(v.kind == KIND_TOMBSTONE for v in versions):
            return None
        return max(versions, key=lambda v: v.order_key).user_fields()

    def state(self) -> DatabaseState:
        return DatabaseState(frozenset(self.versions))


def _heal_time(partitions: Sequence[Partition], i: int, j: int, t: float) -> float:
    cur = t
    for _ in range(len(partitions) + 1):
        active = [p for p in partitions if p.cuts(i, j, cur)]
        if not active:
            return cur
        cur = max(p.end_ms for p in active)
    return cur


class _TpccStats:
    def __init__(self) -> None:
        self.attempts = 0
        self.committed = 0
        self.aborted = 0
        self.new_orders = 0
        self.payments = 0
        self.deliveries = 0
        self.latencies: list[float] = []
        self.messages = 0
        self.stall_ms = 0.0
        self.violations = 0


def _request(cfg: TpccConfig, rng: random.Random, w: int) -> OrderRequest:
    d = rng.randint(1, cfg.districts)
    c = rng.randint(1, cfg.customers_per_district)
    n_lines = rng.randint(5, 15)
    distributed = cfg.warehouses > 1 and rng.random() < cfg.distributed_fraction
    lines = []
    remote_line = rng.randrange(n_lines) if distributed else -1
    for n in range(n_lines):
        item = rng.randint(1, cfg.items)
        supply = w
        if n == remote_line:
            supply = rng.choice([x for x in range(1, cfg.warehouses + 1) if x != w])
        lines.append(OrderLine(item, supply, rng.randint(1, 10)))
    return OrderRequest(w, d, c, tuple(lines))


INTERMEDIATE_CONDITIONS = (1, 4, 5, 6, 7, 8, 9, 10, 11, 12)


def _run_coordination_avoiding(cfg: TpccConfig) -> TpccMetrics:
    q = EventQueue()
    net_rng = random.Random(f"{cfg.seed}|net")
    initial = build_initial_versions(cfg)
    nodes = [_Node(i, initial) for i in range(cfg.servers)]
    stats = _TpccStats()

    def check_intermediate(node: _Node) -> None:
        if not cfg.check_intermediate:
            return
        rows = audit(node.state(), cfg, include_sequential=False)
        stats.violations += sum(1 for r in rows if not r.ok)

    def send(src: int, dst: int, fn: Callable[[], None], stall_ok: bool) -> None:
        t = q.now
        if src == dst:
            q.push(t, fn)
            return
        if any(p.cuts(src, dst, t) for p in cfg.partitions):
            if not stall_ok:
                return                      # gossip is dropped, not queued
            depart = _heal_time(cfg.partitions, src, dst, t)
        else:
            depart = t
        stats.messages += 1
        q.push(depart + cfg.network.sample(net_rng), fn)

    # --- client transactions -------------------------------------------

    def commit_new_order(node: _Node, req: OrderRequest, submit_ms: float,
                         rng: random.Random) -> None:
        tmp = f"{node.rid}.{node.nonce}"
        node.nonce += 1
        writer = f"no.{tmp}"
        ts = node.max_ts + 1
        produced = plan_new_order(req, tmp, writer, node.rid, ts, cfg)
        home = cfg.home(req.w)

        def bind_at_home() -> None:
            hn = nodes[home]
            key = (req.w, req.d)
            real = hn.next_oid.get(key, 0) + 1
            hn.next_oid[key] = real
            hn.tmp_of_oid[(req.w, req.d, real)] = tmp
            binding = id_binding(req, tmp, real, writer, hn.rid,
                                 hn.max_ts + 1)
            hn.absorb(binding)
            check_intermediate(hn)

            def finish() -> None:
                node.absorb(produced)
                node.absorb(binding)
                node.max_ts = max(node.max_ts, ts)
                stats.committed += 1
                stats.new_orders += 1
                stats.latencies.append(q.now - submit_ms)
                if home != node.idx:
                    stats.stall_ms += q.now - submit_ms
                check_intermediate(node)

            send(home, node.idx, finish, stall_ok=True)

        send(node.idx, home, bind_at_home, stall_ok=True)

    def commit_payment(node: _Node, rng: random.Random, w: int,
                       submit_ms: float) -> None:
        d = rng.randint(1, cfg.districts)
        c = rng.randint(1, cfg.customers_per_district)
        amount = rng.randint(100, 5000)
        key = f"{node.rid}.{node.nonce}"
        node.nonce += 1
        ts = node.max_ts + 1
        node.absorb(payment_versions(w, d, c, amount, key, f"pay.{key}",
                                     node.rid, ts))
        node.max_ts = max(node.max_ts, ts)
        stats.committed += 1
        stats.payments += 1
        stats.latencies.append(cfg.exec_ms)
        check_intermediate(node)

    def client_loop(c: int) -> Callable[[], None]:
        rng = random.Random(f"{cfg.seed}|client{c}")
        node = nodes[c % cfg.servers]
        local_whs = [w for w in range(1, cfg.warehouses + 1)
                     if cfg.home(w) == node.idx]
        if not local_whs:
            local_whs = list(range(1, cfg.warehouses + 1))

        def submit() -> None:
            t = q.now
            if t >= cfg.duration_ms:
                return
            w = rng.choice(local_whs)
            stats.attempts += 1
            if rng.random() < cfg.payment_fraction:
                q.push(t + cfg.exec_ms,
                       lambda: (commit_payment(node, rng, w, t),
                                q.push(q.now + cfg.think_ms, submit)))
                return
            if cfg.bad_item_fraction and rng.random() < cfg.bad_item_fraction:
                stats.aborted += 1       # unknown item: abort before planning
                q.push(t + cfg.think_ms, submit)
                return
            req = _request(cfg, rng, w)
            done = t + cfg.exec_ms

            def run() -> None:
                commit_new_order(node, req, t, rng)
                q.push(q.now + cfg.think_ms, submit)

            q.push(done, run)

        return submit

    for c in range(cfg.servers * cfg.clients_per_server):
        q.push(0.0, client_loop(c))

    # --- delivery batches ----------------------------------------------

    def delivery_batch(w: int) -> Callable[[], None]:
        rng = random.Random(f"{cfg.seed}|delivery{w}")
        node = nodes[cfg.home(w)]

        def run() -> None:
            t = q.now
            if t >= cfg.duration_ms:
                return
            for d in range(1, cfg.districts + 1):
                # Deliver strictly in real-id order so the pending block
                # stays contiguous; skip until the next order has fully
                # propagated to this replica.
                while True:
                    target = node.delivered.get((w, d), 0) + 1
                    tmp = node.tmp_of_oid.get((w, d, target))
                    if tmp is None:
                        break
                    order_row = node.row(k_ord(w, d, tmp))
                    if order_row is None or node.row(k_no(w, d, tmp)) is None:
                        break           # order not fully visible here yet
                    ol_rows = []
                    for n in range(1, order_row["ol_cnt"] + 1):
                        row = node.row(k_ol(w, d, tmp, n))
                        if row is not None:
                            ol_rows.append((k_ol(w, d, tmp, n), row))
                    if len(ol_rows) != order_row["ol_cnt"]:
                        break
                    ts = node.max_ts + 1
                    node.absorb(delivery_versions(
                        w, d, tmp, order_row, ol_rows, rng.randint(1, 10),
                        int(t), f"dl.{w}.{d}.{target}", node.rid, ts))
                    node.delivered[(w, d)] = target
                    stats.deliveries += 1
                    check_intermediate(node)
            q.push(t + cfg.delivery_interval_ms, run)

        return run

    for w in range(1, cfg.warehouses + 1):
        q.push(cfg.delivery_interval_ms, delivery_batch(w))

    # --- anti-entropy ----------------------------------------------------

    def gossip(honor_partitions: bool) -> None:
        t = q.now
        for i, src in enumerate(nodes):
            for j in range(len(nodes)):
                if i == j:
                    continue
                if honor_partitions and any(p.cuts(i, j, t) for p in cfg.partitions):
                    continue
                upto = len(src.log)
                start = src.sent_upto.get(j, 0)
                if start >= upto:
                    continue
                slice_ = src.log[start:upto]
                src.sent_upto[j] = upto
                stats.messages += 1

                def deliver(j=j, slice_=slice_) -> None:
                    if nodes[j].absorb(slice_):
                        check_intermediate(nodes[j])

                q.push(t + cfg.network.sample(net_rng), deliver)

    def tick() -> None:
        gossip(honor_partitions=True)
        nxt = q.now + cfg.anti_entropy_ms
        if nxt < cfg.duration_ms:
            q.push(nxt, tick)

    q.push(cfg.anti_entropy_ms, tick)
    q.run()

    for _ in range(2):
        gossip(honor_partitions=False)
        q.run()
    converged = all(n.versions == nodes[0].versions for n in nodes[1:])
    final = nodes[0].state()

    return TpccMetrics(
        strategy="coordination-avoiding",
        servers=cfg.servers,
        warehouses=cfg.warehouses,
        attempts=stats.attempts,
        committed=stats.committed,
        aborted=stats.aborted,
        new_order_commits=stats.new_orders,
        payment_commits=stats.payments,
        deliveries=stats.deliveries,
        duration_ms=cfg.duration_ms,
        new_order_throughput_per_s=stats.new_orders / (cfg.duration_ms / 1000.0),
        latency_ms=_percentiles(stats.latencies),
        messages_sent=stats.messages,
        coordination_stall_ms=stats.stall_ms,
        intermediate_violations=stats.violations,
        convergence_achieved=converged,
        audit_rows=tuple(audit(final, cfg, include_sequential=True)),
        ids_gap_free=ids_gap_free(final, cfg),
    )


def _run_coordinated_2pl(cfg: TpccConfig) -> TpccMetrics:
    """New-Order under textbook 2PL on a single partitioned store: lock the
    district's next-id record and every stock record in global item order,
    assign the real id under the lock, release at commit."""
    q = EventQueue()
    net_rng = random.Random(f"{cfg.seed}|net")
    node = _Node(0, build_initial_versions(cfg))
    stats = _TpccStats()
    locks: dict[str, _Lock] = {}
    commit_seq: list[int] = []

    def lock_of(item: str) -> _Lock:
        if item not in locks:
            locks[item] = _Lock()
        return locks[item]

    def home_of(item: str) -> int:
        parts = item.split(":")
        w = int(parts[1])
        return cfg.home(w)

    def send(src: int, dst: int, fn: Callable[[], None]) -> None:
        t = q.now
        if src == dst:
            q.push(t, fn)
            return
        stats.messages += 1
        depart = _heal_time(cfg.partitions, src, dst, t)
        q.push(depart + cfg.network.sample(net_rng), fn)

    class NoTxn:
        _seq = 0

        def __init__(self, req: OrderRequest, replica: int, submit_ms: float,
                     done: Callable[[], None]):
            NoTxn._seq += 1
            self.id = NoTxn._seq
            self.req = req
            self.replica = replica
            self.submit_ms = submit_ms
            self.done = done
            items = {k_noid(req.w, req.d)}
            items.update(k_sqty(l.supply_w, l.item) for l in req.lines)
            self.items = sorted(items)
            self.acquired: list[str] = []

        def acquire_next(self) -> None:
            if len(self.acquired) == len(self.items):
                q.push(q.now + cfg.exec_ms, self.execute)
                return
            item = self.items[len(self.acquired)]
            lock = lock_of(item)

            def arrived() -> None:
                if lock.holder is None:
                    self.granted(item)
                else:
                    lock.queue.append((self.id, lambda: self.granted(item)))

            send(self.replica, home_of(item), arrived)

        def granted(self, item: str) -> None:
            lock = lock_of(item)
            lock.holder = self.id
            lock.grants.append(self.id)
            self.acquired.append(item)
            self.acquire_next()

        def execute(self) -> None:
            req = self.req
            stats.stall_ms += max(0.0, (q.now - cfg.exec_ms) - self.submit_ms)
            key = (req.w, req.d)
            real = node.next_oid.get(key, 0) + 1
            node.next_oid[key] = real
            ts = node.max_ts + 1
            writer = f"no2pl.{self.id}"
            produced = plan_new_order(req, str(real), writer, node.rid, ts, cfg)
            produced += id_binding(req, str(real), real, writer, node.rid, ts,
                                   seq=len(produced))
            node.absorb(produced)
            node.max_ts = max(node.max_ts, ts)
            commit_seq.append(self.id)
            stats.committed += 1
            stats.new_orders += 1
            stats.latencies.append(q.now - self.submit_ms)
            for item in self.acquired:
                lock = lock_of(item)

                def freed(lock=lock) -> None:
                    lock.holder = None
                    if lock.queue:
                        _, grant = lock.queue.pop(0)
                        lock.holder = -1
                        grant()

                send(self.replica, home_of(item), freed)
            self.done()

    def client_loop(c: int) -> Callable[[], None]:
        rng = random.Random(f"{cfg.seed}|client{c}")
        replica = c % cfg.servers
        local_whs = [w for w in range(1, cfg.warehouses + 1)
                     if cfg.home(w) == replica] or list(range(1, cfg.warehouses + 1))

        def submit() -> None:
            t = q.now
            if t >= cfg.duration_ms:
                return
            stats.attempts += 1
            req = _request(cfg, rng, rng.choice(local_whs))

            def done() -> None:
                q.push(q.now + cfg.think_ms, submit)

            NoTxn(req, replica, t, done).acquire_next()

        return submit

    for c in range(cfg.servers * cfg.clients_per_server):
        q.push(0.0, client_loop(c))
    q.run()

    if not _conflict_serializable(locks, set(commit_seq)):
        raise SimulationError("2PL history not conflict-serializable")

    final = node.state()
    return TpccMetrics(
        strategy="coordinated-2pl",
        servers=cfg.servers,
        warehouses=cfg.warehouses,
        attempts=stats.attempts,
        committed=stats.committed,
        aborted=stats.aborted,
        new_order_commits=stats.new_orders,
        payment_commits=0,
        deliveries=0,
        duration_ms=cfg.duration_ms,
        new_order_throughput_per_s=stats.new_orders / (cfg.duration_ms / 1000.0),
        latency_ms=_percentiles(stats.latencies),
        messages_sent=stats.messages,
        coordination_stall_ms=stats.stall_ms,
        intermediate_violations=0,
        convergence_achieved=True,
        audit_rows=tuple(audit(final, cfg, include_sequential=True)),
        ids_gap_free=ids_gap_free(final, cfg),
    )


def run_tpcc(cfg: TpccConfig) -> TpccMetrics:
    """Run the workload under the configured strategy; deterministic given
    the seed, including every audit row."""
    cfg.validate()
    if cfg.strategy == "coordination-avoiding":
        return _run_coordination_avoiding(cfg)
    if cfg.strategy == "coordinated-2pl":
        return _run_coordinated_2pl(cfg)
    raise SimulationError(f"unknown strategy {cfg.strategy!r}")
