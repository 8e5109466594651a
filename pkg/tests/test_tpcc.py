import pytest

from iconfluence.sim import NetworkModel, Partition
from iconfluence.state import ReplicaState, visible_state
from iconfluence.tpcc import (
    ItemNotFound,
    OrderLine,
    OrderRequest,
    TpccConfig,
    audit,
    classify_tpcc,
    initial_state,
    new_order_coordination_avoiding,
    plan_new_order,
    resolve_order_id,
    run_tpcc,
)

EXPECTED_TABLE = [
    (1, "MV", "P", True),
    (2, "S_ID+FK", "N, D", False),
    (3, "S_ID", "N, D", False),
    (4, "MV", "N", True),
    (5, "FK", "N, D", True),
    (6, "MV", "N", True),
    (7, "FK", "D", True),
    (8, "MV", "D", True),
    (9, "MV", "P", True),
    (10, "MV", "P, D", True),
    (11, "FK", "N", True),
    (12, "MV", "P, D", True),
]


class TestClassification:
    def test_twelve_rows_exact(self):
        rows = classify_tpcc()
        got = [(r.number, r.type_label, r.transactions, r.iconfluent)
               for r in rows]
        assert got == EXPECTED_TABLE

    def test_ten_of_twelve_confluent(self):
        rows = classify_tpcc()
        assert sum(r.iconfluent for r in rows) == 10

    def test_sequential_id_rows_name_the_insert_rule(self):
        rows = {r.number: r for r in classify_tpcc()}
        for number in (2, 3):
            proofs = {f.classification.proof for f in rows[number].offending}
            assert 5 in proofs


CFG = TpccConfig(warehouses=2, servers=1, items=20, customers_per_district=5)


def _req(w=1, d=1, c=1, lines=((3, 1, 2), (7, 1, 1))):
    return OrderRequest(w, d, c, tuple(OrderLine(*l) for l in lines))


class TestNewOrderPlan:
    def test_commit_produces_resolvable_order(self):
        rep = ReplicaState("s0", initial_state(CFG))
        outcome, rep = new_order_coordination_avoiding(_req(), rep, CFG)
        assert outcome.committed
        view = visible_state(rep.state)
        orders = [i for i in view.rows if i.startswith("ord:1:1:")]
        assert len(orders) == 1
        tmp = view.rows[orders[0]]["tmp"]
        assert resolve_order_id(rep.state, 1, 1, tmp) == 1

    def test_sequential_ids_from_single_site(self):
        rep = ReplicaState("s0", initial_state(CFG))
        tmps = []
        for _ in range(3):
            outcome, rep = new_order_coordination_avoiding(_req(), rep, CFG)
            assert outcome.committed
            produced = {v.item: v for v in outcome.produced}
            tmp = next(v.get("tmp") for i, v in produced.items()
                       if i.startswith("ord:"))
            tmps.append(tmp)
        ids = [resolve_order_id(rep.state, 1, 1, t) for t in tmps]
        assert ids == [1, 2, 3]

    def test_unresolved_mapping_reports_pending(self):
        rep = ReplicaState("s0", initial_state(CFG))
        assert resolve_order_id(rep.state, 1, 1, "s9.99") is None

    def test_unknown_item_rejected(self):
        with pytest.raises(ItemNotFound):
            plan_new_order(_req(lines=((999, 1, 1),)), "t", "w", "s0", 1, CFG)

    def test_unknown_item_aborts_via_library_form(self):
        rep = ReplicaState("s0", initial_state(CFG))
        outcome, rep2 = new_order_coordination_avoiding(
            _req(lines=((999, 1, 1),)), rep, CFG)
        assert not outcome.committed
        assert rep2.state == rep.state

    def test_initial_state_passes_audit(self):
        rows = audit(initial_state(CFG), CFG)
        assert all(r.ok for r in rows)


SIM = TpccConfig(servers=2, warehouses=2, items=30, customers_per_district=8,
                 duration_ms=400.0, seed=11, delivery_interval_ms=80.0)


class TestCoordinationAvoidingRun:
    def test_audit_clean_and_converged(self):
        m = run_tpcc(SIM)
        assert m.new_order_commits > 0
        assert m.payment_commits > 0
        assert m.deliveries > 0
        assert m.convergence_achieved
        assert m.audit_clean, [r for r in m.audit_rows if not r.ok]
        assert m.ids_gap_free

    def test_intermediate_states_hold_confluent_conditions(self):
        from dataclasses import replace
        cfg = replace(SIM, duration_ms=300.0, check_intermediate=True)
        m = run_tpcc(cfg)
        assert m.intermediate_violations == 0
        assert m.audit_clean

    def test_deterministic(self):
        assert run_tpcc(SIM) == run_tpcc(SIM)

    def test_remote_id_site_stalls_through_partition(self):
        # One warehouse homed on server 0; clients on server 1 must bind ids
        # remotely, and a partition stalls them without violating anything.
        from dataclasses import replace
        cfg = TpccConfig(servers=2, warehouses=1, items=20,
                         customers_per_district=5, duration_ms=400.0, seed=7,
                         payment_fraction=0.0,
                         partitions=(Partition(0, 1, 0.0, 300.0),))
        m = run_tpcc(cfg)
        assert m.new_order_commits > 0
        assert m.coordination_stall_ms > 0
        assert m.convergence_achieved
        assert m.audit_clean
        # Orders submitted during the cut could only bind after the heal.
        assert m.latency("max") >= 250.0

    def test_bad_items_abort(self):
        from dataclasses import replace
        cfg = replace(SIM, bad_item_fraction=0.2, seed=5)
        m = run_tpcc(cfg)
        assert m.aborted > 0
        assert m.audit_clean


class TestCoordinatedRun:
    def test_audit_clean_with_sequential_ids(self):
        from dataclasses import replace
        cfg = replace(SIM, strategy="coordinated-2pl")
        m = run_tpcc(cfg)
        assert m.new_order_commits > 0
        assert m.audit_clean
        assert m.ids_gap_free

    def test_distribution_sensitivity(self):
        # Remote stock locks throttle 2PL hard as the distributed fraction
        # climbs; the avoiding plan barely notices.
        base = TpccConfig(servers=2, warehouses=2, items=30,
                          customers_per_district=8, duration_ms=600.0,
                          strategy="coordinated-2pl", think_ms=1.0,
                          exec_ms=0.2, clients_per_server=8, seed=2,
                          network=NetworkModel.constant(10.0))
        from dataclasses import replace
        local = run_tpcc(replace(base, distributed_fraction=0.0))
        remote = run_tpcc(replace(base, distributed_fraction=1.0))
        assert remote.new_order_throughput_per_s < local.new_order_throughput_per_s

    def test_district_sequencers_bound_throughput(self):
        # Saturated 2PL is limited by the hot next-id records: halving the
        # network delay roughly doubles committed throughput.
        from dataclasses import replace
        base = TpccConfig(servers=2, warehouses=2, items=30,
                          customers_per_district=8, duration_ms=600.0,
                          strategy="coordinated-2pl", think_ms=0.5,
                          exec_ms=0.1, clients_per_server=10, seed=2,
                          distributed_fraction=1.0,
                          network=NetworkModel.constant(20.0))
        slow = run_tpcc(base)
        fast = run_tpcc(replace(base, network=NetworkModel.constant(10.0)))
        ratio = fast.new_order_throughput_per_s / slow.new_order_throughput_per_s
        assert 1.5 <= ratio <= 2.5
