"""Deterministic discrete-event simulation of replicated execution.

Two strategies: coordination-free (local commit with validity checking plus
periodic anti-entropy merges) and coordinated two-phase locking against a
single partitioned store (per-item FIFO locks acquired in global item order,
remote operations costing sampled network delays).  A virtual clock makes
the coordination-cost relationships exactly measurable and every run
bit-reproducible from its seed.
"""

from __future__ import annotations

import heapq
import random
import zlib
from dataclasses import dataclass, replace
from graphlib import CycleError, TopologicalSorter
from typing import Callable, Optional, Sequence

from .checker import CheckedWorkload, TxnIds
from .invariants import evaluate_all, run_transaction
from .state import (
    D0,
    DatabaseState,
    ModelError,
    ReplicaState,
    Transaction,
    merge,
)


class SimulationError(ModelError):
    """Invalid simulator configuration or a broken run-time assertion."""


# ---------------------------------------------------------------------------
# Network model.

@dataclass(frozen=True)
class NetworkModel:
    """One-way message delay: base plus a jitter distribution."""

    kind: str = "constant"            # constant | uniform | empirical | lognormal
    base_ms: float = 1.0
    lo_ms: float = 0.0
    hi_ms: float = 0.0
    samples: tuple[float, ...] = ()
    sigma: float = 0.0

    @staticmethod
    def constant(ms: float) -> "NetworkModel":
        return NetworkModel("constant", ms)

    @staticmethod
    def uniform(lo: float, hi: float) -> "NetworkModel":
        return NetworkModel("uniform", 0.0, lo, hi)

    @staticmethod
    def empirical(samples: Sequence[float]) -> "NetworkModel":
        if not samples:
            raise SimulationError("empirical network model needs samples")
        return NetworkModel("empirical", 0.0, samples=tuple(float(s) for s in samples))

    @staticmethod
    def lognormal(median_ms: float, sigma: float) -> "NetworkModel":
        return NetworkModel("lognormal", median_ms, sigma=sigma)

    def sample(self, rng: random.Random) -> float:
        if self.kind == "constant":
            delay = self.base_ms
        elif self.kind == "uniform":
            delay = self.base_ms + rng.uniform(self.lo_ms, self.hi_ms)
        elif self.kind == "empirical":
            delay = rng.choice(self.samples)
        elif self.kind == "lognormal":
            import math
            delay = self.base_ms * math.exp(rng.gauss(0.0, self.sigma))
        else:
            raise SimulationError(f"unknown network model {self.kind!r}")
        return max(0.0, delay)


def load_latency_samples(path: str) -> list[float]:
    """One millisecond value per line; blank lines and # comments ignored."""
    out: list[float] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.append(float(line))
    return out


@dataclass(frozen=True)
class Partition:
    """Messages between the two replicas are cut during [start, end)."""

    a: int
    b: int
    start_ms: float
    end_ms: float

    def cuts(self, i: int, j: int, t: float) -> bool:
        return {i, j} == {self.a, self.b} and self.start_ms <= t < self.end_ms


@dataclass(frozen=True)
class SimConfig:
    replicas: int = 2
    clients: int = 2
    duration_ms: float = 1000.0
    strategy: str = "coordination-free"      # | "coordinated-2pl"
    anti_entropy_ms: float = 50.0
    think_ms: float = 10.0
    exec_ms: float = 0.0
    seed: int | str = 0
    network: NetworkModel = NetworkModel.constant(1.0)
    partitions: tuple[Partition, ...] = ()
    homes: tuple[tuple[str, int], ...] = ()  # explicit item placement overrides
    client_replicas: tuple[int, ...] = ()    # placement override, cycled

    def validate(self) -> None:
        if self.replicas < 1 or self.clients < 1:
            raise SimulationError("replicas and clients must be >= 1")
        if self.duration_ms <= 0 or self.anti_entropy_ms <= 0:
            raise SimulationError("durations must be positive")
        if self.strategy == "coordination-free" and self.think_ms <= 0 \
                and self.exec_ms <= 0:
            raise SimulationError("coordination-free clients need think or exec time")
        for p in self.partitions:
            if not (0 <= p.a < self.replicas and 0 <= p.b < self.replicas):
                raise SimulationError(f"partition names unknown replica: {p}")

    def replica_of_client(self, c: int) -> int:
        if self.client_replicas:
            return self.client_replicas[c % len(self.client_replicas)]
        return c % self.replicas


def inject_partition(cfg: SimConfig, pair: tuple[int, int],
                     interval: tuple[float, float]) -> SimConfig:
    """A copy of the config with one more partition window."""
    a, b = pair
    start, end = interval
    if end < start:
        raise SimulationError("partition interval reversed")
    return replace(cfg, partitions=cfg.partitions
                   + (Partition(a, b, float(start), float(end)),))


def _partitioned(cfg: SimConfig, i: int, j: int, t: float) -> bool:
    return any(p.cuts(i, j, t) for p in cfg.partitions)


# ---------------------------------------------------------------------------
# Metrics.

def _percentiles(samples: list[float]) -> tuple[tuple[str, float], ...]:
    if not samples:
        return (("mean", 0.0), ("p50", 0.0), ("p95", 0.0), ("p99", 0.0), ("max", 0.0))
    ordered = sorted(samples)

    def pick(q: float) -> float:
        return ordered[min(len(ordered) - 1, int(q * len(ordered)))]

    mean = sum(ordered) / len(ordered)
    return (("mean", mean), ("p50", pick(0.50)), ("p95", pick(0.95)),
            ("p99", pick(0.99)), ("max", ordered[-1]))


@dataclass(frozen=True)
class Metrics:
    """Result of one simulated run; equal configs and seeds give equal
    metrics, bit for bit."""

    strategy: str
    attempts: int
    committed: int
    aborted: int
    duration_ms: float
    throughput_per_s: float
    latency_ms: tuple[tuple[str, float], ...]
    messages_sent: int
    coordination_stall_ms: float
    invariant_violations: int
    convergence_achieved: bool
    converged_at_duration: bool
    serializable: bool
    first_violation: Optional[str] = None

    def latency(self, label: str) -> float:
        return dict(self.latency_ms)[label]


# ---------------------------------------------------------------------------
# Event queue.

class EventQueue:
    # Safety valve: a zero-cost cycle (no think time, no exec time, and no
    # network hop) would otherwise spin forever at one virtual instant.
    MAX_EVENTS = 20_000_000

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self.now = 0.0
        self._processed = 0

    def push(self, t: float, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn))

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now = max(self.now, t)
            self._processed += 1
            if self._processed > self.MAX_EVENTS:
                raise SimulationError(
                    "event budget exhausted; the configuration makes no "
                    "progress in virtual time (all costs zero?)")
            fn()


# ---------------------------------------------------------------------------
# Coordination-free execution.

def run_coordination_free(workload: CheckedWorkload, cfg: SimConfig) -> Metrics:
    """Clients commit locally after a validity check; replicas gossip full
    states every anti-entropy interval except across active partitions.

    After the run, partitions heal and two more full exchange rounds drain
    the system; convergence then means every replica pair is equal.
    """
    cfg.validate()
    if cfg.strategy != "coordination-free":
        raise SimulationError(f"config strategy is {cfg.strategy!r}")
    q = EventQueue()
    net_rng = random.Random(f"{cfg.seed}|net")
    replicas: list[ReplicaState] = [
        ReplicaState(f"s{i}", workload.initial) for i in range(cfg.replicas)]
    stats = _Stats()

    def check_after_merge(idx: int, merged: DatabaseState, t: float) -> None:
        verdict = evaluate_all(workload.specs, merged)
        if not verdict.valid:
            stats.violations += 1
            if stats.first_violation is None:
                stats.first_violation = (f"t={t:.3f}ms replica s{idx}: "
                                         f"{verdict.witness.invariant}: "
                                         f"{verdict.witness.detail}")

    def client_loop(c: int, rng: random.Random, ids: TxnIds) -> Callable[[], None]:
        rid = cfg.replica_of_client(c)

        def submit() -> None:
            t = q.now
            if t >= cfg.duration_ms:
                return
            txn = workload.build(rng, ids, replicas[rid].state)
            outcome, replicas[rid] = run_transaction(
                txn, replicas[rid], workload.specs, workload.schema)
            stats.attempts += 1
            done = t + cfg.exec_ms
            if outcome.committed:
                stats.committed += 1
                stats.latencies.append(cfg.exec_ms)
            else:
                stats.aborted += 1
            q.push(done + cfg.think_ms, submit)

        return submit

    for c in range(cfg.clients):
        rng = random.Random(f"{cfg.seed}|client{c}")
        q.push(0.0, client_loop(c, rng, TxnIds(f"c{c}")))

    def gossip(t: float, honor_partitions: bool) -> None:
        for i in range(cfg.replicas):
            for j in range(cfg.replicas):
                if i == j:
                    continue
                if honor_partitions and _partitioned(cfg, i, j, t):
                    continue
                snapshot = replicas[i].state
                delay = cfg.network.sample(net_rng)
                stats.messages += 1

                def deliver(j=j, snapshot=snapshot) -> None:
                    before = replicas[j].state
                    merged = merge(before, snapshot)
                    if merged != before:
                        replicas[j] = replicas[j].with_state(merged)
                        check_after_merge(j, merged, q.now)

                q.push(t + delay, deliver)

    def tick() -> None:
        t = q.now
        gossip(t, honor_partitions=True)
        nxt = t + cfg.anti_entropy_ms
        if nxt < cfg.duration_ms:
            q.push(nxt, tick)

    q.push(cfg.anti_entropy_ms, tick)
    q.run()

    converged_at_duration = _all_equal(replicas)

    # Heal everything and run two final exchange rounds.
    for _ in range(2):
        gossip(q.now, honor_partitions=False)
        q.run()
    convergence = _all_equal(replicas)

    return Metrics(
        strategy=cfg.strategy,
        attempts=stats.attempts,
        committed=stats.committed,
        aborted=stats.aborted,
        duration_ms=cfg.duration_ms,
        throughput_per_s=stats.committed / (cfg.duration_ms / 1000.0),
        latency_ms=_percentiles(stats.latencies),
        messages_sent=stats.messages,
        coordination_stall_ms=0.0,
        invariant_violations=stats.violations,
        convergence_achieved=convergence,
        converged_at_duration=converged_at_duration,
        serializable=True,
        first_violation=stats.first_violation,
    )


def _all_equal(replicas: list[ReplicaState]) -> bool:
    return all(r.state == replicas[0].state for r in replicas[1:])


class _Stats:
    def __init__(self) -> None:
        self.attempts = 0
        self.committed = 0
        self.aborted = 0
        self.latencies: list[float] = []
        self.messages = 0
        self.violations = 0
        self.stall_ms = 0.0
        self.first_violation: Optional[str] = None


# ---------------------------------------------------------------------------
# Coordinated execution (two-phase locking over a partitioned store).

class _Lock:
    __slots__ = ("holder", "queue", "grants")

    def __init__(self) -> None:
        self.holder: Optional[int] = None
        self.queue: list[tuple[int, Callable[[], None]]] = []
        self.grants: list[int] = []      # txn ids in grant order


def _txn_items(txn: Transaction) -> list[str]:
    from .state import CascadeDelete, Read
    items: set[str] = set(txn.static_write_items())
    for op in txn.ops:
        if isinstance(op, Read):
            items.add(op.item)
        elif isinstance(op, CascadeDelete):
            raise SimulationError(
                "cascade deletes have value-dependent lock sets; the "
                "coordinated runner only supports statically known items")
    return sorted(items)


def run_coordinated(workload: CheckedWorkload, cfg: SimConfig) -> Metrics:
    """Textbook two-phase locking against one logically global store.

    Locks are acquired one item at a time in global item order (deadlock
    freedom); a remote lock request costs one sampled delay to reach the
    item's home, and its release costs another, so a saturated contended
    item completes one transaction per sampled delay.  Messages that would
    cross an active partition wait for the heal.  The committed history is
    checked for conflict-serializability against the lock grant order.
    """
    cfg.validate()
    q = EventQueue()
    net_rng = random.Random(f"{cfg.seed}|net")
    store = ReplicaState("global", workload.initial)
    stats = _Stats()
    locks: dict[str, _Lock] = {}
    homes = dict(cfg.homes)
    commit_order: list[int] = []

    def home_of(item: str) -> int:
        if item in homes:
            return homes[item]
        return zlib.crc32(item.encode()) % cfg.replicas

    def lock_of(item: str) -> _Lock:
        if item not in locks:
            locks[item] = _Lock()
        return locks[item]

    def heal_time(i: int, j: int, t: float) -> float:
        # Earliest instant at or after t when no partition cuts the pair.
        cur = t
        for _ in range(len(cfg.partitions) + 1):
            active = [p for p in cfg.partitions if p.cuts(i, j, cur)]
            if not active:
                return cur
            cur = max(p.end_ms for p in active)
        return cur

    def send(src: int, dst: int, fn: Callable[[], None]) -> float:
        """Message from src replica to dst; returns arrival time."""
        t = q.now
        if src == dst:
            q.push(t, fn)
            return t
        stats.messages += 1
        depart = heal_time(src, dst, t)
        arrive = depart + cfg.network.sample(net_rng)
        q.push(arrive, fn)
        return arrive

    class Txn:
        _next_id = 0

        def __init__(self, txn: Transaction, client_replica: int, submit_ms: float):
            Txn._next_id += 1
            self.id = Txn._next_id
            self.txn = txn
            self.replica = client_replica
            self.submit_ms = submit_ms
            self.items = _txn_items(txn)
            self.acquired: list[str] = []
            self.done: Optional[Callable[[bool], None]] = None

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
            nonlocal store
            stats.stall_ms += max(0.0, (q.now - cfg.exec_ms) - self.submit_ms)
            outcome, new_store = run_transaction(
                self.txn, store, workload.specs, workload.schema)
            committed = outcome.committed
            if committed:
                store = new_store
                commit_order.append(self.id)
            self.release_all()
            latency = q.now - self.submit_ms
            if committed:
                stats.committed += 1
                stats.latencies.append(latency)
            else:
                stats.aborted += 1
            if self.done is not None:
                self.done(committed)

        def release_all(self) -> None:
            for item in self.acquired:
                lock = lock_of(item)

                def freed(lock=lock) -> None:
                    lock.holder = None
                    if lock.queue:
                        _, grant = lock.queue.pop(0)
                        lock.holder = -1  # reserved until grant callback runs
                        grant()

                send(self.replica, home_of(item), freed)

    def client_loop(c: int, rng: random.Random, ids: TxnIds) -> Callable[[], None]:
        rid = cfg.replica_of_client(c)

        def submit() -> None:
            t = q.now
            if t >= cfg.duration_ms:
                return
            txn = workload.build(rng, ids, store.state)
            stats.attempts += 1
            record = Txn(txn, rid, t)

            def done(_committed: bool) -> None:
                q.push(q.now + cfg.think_ms, submit)

            record.done = done
            record.acquire_next()

        return submit

    for c in range(cfg.clients):
        rng = random.Random(f"{cfg.seed}|client{c}")
        q.push(0.0, client_loop(c, rng, TxnIds(f"c{c}")))
    q.run()

    serializable = _conflict_serializable(locks, set(commit_order))
    if not serializable:
        raise SimulationError("committed history is not conflict-serializable")

    return Metrics(
        strategy=cfg.strategy,
        attempts=stats.attempts,
        committed=stats.committed,
        aborted=stats.aborted,
        duration_ms=cfg.duration_ms,
        throughput_per_s=stats.committed / (cfg.duration_ms / 1000.0),
        latency_ms=_percentiles(stats.latencies),
        messages_sent=stats.messages,
        coordination_stall_ms=stats.stall_ms,
        invariant_violations=0,
        convergence_achieved=True,
        converged_at_duration=True,
        serializable=True,
    )


def _conflict_serializable(locks: dict[str, _Lock], committed: set[int]) -> bool:
    graph: dict[int, set[int]] = {}
    for lock in locks.values():
        order = [t for t in lock.grants if t in committed]
        for earlier, later in zip(order, order[1:]):
            if earlier != later:
                graph.setdefault(later, set()).add(earlier)
    try:
        list(TopologicalSorter(graph).static_order())
        return True
    except CycleError:
        return False


# ---------------------------------------------------------------------------
# Atomic-commitment latency model.

@dataclass(frozen=True)
class CommitModelResult:
    protocol: str
    servers: int
    rounds: int
    mean_latency_ms: float
    throughput_per_s: float


def model_commit_throughput(servers: int, protocol: str,
                            rtt_samples: Sequence[float], rounds: int = 2000,
                            seed: int | str = 0) -> CommitModelResult:
    """Monte-Carlo upper bound on commit throughput from atomic commitment.

    Centralized commit waits on the slowest of N coordinator-to-server
    round trips; decentralized commit broadcasts in parallel, so a round
    waits on the slowest of the N*N one-way (half round trip) messages.
    Per-round draws come from a seed-derived stream prefix, so throughput
    is monotone non-increasing in N for a fixed seed, as tail latency
    predicts.  Rounds are pipelined back to back: throughput = rounds over
    total simulated time.
    """
    if servers < 2:
        raise SimulationError("commit model needs at least two servers")
    if protocol not in ("c2pc", "d2pc"):
        raise SimulationError(f"unknown protocol {protocol!r}")
    if not rtt_samples:
        raise SimulationError("empty-samples: need a latency distribution")
    samples = tuple(float(s) for s in rtt_samples)
    total_ms = 0.0
    for r in range(rounds):
        rng = random.Random(f"{seed}|round{r}")
        if protocol == "c2pc":
            draws = [rng.choice(samples) for _ in range(servers)]
            latency = max(draws)
        else:
            draws = [rng.choice(samples) / 2.0 for _ in range(servers * servers)]
            latency = max(draws)
        total_ms += latency
    mean = total_ms / rounds
    return CommitModelResult(protocol, servers, rounds, mean,
                             rounds / (total_ms / 1000.0))
