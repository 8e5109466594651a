"""Dynamic confluence checking via diamond-shaped random executions.

Each trial builds a valid random prefix (the common ancestor), two
independent valid continuations, and then merges the branch end states.  A
violation of the invariant in the merged state is a counterexample: two
reachable, individually valid states whose merge is invalid.  Histories are
recorded as partial orders of transaction and merge invocations and can be
replayed exactly, which is how counterexamples are re-validated.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .invariants import InvariantSpec, evaluate_all, run_transaction
from .state import (
    D0,
    DatabaseState,
    ModelError,
    ReplicaState,
    Schema,
    Transaction,
    Witness,
    merge,
)

COUNTEREXAMPLE_FOUND = "counterexample-found"
NO_COUNTEREXAMPLE_FOUND = "no-counterexample-found"


class GenerationExhausted(ModelError):
    """No valid continuation was found within the retry budget."""


class ReplayInvalid(ModelError):
    """An intermediate replay state violated the invariant; the history is
    malformed."""


@dataclass(frozen=True)
class TxnIds:
    """Deterministic writer-id and fresh-value factory for one branch."""

    tag: str

    def __post_init__(self):
        object.__setattr__(self, "_n", [0])

    def _next(self) -> int:
        n = self._n[0]  # type: ignore[attr-defined]
        self._n[0] = n + 1  # type: ignore[attr-defined]
        return n

    def writer(self, name: str) -> str:
        return f"{self.tag}.{self._next()}.{name}"

    def fresh(self, prefix: str = "v") -> str:
        """A value no other branch can produce (branch-tag scoped)."""
        return f"{prefix}.{self.tag}.{self._next()}"

    def nonce(self) -> str:
        """Stands in for replica-scoped unique id generation: values from
        different branch tags can never collide."""
        return self.fresh("n")


BuildTxn = Callable[[random.Random, TxnIds, DatabaseState], Transaction]


@dataclass(frozen=True)
class CheckedWorkload:
    """A dynamically checkable workload: invariants plus a transaction
    generator that proposes the next random transaction given the current
    branch state."""

    name: str
    specs: tuple[InvariantSpec, ...]
    build: BuildTxn
    initial: DatabaseState = D0
    schema: Optional[Schema] = None


@dataclass(frozen=True)
class HistoryNode:
    node_id: int
    kind: str                     # "txn" | "merge"
    parents: tuple[int, ...]      # () means the ancestor state
    txn: Optional[Transaction] = None


@dataclass(frozen=True)
class History:
    """A partially ordered sequence of transaction and merge invocations
    from an ancestor state; the last node is the produced state."""

    ancestor: DatabaseState
    nodes: tuple[HistoryNode, ...]
    seed: str

    def transactions(self) -> list[Transaction]:
        return [n.txn for n in self.nodes if n.txn is not None]


def replay(h: History, specs: Sequence[InvariantSpec],
           schema: Optional[Schema] = None) -> DatabaseState:
    """Topologically traverse `h`, executing each transaction on an isolated
    replica and merging exactly where the history merges.

    Asserts validity at every intermediate step; a violation raises
    ReplayInvalid.  Deterministic: equal histories produce equal states.
    """
    states: dict[int, DatabaseState] = {}
    last = h.ancestor
    for node in h.nodes:
        if node.kind == "txn":
            base = states[node.parents[0]] if node.parents else h.ancestor
            rep = ReplicaState(f"replay.{node.node_id}", base)
            outcome, rep = run_transaction(node.txn, rep, specs, schema)
            if not outcome.committed:
                raise ReplayInvalid(
                    f"{node.txn.name} aborted during replay: {outcome.abort_reason}")
            states[node.node_id] = rep.state
        elif node.kind == "merge":
            a, b = node.parents
            merged = merge(states[a], states[b])
            verdict = evaluate_all(specs, merged)
            if not verdict.valid:
                raise ReplayInvalid(f"merge node {node.node_id} invalid: "
                                    f"{verdict.witness}")
            states[node.node_id] = merged
        else:
            raise ModelError(f"unknown history node kind {node.kind!r}")
        last = states[node.node_id]
    return last


class _Builder:
    """Grows one valid history: a chain of committed transactions with
    occasional forked sub-branches merged back in."""

    def __init__(self, workload: CheckedWorkload, rng: random.Random, tag: str,
                 start: DatabaseState, seed: str, merge_prob: float,
                 next_node: int = 0):
        self.workload = workload
        self.rng = rng
        self.ids = TxnIds(tag)
        self.seed = seed
        self.merge_prob = merge_prob
        self.nodes: list[HistoryNode] = []
        self.states: dict[int, DatabaseState] = {}
        self.frontier_id: Optional[int] = None
        self.frontier = start
        self.start = start
        self.next_node = next_node

    def _commit_on(self, base: DatabaseState) -> Optional[tuple[Transaction, DatabaseState]]:
        txn = self.workload.build(self.rng, self.ids, base)
        rep = ReplicaState(f"gen.{self.ids.tag}", base)
        outcome, rep = run_transaction(txn, rep, self.workload.specs,
                                       self.workload.schema)
        if not outcome.committed:
            return None
        return txn, rep.state

    def _add(self, kind: str, parents: tuple[int, ...],
             txn: Optional[Transaction], state: DatabaseState) -> int:
        node_id = self.next_node
        self.next_node += 1
        self.nodes.append(HistoryNode(node_id, kind, parents, txn))
        self.states[node_id] = state
        return node_id

    def grow(self, length: int, min_commits: int = 0, budget: int = 40) -> None:
        """Commit up to `length` transactions; stop early when no valid
        continuation turns up within the budget, which is fine as long as
        the minimum (one transaction, for a branch) was reached."""
        committed = 0
        failures = 0
        while committed < length:
            if failures >= budget:
                if committed >= min_commits:
                    return
                raise GenerationExhausted(
                    f"{self.workload.name}: no valid continuation after "
                    f"{failures} attempts (branch {self.ids.tag})")
            if self.nodes and self.rng.random() < self.merge_prob:
                if self._try_fork_merge():
                    committed += 1
                    continue
                failures += 1
                continue
            result = self._commit_on(self.frontier)
            if result is None:
                failures += 1
                continue
            txn, state = result
            parents = (self.frontier_id,) if self.frontier_id is not None else ()
            self.frontier_id = self._add("txn", parents, txn, state)
            self.frontier = state
            committed += 1

    def _try_fork_merge(self) -> bool:
        # Run one transaction from a random earlier state, then merge the
        # result back into the frontier; discarded unless the merged state
        # is valid (reachability demands valid intermediates).
        choices: list[Optional[int]] = [None] + [n.node_id for n in self.nodes]
        base_id = self.rng.choice(choices)
        base = self.start if base_id is None else self.states[base_id]
        result = self._commit_on(base)
        if result is None:
            return False
        txn, sub_state = result
        merged = merge(self.frontier, sub_state)
        if not evaluate_all(self.workload.specs, merged).valid:
            return False
        parents = (base_id,) if base_id is not None else ()
        sub_id = self._add("txn", parents, txn, sub_state)
        assert self.frontier_id is not None
        self.frontier_id = self._add("merge", (self.frontier_id, sub_id), None, merged)
        self.frontier = merged
        return True

    def history(self, ancestor: DatabaseState) -> History:
        return History(ancestor, tuple(self.nodes), self.seed)


@dataclass(frozen=True)
class DivergentPair:
    ancestor: DatabaseState
    history1: History
    history2: History
    state1: DatabaseState
    state2: DatabaseState


def generate_divergent_pair(workload: CheckedWorkload, depth: int, seed: str,
                            merge_prob: float = 0.2, retries: int = 8,
                            ) -> DivergentPair:
    """A reachable ancestor plus two independent valid continuations.

    The ancestor is built by a short random valid prefix from the initial
    state (small states are favoured; every published counterexample needs
    at most two diverging transactions).  Each branch commits between one
    and `depth` transactions, occasionally forking and merging sub-branches.

    A particular prefix can be a dead end (for a bounded counter, say), so
    the whole pair is redrawn under a derived seed a bounded number of
    times before generation is declared exhausted.
    """
    if depth < 1:
        raise ModelError("depth must be >= 1")
    last_error: Optional[GenerationExhausted] = None
    for attempt in range(retries):
        try:
            return _generate_once(workload, depth, f"{seed}~{attempt}", merge_prob)
        except GenerationExhausted as exc:
            last_error = exc
    raise GenerationExhausted(
        f"{workload.name}: no divergent pair after {retries} redraws "
        f"(last: {last_error})")


def _generate_once(workload: CheckedWorkload, depth: int, seed: str,
                   merge_prob: float) -> DivergentPair:
    rng = random.Random(f"{seed}|gen")
    prefix_len = min(_geometric(rng, 0.6), 2)

    prefix = _Builder(workload, random.Random(f"{seed}|prefix"), "pre",
                      workload.initial, seed, merge_prob)
    prefix.grow(prefix_len)
    ancestor = prefix.frontier

    lengths = [rng.randint(1, depth), rng.randint(1, depth)]
    branches = []
    for tag, length in zip(("a", "b"), lengths):
        b = _Builder(workload, random.Random(f"{seed}|{tag}"), tag, ancestor,
                     seed, merge_prob)
        b.grow(length, min_commits=1)
        branches.append(b)
    b1, b2 = branches
    return DivergentPair(ancestor, b1.history(ancestor), b2.history(ancestor),
                         b1.frontier, b2.frontier)


def _geometric(rng: random.Random, p: float) -> int:
    n = 0
    while rng.random() > p:
        n += 1
    return n


@dataclass(frozen=True)
class Counterexample:
    """Two individually valid reachable branches whose merge is invalid."""

    trial: int
    ancestor: DatabaseState
    history1: History
    history2: History
    state1: DatabaseState
    state2: DatabaseState
    merged: DatabaseState
    witness: Witness


@dataclass(frozen=True)
class ConfluenceVerdict:
    outcome: str            # counterexample-found | no-counterexample-found
    trials: int
    counterexample: Optional[Counterexample] = None

    @property
    def found(self) -> bool:
        return self.outcome == COUNTEREXAMPLE_FOUND


def check_dynamic(workload: CheckedWorkload, trials: int, depth: int,
                  seed: int | str = 0, merge_prob: float = 0.2,
                  ) -> ConfluenceVerdict:
    """Search for a diamond counterexample; deterministic given the seed.

    Stops at the first violation, re-validating it by exact replay of both
    branches, or exhausts the trial budget.  Finding nothing is statistical
    evidence of confluence, not proof; refutation alone is decisive.
    """
    if trials < 1:
        raise ModelError("trials must be >= 1")
    for trial in range(trials):
        pair = generate_divergent_pair(workload, depth, f"{seed}:{trial}",
                                       merge_prob)
        merged = merge(pair.state1, pair.state2)
        verdict = evaluate_all(workload.specs, merged)
        if verdict.valid:
            continue
        _revalidate(workload, pair, merged)
        assert verdict.witness is not None
        return ConfluenceVerdict(
            COUNTEREXAMPLE_FOUND, trial + 1,
            Counterexample(trial, pair.ancestor, pair.history1, pair.history2,
                           pair.state1, pair.state2, merged, verdict.witness))
    return ConfluenceVerdict(NO_COUNTEREXAMPLE_FOUND, trials)


def _revalidate(workload: CheckedWorkload, pair: DivergentPair,
                merged: DatabaseState) -> None:
    # Replay asserts validity of every intermediate state on both branches.
    s1 = replay(pair.history1, workload.specs, workload.schema)
    s2 = replay(pair.history2, workload.specs, workload.schema)
    if s1 != pair.state1 or s2 != pair.state2:
        raise ModelError("replay diverged from generated branch state")
    if merge(s1, s2) != merged:
        raise ModelError("re-merged state differs")
    if evaluate_all(workload.specs, merged).valid:
        raise ModelError("counterexample did not re-validate")
