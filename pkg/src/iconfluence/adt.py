"""Merge-friendly abstract data types over the version-set model.

Counters record one event per invocation, so their value is the signed sum
of increment/decrement amounts in the state; an assign event establishes a
last-writer-wins base and only events ordered after the winning assign count
against it.  Collections record add/del events deduplicated by value, so an
element is contained exactly when an add for it is present and no del is.
Replica-scoped nonces provide coordination-free globally unique values.
"""

from __future__ import annotations

from dataclasses import dataclass

from .state import (
    COUNTER_ASSIGN,
    DatabaseState,
    F_OP,
    KIND_COLLECTION,
    KIND_COUNTER,
    ReplicaState,
    Scalar,
    _counter_value,
    visible_state,
)


def counter_value(s: DatabaseState, counter: str) -> int:
    """Signed event sum for `counter`; 0 when no events exist."""
    events = [v for v in s.versions if v.item == counter and v.kind == KIND_COUNTER]
    return _counter_value(events) if events else 0


def collection_size(s: DatabaseState, collection: str) -> int:
    """Count of distinct added values minus distinct deleted values.

    A collection with no events has size zero.
    """
    cs = visible_state(s).collection(collection)
    return cs.size()


def collection_contains(s: DatabaseState, collection: str, value: Scalar) -> bool:
    return visible_state(s).collection(collection).contains(value)


def list_order(s: DatabaseState, collection: str) -> list:
    """Contained values in lexicographic order.

    When two lists merge, the head (and tail) of the result is the head
    (tail) of one of the inputs provided the extremal element was not
    concurrently deleted.
    """
    return visible_state(s).collection(collection).ordered()


@dataclass(frozen=True)
class NonceValue:
    """A replica-scoped generated value, globally unique across replicas."""

    replica_id: str
    counter: int

    def __str__(self) -> str:
        return f"{self.replica_id}#{self.counter}"


def nonce(r: ReplicaState) -> tuple[NonceValue, ReplicaState]:
    """Draw the replica's next nonce; never repeats on or across replicas."""
    value = NonceValue(r.replica_id, r.nonce_counter)
    return value, ReplicaState(r.replica_id, r.state, r.nonce_counter + 1)


def has_assign(s: DatabaseState, counter: str) -> bool:
    return any(v.item == counter and v.kind == KIND_COUNTER
               and v.get(F_OP) == COUNTER_ASSIGN for v in s.versions)
