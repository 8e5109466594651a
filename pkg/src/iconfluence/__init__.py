"""Invariant-confluence analysis and coordination-cost simulation.

The library models replicated database states as mergeable version sets,
classifies invariant/operation pairs statically, searches for dynamic merge
counterexamples, and simulates coordination-free versus coordinated
execution under a configurable network model.
"""

from .state import (
    D0,
    DatabaseState,
    ReplicaState,
    Transaction,
    TransactionOutcome,
    ValidityVerdict,
    Version,
    Witness,
    apply_transaction,
    merge,
    visible_state,
)
from .adt import NonceValue, collection_contains, collection_size, counter_value, list_order, nonce
from .invariants import (
    InvariantSpec,
    ViewFunction,
    cascade_delete,
    evaluate,
    evaluate_all,
    is_valid,
    maintain_view,
    run_transaction,
)
from .classify import Classification, TABLE_ROWS, classify_static, classify_transaction
from .checker import (
    CheckedWorkload,
    ConfluenceVerdict,
    Counterexample,
    History,
    check_dynamic,
    generate_divergent_pair,
    replay,
)

__version__ = "0.1.0"

__all__ = [
    "D0", "DatabaseState", "ReplicaState", "Transaction", "TransactionOutcome",
    "ValidityVerdict", "Version", "Witness", "apply_transaction", "merge",
    "visible_state", "NonceValue", "collection_contains", "collection_size",
    "counter_value", "list_order", "nonce", "InvariantSpec", "ViewFunction",
    "cascade_delete", "evaluate", "evaluate_all", "maintain_view",
    "is_valid", "run_transaction",
    "Classification", "TABLE_ROWS", "classify_static", "classify_transaction",
    "CheckedWorkload", "ConfluenceVerdict", "Counterexample", "History",
    "check_dynamic", "generate_divergent_pair", "replay",
    "__version__",
]
