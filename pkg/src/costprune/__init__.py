"""Cost-aware pruning of decision-tree ensembles.

Builds the 0/1 program that trades average tree error against the expected
cost of the features an example must acquire (each feature paid once per
example across the ensemble), solves its LP relaxation with a vertex method
(integral by construction) or by column generation, and reports pruned
ensembles and cost/error trade-off curves.
"""

__version__ = "0.1.0"

from .errors import (
    CostPruneError,
    DataError,
    IntegralityError,
    ModelDataMismatch,
    OracleMismatch,
    SchemaError,
    SolverError,
)
from .forest import Dataset, Ensemble, Tree, TreeNode, compute_routing_profile, route_example
from .data import load_costs, load_dataset, load_ensemble, save_ensemble, train_ensemble, TrainParams
from .problem import build_ip3, size_report, to_network_form
from .prune import (
    EnsemblePruner,
    PrunedEnsemble,
    TradeoffCurve,
    TradeoffPoint,
    evaluate,
    prune_individual,
    prune_with_budget,
    prune_with_lambda,
    sweep,
)

__all__ = [
    "CostPruneError",
    "DataError",
    "IntegralityError",
    "ModelDataMismatch",
    "OracleMismatch",
    "SchemaError",
    "SolverError",
    "Dataset",
    "Ensemble",
    "Tree",
    "TreeNode",
    "compute_routing_profile",
    "route_example",
    "load_costs",
    "load_dataset",
    "load_ensemble",
    "save_ensemble",
    "train_ensemble",
    "TrainParams",
    "build_ip3",
    "size_report",
    "to_network_form",
    "EnsemblePruner",
    "PrunedEnsemble",
    "TradeoffCurve",
    "TradeoffPoint",
    "evaluate",
    "prune_individual",
    "prune_with_budget",
    "prune_with_lambda",
    "sweep",
]
