"""Hierarchical losses that stay proper scoring rules, plus tree-aware metrics."""

__version__ = "0.1.0"

from .hierarchy import (
    Hierarchy,
    HierarchyError,
    PrunedPartition,
    flat_hierarchy,
    load_hierarchy,
    parse_hierarchy,
    prune,
    serialize_hierarchy,
    seven_leaf_hierarchy,
)
from .loss import (
    build_aggregation,
    cross_entropy,
    expected_loss,
    hierarchical_loss,
    hierarchical_loss_grad,
    hxe_loss,
    naive_loss,
    softmax,
)
from .metrics import (
    CoarseningCurve,
    EvaluationReport,
    coarsening_curve,
    evaluate,
    hier_distance,
    tree_wasserstein,
    tree_wasserstein_general,
)
from .weighting import (
    WeightedHierarchy,
    exponential_weights,
    hxe_weights,
    tree_distance,
    validate_balanced,
)

__all__ = [
    "__version__",
    "Hierarchy",
    "HierarchyError",
    "PrunedPartition",
    "flat_hierarchy",
    "load_hierarchy",
    "parse_hierarchy",
    "prune",
    "serialize_hierarchy",
    "seven_leaf_hierarchy",
    "build_aggregation",
    "cross_entropy",
    "expected_loss",
    "hierarchical_loss",
    "hierarchical_loss_grad",
    "hxe_loss",
    "naive_loss",
    "softmax",
    "CoarseningCurve",
    "EvaluationReport",
    "coarsening_curve",
    "evaluate",
    "hier_distance",
    "tree_wasserstein",
    "tree_wasserstein_general",
    "WeightedHierarchy",
    "exponential_weights",
    "hxe_weights",
    "tree_distance",
    "validate_balanced",
]
