"""Balanced node weightings and the induced tree metric."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .hierarchy import Hierarchy

__all__ = [
    "WeightedHierarchy",
    "exponential_weights",
    "hxe_weights",
    "unit_weights",
    "from_weights",
    "validate_balanced",
    "tree_distance",
    "distance_forms",
    "weight_dump",
]

BALANCE = 0.5


@dataclass(frozen=True, eq=False)
class WeightedHierarchy:
    """A hierarchy with one nonnegative weight per node (root weight 0).

    ``balance_constant`` is the value every root-to-leaf weight sum is meant
    to take; it is ``None`` for weightings that are not balanced by
    construction (e.g. unit weights).
    """

    tree: Hierarchy
    weights: np.ndarray
    balance_constant: float | None = BALANCE
    label: str = field(default="")

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (self.tree.node_count,):
            raise ValueError(
                f"expected {self.tree.node_count} weights, got shape {w.shape}"
            )
        if w[0] != 0.0:
            raise ValueError("the root weight must be 0")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Sum of weights over ``a(j)`` for every node ``j`` (0 at the root)."""
        h = self.tree
        cum = np.zeros(h.node_count)
        for j in np.argsort(h.depths, kind="stable")[1:]:
            cum[j] = cum[h.parent[j]] + self.weights[j]
        cum.setflags(write=False)
        return cum

    def leaf_sums(self) -> np.ndarray:
        return self.cumulative[1: self.tree.n_leaves + 1]

    def violations(self, tol: float = 1e-12) -> list[int]:
        return validate_balanced(self, tol)

    @cached_property
    def path_weights(self) -> np.ndarray:
        """``(K+1, D)`` weights aligned with ``tree.path_matrix``."""
        return self.weights[self.tree.path_matrix]

    @cached_property
    def leaf_distances(self) -> np.ndarray:
        """``(K, K)`` matrix of tree distances between leaves (0-based)."""
        c = self.balance_constant if self.balance_constant is not None else BALANCE
        d = 2.0 * (c - self.cumulative[self.tree.leaf_lca])
        np.fill_diagonal(d, 0.0)
        d.setflags(write=False)
        return d

    def scaled(self, factor: float) -> "WeightedHierarchy":
        c = None if self.balance_constant is None else self.balance_constant * factor
        return WeightedHierarchy(self.tree, self.weights * factor, c, self.label)


def _geometric_share(q: float, h: int) -> float:
    """``(1 - q) / (1 - q**(h+1))`` written as ``1 / sum_{i<=h} q**i``.

    The sum form is exact at ``q = 1`` (giving ``1/(h+1)``) and avoids the
    cancellation of the ratio form near it. For ``q > 1`` the powers are
    taken as ``q**-i`` to stay finite.
    """
    if q <= 1.0:
        return 1.0 / math.fsum(q ** i for i in range(h + 1))
    return q ** (-h) / math.fsum(q ** (-i) for i in range(h + 1))


def exponential_weights(h: Hierarchy, q: float) -> WeightedHierarchy:
    """Exponential weighting with growth rate ``q`` (balanced to 1/2).

    Each node takes the share ``1/(1 + q + ... + q**h(j))`` of what remains of
    the 1/2 budget once its ancestors are paid for. Small ``q`` puts the mass
    near the root, large ``q`` near the leaves.
    """
    q = float(q)
    if not q >= 0.0 or math.isinf(q):
        raise ValueError(f"q must be a finite number >= 0, got {q!r}")
    if q == 0.0:
        warnings.warn(
            "q = 0 zeroes every weight below the root's children; "
            "classes inside a top-level superclass become indistinguishable",
            stacklevel=2,
        )
    w = np.zeros(h.node_count)
    cum = np.zeros(h.node_count)
    for j in np.argsort(h.depths, kind="stable")[1:]:
        p = h.parent[j]
        w[j] = (BALANCE - cum[p]) * _geometric_share(q, int(h.heights[j]))
        cum[j] = cum[p] + w[j]
    return WeightedHierarchy(h, w, BALANCE, label=f"exponential q={q:g}")


def hxe_weights(h: Hierarchy, alpha: float, renormalize: bool = True) -> WeightedHierarchy:
    """Weights under which the hierarchical loss coincides with HXE.

    Leaves get ``exp(-alpha d)``, internal nodes ``exp(-alpha d) - exp(-alpha (d+1))``
    with ``d`` the node depth. Every leaf path then sums to ``exp(-alpha)``;
    with ``renormalize`` the weights are rescaled so the sum is 1/2.
    """
    alpha = float(alpha)
    if not alpha > 0.0:
        raise ValueError(f"alpha must be > 0, got {alpha!r}")
    d = h.depths.astype(np.float64)
    w = np.exp(-alpha * d)
    internal = np.arange(h.n_leaves + 1, h.node_count)
    # exp(-a d) - exp(-a (d+1)) = exp(-a d) * (1 - exp(-a))
    w[internal] = np.exp(-alpha * d[internal]) * -np.expm1(-alpha)
    w[0] = 0.0
    wh = WeightedHierarchy(h, w, math.exp(-alpha), label=f"hxe alpha={alpha:g}")
    if renormalize:
        wh = wh.scaled(BALANCE / math.exp(-alpha))
    return wh


def unit_weights(h: Hierarchy) -> WeightedHierarchy:
    """Weight 1 on every non-root node; generally unbalanced."""
    w = np.ones(h.node_count)
    w[0] = 0.0
    return WeightedHierarchy(h, w, None, label="unit")


def from_weights(h: Hierarchy, weights: Sequence[float], balance_constant: float | None = BALANCE) -> WeightedHierarchy:
    return WeightedHierarchy(h, np.asarray(weights, dtype=np.float64), balance_constant, label="custom")


def validate_balanced(wh: WeightedHierarchy, tol: float = 1e-12) -> list[int]:
    """Leaves whose root path sum is off the balance constant by more than ``tol``.

    When the weighting has no declared constant, the first leaf's sum is used
    as the reference.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    sums = wh.leaf_sums()
    ref = wh.balance_constant if wh.balance_constant is not None else sums[0]
    return [int(k) + 1 for k in np.flatnonzero(np.abs(sums - ref) > tol)]


def tree_distance(wh: WeightedHierarchy, y: int, y_hat: int) -> float:
    """Weighted path length between two leaves, ``1 - 2 * cum(lca(y, y_hat))``."""
    h = wh.tree
    y, y_hat = h.check_leaf(y), h.check_leaf(y_hat)
    if y == y_hat:
        return 0.0
    c = wh.balance_constant if wh.balance_constant is not None else BALANCE
    return 2.0 * (c - float(wh.cumulative[h.lca(y, y_hat)]))


def distance_forms(wh: WeightedHierarchy, y: int, y_hat: int) -> dict[str, float]:
    """Four equivalent ways of writing the leaf distance on a balanced tree.

    ``two_sided`` adds both leaf-to-LCA path lengths, ``via_lca`` uses the
    LCA's cumulative weight, ``from_pred`` / ``from_true`` double one leaf's
    path length to the LCA.
    """
    h = wh.tree
    y, y_hat = h.check_leaf(y), h.check_leaf(y_hat)
    w = wh.weights
    top = h.lca(y, y_hat)
    shared = set(h.ancestors(top)) if top != 0 else set()
    cum_top = math.fsum(w[j] for j in shared)
    up_pred = math.fsum(w[j] for j in h.ancestors(y_hat) if j not in shared)
    up_true = math.fsum(w[j] for j in h.ancestors(y) if j not in shared)
    return {
        "two_sided": up_pred + up_true,
        "via_lca": 1.0 - 2.0 * cum_top,
        "from_pred": 2.0 * up_pred,
        "from_true": 2.0 * up_true,
    }


def weight_dump(wh: WeightedHierarchy, full_precision: bool = False) -> str:
    """Tab-separated table: node, original id, parent, height, depth, weight, cumulative."""
    h = wh.tree
    fmt = repr if full_precision else (lambda x: f"{x:.6f}")
    out = io.StringIO()
    out.write("node_id\toriginal_id\tparent\theight\tdepth\tweight\tcumulative\n")
    for j in range(h.node_count):
        parent = "" if j == 0 else str(int(h.parent[j]))
        out.write(
            f"{j}\t{h.original_ids[j]}\t{parent}\t{h.heights[j]}\t{h.depths[j]}\t"
            f"{fmt(float(wh.weights[j]))}\t{fmt(float(wh.cumulative[j]))}\n"
        )
    return out.getvalue()
