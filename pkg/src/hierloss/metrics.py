"""Hierarchy-aware evaluation of probabilistic classifiers.

Sample averages are reduced with :func:`math.fsum`, so results do not depend
on sample order or on how the work was partitioned.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .hierarchy import Hierarchy, HierarchyError, prune, threshold_grid
from .weighting import WeightedHierarchy

__all__ = [
    "EvaluationReport",
    "CoarseningCurve",
    "hier_distance",
    "tree_wasserstein",
    "tree_wasserstein_general",
    "evaluate",
    "coarsening_curve",
    "predict",
]

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    mean_hier_distance: float
    mean_wasserstein: float
    sample_count: int

    def to_json(self, full_precision: bool = False) -> str:
        d = asdict(self)
        if not full_precision:
            d = {k: (round(v, 6) if isinstance(v, float) else v) for k, v in d.items()}
        return json.dumps(d, sort_keys=False)


@dataclass(frozen=True)
class CoarseningCurve:
    """Points ``(tau, group_count, accuracy)`` with ``tau`` increasing."""

    points: tuple[tuple[float, int, float], ...]

    def to_csv(self, full_precision: bool = False) -> str:
        out = io.StringIO()
        out.write("tau,group_count,accuracy\n")
        for tau, count, acc in self.points:
            if full_precision:
                out.write(f"{tau!r},{count},{acc!r}\n")
            else:
                out.write(f"{tau:.6f},{count},{acc:.6f}\n")
        return out.getvalue()


def _probs(p, k: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != k:
        raise ValueError(f"expected {k} class probabilities, got shape {p.shape}")
    if np.any(p < -SIMPLEX_TOL) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("probabilities must lie on the simplex")
    return p


def predict(probs) -> np.ndarray:
    """Arg-max leaf id (1-based); ties go to the lowest index."""
    return np.argmax(np.atleast_2d(probs), axis=1) + 1


def hier_distance(h: Hierarchy, y: int, y_hat: int) -> int:
    """Height of the lowest common ancestor of two leaves."""
    y, y_hat = h.check_leaf(y), h.check_leaf(y_hat)
    return h.height(h.lca(y, y_hat))


def tree_wasserstein(wh: WeightedHierarchy, f, y: int) -> float:
    """Transport cost from ``f`` to the point mass at leaf ``y``: ``sum_k f_k d(y, k)``."""
    k = wh.tree.n_leaves
    f = _probs(f, k)
    y = wh.tree.check_leaf(y)
    return float(math.fsum(f * wh.leaf_distances[y - 1]))


def _node_measure(wh: WeightedHierarchy, mu) -> np.ndarray:
    h = wh.tree
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape == (h.n_leaves,):
        mu = np.concatenate([[0.0], mu, np.zeros(h.node_count - h.n_leaves - 1)])
    if mu.shape != (h.node_count,):
        raise ValueError("a distribution must cover the leaves or all nodes")
    if np.any(mu < -SIMPLEX_TOL) or abs(mu.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("distribution must be nonnegative and sum to 1")
    return mu


def _subtree_mass(h: Hierarchy, mu: np.ndarray) -> np.ndarray:
    mass = mu.copy()
    for j in h.bottom_up:
        mass[j] += sum(mass[c] for c in h.children[j])
    return mass


def tree_wasserstein_general(wh: WeightedHierarchy, mu, nu) -> float:
    """Wasserstein distance between two distributions on the tree nodes.

    ``sum_j w_j |mu(subtree j) - nu(subtree j)|``. Arguments of length ``K``
    are read as leaf-supported; length ``n`` covers every node.
    """
    h = wh.tree
    a = _subtree_mass(h, _node_measure(wh, mu))
    b = _subtree_mass(h, _node_measure(wh, nu))
    return float(math.fsum(wh.weights * np.abs(a - b)))


def _per_sample(wh: WeightedHierarchy, probs: np.ndarray, labels: np.ndarray):
    h = wh.tree
    pred = predict(probs)
    lca = h.leaf_lca[labels - 1, pred - 1]
    dist = h.heights[lca]
    wass = np.einsum("nk,nk->n", probs, wh.leaf_distances[labels - 1])
    return pred == labels, dist, wass


def evaluate(wh: WeightedHierarchy, predictions, labels, threads: int = 1) -> EvaluationReport:
    """Accuracy, mean LCA-height distance and mean tree-Wasserstein distance.

    ``threads > 1`` splits the samples into contiguous chunks; the per-sample
    values do not depend on the split and the means are exactly rounded.
    """
    h = wh.tree
    probs = _probs(np.atleast_2d(predictions), h.n_leaves)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("predictions and labels differ in length")
    if labels.shape[0] == 0:
        raise ValueError("cannot evaluate an empty sample")
    if np.any((labels < 1) | (labels > h.n_leaves)):
        raise HierarchyError("labels must be leaf ids")
    if threads > 1:
        bounds = np.array_split(np.arange(labels.shape[0]), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda idx: _per_sample(wh, probs[idx], labels[idx]), bounds))
        correct, dist, wass = (np.concatenate([p[i] for p in parts]) for i in range(3))
    else:
        correct, dist, wass = _per_sample(wh, probs, labels)
    n = labels.shape[0]
    return EvaluationReport(
        accuracy=int(correct.sum()) / n,
        mean_hier_distance=int(dist.sum()) / n,
        mean_wasserstein=math.fsum(wass) / n,
        sample_count=n,
    )


def coarsening_curve(
    wh: WeightedHierarchy,
    predictions,
    labels,
    tau_grid: Sequence[float] | None = None,
) -> CoarseningCurve:
    """Accuracy of superclass-aggregated predictions across pruning thresholds.

    Each threshold's groups receive the summed probability of their classes;
    the predicted group is the arg-max (ties to the group holding the lowest
    leaf id). The ``tau = 0`` point, where only the root remains and every
    prediction is right, is prepended as ``(0, 1, 1.0)``.
    """
    h = wh.tree
    probs = _probs(np.atleast_2d(predictions), h.n_leaves)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if probs.shape[0] != labels.shape[0] or labels.shape[0] == 0:
        raise ValueError("need equal, nonzero numbers of predictions and labels")
    grid = threshold_grid(wh) if tau_grid is None else sorted(set(float(t) for t in tau_grid))
    points = [(0.0, 1, 1.0)]
    n = labels.shape[0]
    for tau in grid:
        part = prune(wh, tau)
        assign = np.zeros((len(part.groups), h.n_leaves))
        for g, (_, members) in enumerate(part.groups):
            assign[g, [k - 1 for k in members]] = 1.0
        group_of = np.argmax(assign, axis=0)
        predicted = np.argmax(probs @ assign.T, axis=1)
        correct = int(np.sum(predicted == group_of[labels - 1]))
        points.append((tau, len(part.groups), correct / n))
    return CoarseningCurve(tuple(points))
