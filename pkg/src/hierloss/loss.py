"""Hierarchical losses on softmax outputs and their logit gradients.

Superclass log-probabilities are never formed by summing softmax outputs.
``log F_j`` is written as ``-log(1 + exp(out_j - in_j))`` where ``in_j`` and
``out_j`` are log-sum-exps of the logits inside and outside the superclass,
which stays accurate both for vanishing masses and for masses close to 1. Functions accept a single logit vector ``(K,)`` with an integer
label, or a batch ``(N, K)`` with an integer array; batch calls return one
value per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hierarchy import Hierarchy, HierarchyError
from .weighting import WeightedHierarchy, hxe_weights, unit_weights

__all__ = [
    "AggregationMap",
    "build_aggregation",
    "softmax",
    "log_softmax",
    "log_masses",
    "hierarchical_loss",
    "hierarchical_loss_grad",
    "naive_loss",
    "hxe_loss",
    "cross_entropy",
    "cross_entropy_grad",
    "expected_loss",
    "expected_loss_grad",
]

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class AggregationMap:
    """Leaf sets of every node, stored as a boolean ``(n, K)`` matrix."""

    matrix: np.ndarray

    def __getitem__(self, j: int) -> frozenset[int]:
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.matrix[j]))

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def aggregate(self, probs: np.ndarray) -> np.ndarray:
        """Superclass masses ``sum_{k in v_j} probs_k`` for every node."""
        return np.asarray(probs, dtype=np.float64) @ self.matrix.T


def build_aggregation(h: Hierarchy) -> AggregationMap:
    return AggregationMap(h.membership)


def _as_batch(logits, n_classes: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.ndim != 2 or z.shape[1] != n_classes:
        raise ValueError(f"expected logits with {n_classes} columns, got shape {np.shape(logits)}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z, single


def _labels(h: Hierarchy, y, n: int) -> np.ndarray:
    y_arr = np.atleast_1d(np.asarray(y))
    if not np.issubdtype(y_arr.dtype, np.integer):
        raise HierarchyError(f"labels must be integer leaf ids, got {y!r}")
    if y_arr.shape != (n,):
        raise ValueError(f"expected {n} labels, got {y_arr.shape[0]}")
    bad = (y_arr < 1) | (y_arr > h.n_leaves)
    if np.any(bad):
        raise HierarchyError(f"label {int(y_arr[bad][0])} is not a leaf id in 1..{h.n_leaves}")
    return y_arr.astype(np.int64)


def _lse(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def softmax(logits) -> np.ndarray:
    """Softmax along the last axis with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    return z - _lse(z)[..., None]


def log_masses(h: Hierarchy, logits) -> np.ndarray:
    """Unnormalized log-mass ``log sum_{k in v_j} exp(z_k)`` of every node.

    Returns an ``(N, n)`` array; column 0 (the root) is the global
    log-sum-exp, so ``out[:, j] - out[:, :1]`` is the log-probability of
    superclass ``j``.
    """
    z, _ = _as_batch(logits, h.n_leaves)
    out = np.empty((z.shape[0], h.node_count))
    out[:, 1: h.n_leaves + 1] = z
    for j in h.bottom_up:
        out[:, j] = _lse(out[:, list(h.children[j])], axis=1)
    return out


def _masked_lse(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp over the entries where ``mask`` holds; -inf if none."""
    x = np.where(mask, z, -np.inf)
    m = np.max(x, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), safe + np.log(np.sum(np.exp(x - safe[:, None]), axis=1)), -np.inf)


def _path_terms(wh: WeightedHierarchy, logits, y):
    """Inside/outside log-masses for every node on the path of each label.

    For depth level ``d`` the node is ``path[:, d]``; ``inside[:, d]`` is the
    log-mass of its leaves and ``outside[:, d]`` that of all other leaves.
    """
    h = wh.tree
    z, single = _as_batch(logits, h.n_leaves)
    y = _labels(h, y, z.shape[0])
    path = h.path_matrix[y]
    member = h.membership[path]  # (N, D, K)
    inside = np.stack([_masked_lse(z, member[:, d]) for d in range(path.shape[1])], axis=1)
    outside = np.stack([_masked_lse(z, ~member[:, d]) for d in range(path.shape[1])], axis=1)
    return z, y, single, path, member, inside, outside


def hierarchical_loss(wh: WeightedHierarchy, logits, y):
    """Weighted sum, over the ancestors of ``y``, of superclass negative log-probabilities.

    ``-log F_j`` is evaluated as ``log(1 + exp(outside_j - inside_j))``, which
    keeps full relative precision when ``F_j`` is close to 1.
    """
    z, y, single, path, member, inside, outside = _path_terms(wh, logits, y)
    loss = np.sum(wh.path_weights[y] * np.logaddexp(0.0, outside - inside), axis=1)
    return float(loss[0]) if single else loss


def hierarchical_loss_grad(wh: WeightedHierarchy, logits, y) -> np.ndarray:
    """Gradient of :func:`hierarchical_loss` with respect to the logits.

    For class ``m`` the gradient is ``f_m * S_y - sum_{j in a(y), m in v_j} w_j f_m / F_j``
    with ``S_y`` the path weight of ``y`` and ``F_j`` the superclass mass.
    It is evaluated in the cancellation-free arrangement
    ``f_m * sum_{j: m not in v_j} w_j - sum_{j: m in v_j} w_j f_m (1 - F_j) / F_j``,
    every factor being formed in the log domain.
    """
    z, y, single, path, member, inside, outside = _path_terms(wh, logits, y)
    pw = wh.path_weights[y]
    total = _lse(z, axis=1)
    f = np.exp(z - total[:, None])
    grad = f * np.einsum("nd,ndk->nk", pw, ~member)
    for d in range(path.shape[1]):
        # (z_m - inside) <= 0 for members and (outside - total) <= 0
        expo = np.minimum(z - inside[:, d: d + 1], 0.0) + (outside[:, d: d + 1] - total[:, None])
        grad -= pw[:, d: d + 1] * np.where(member[:, d], np.exp(expo), 0.0)
    return grad[0] if single else grad


def naive_loss(h: Hierarchy, logits, y):
    """Unweighted sum of superclass negative log-probabilities along the path of ``y``.

    Not a proper scoring rule; kept for comparison.
    """
    return hierarchical_loss(unit_weights(h), logits, y)


def hxe_loss(h: Hierarchy, logits, y, alpha: float):
    """Hierarchical cross-entropy in its conditional-probability form.

    ``-sum_{j in a(y)} exp(-alpha d(j)) log(F_j / F_{p(j)})`` with
    ``F_root = 1``. Each conditional is computed from the mass of ``v_j``
    against the mass of its siblings within ``v_{p(j)}``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha!r}")
    z, single = _as_batch(logits, h.n_leaves)
    y = _labels(h, y, z.shape[0])
    member = h.membership
    loss = np.zeros(z.shape[0])
    node = y.copy()
    while np.any(node != 0):
        active = node != 0
        par = np.where(active, h.parent[node], 0)
        mine = member[node]
        siblings = member[par] & ~mine
        neg_log_cond = np.logaddexp(0.0, _masked_lse(z, siblings) - _masked_lse(z, mine))
        loss += np.where(active, np.exp(-alpha * h.depths[node]) * neg_log_cond, 0.0)
        node = par
    return float(loss[0]) if single else loss


def hxe_loss_grad(h: Hierarchy, logits, y, alpha: float) -> np.ndarray:
    """HXE gradient, through its equivalent balanced weighting."""
    return hierarchical_loss_grad(hxe_weights(h, alpha, renormalize=False), logits, y)


def cross_entropy(logits, y):
    """Standard softmax cross-entropy; ``y`` holds leaf ids ``1..K``."""
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y)) - 1
    loss = _lse(z, axis=1) - z[np.arange(z.shape[0]), y]
    return float(loss[0]) if single else loss


def cross_entropy_grad(logits, y) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y)) - 1
    g = softmax(z)
    g[np.arange(z.shape[0]), y] -= 1.0
    return g[0] if single else g


def _check_simplex(p, k: int, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (k,):
        raise ValueError(f"{what} must have length {k}")
    if np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{what} is not on the probability simplex")
    return p


def expected_loss(wh: WeightedHierarchy, f, pi) -> float:
    """Expected loss when the label is drawn from ``pi`` and ``f`` is predicted.

    Summed over every non-root node: ``-sum_j w_j Pi_j log F_j`` with
    ``Pi_j`` and ``F_j`` the masses of node ``j`` under ``pi`` and ``f``.
    """
    k = wh.tree.n_leaves
    f = _check_simplex(f, k, "f")
    pi = _check_simplex(pi, k, "pi")
    m = wh.tree.membership[1:]
    big_pi, big_f = m @ pi, m @ f
    w = wh.weights[1:]
    active = (w > 0) & (big_pi > 0)
    with np.errstate(divide="ignore"):
        terms = np.where(active, w * big_pi * np.log(np.where(active, big_f, 1.0)), 0.0)
    return float(-terms.sum())


def expected_loss_grad(wh: WeightedHierarchy, f, pi) -> np.ndarray:
    """Partial derivatives of :func:`expected_loss` with respect to each ``f_k``."""
    m = wh.tree.membership[1:]
    f = np.asarray(f, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    coef = wh.weights[1:] * (m @ pi) / (m @ f)
    return -(coef @ m)
