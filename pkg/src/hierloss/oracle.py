"""Brute-force reference computations used to check the closed forms.

None of these share code paths with the quantities they verify: the
minimizer works on expected losses in probability space, the transport
solver is a generic linear program over a shortest-path ground metric, and
the path lengths come from a graph search.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .hierarchy import HierarchyError
from .weighting import WeightedHierarchy

__all__ = [
    "SimplexMinResult",
    "project_simplex",
    "minimize_expected_loss",
    "ot_lp",
    "bfs_distance",
    "loss_from_probs",
    "expected_loss_direct",
]

MAX_ORACLE_LEAVES = 8
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class SimplexMinResult:
    minimizer: np.ndarray
    value: float
    gradient_norm_at_solution: float
    iterations: int
    converged: bool


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def loss_from_probs(wh: WeightedHierarchy, f, y: int) -> float:
    """Loss for one sample computed by summing probabilities, then taking logs.

    Masses are floored at 1e-300 before the log.
    """
    h = wh.tree
    f = np.asarray(f, dtype=np.float64)
    total = 0.0
    for j in h.ancestors(h.check_leaf(y)):
        mass = sum(f[k - 1] for k in h.leaf_set(j))
        total -= wh.weights[j] * np.log(max(mass, PROB_FLOOR))
    return float(total)


def expected_loss_direct(wh: WeightedHierarchy, f, pi) -> float:
    """``sum_k pi_k * loss(f, k)`` evaluated label by label."""
    return float(sum(p * loss_from_probs(wh, f, k) for k, p in enumerate(pi, 1) if p > 0))


class _Objective:
    """Expected loss in probability space with a dense membership matrix."""

    def __init__(self, wh: WeightedHierarchy, pi: np.ndarray):
        m = wh.tree.membership[1:].astype(np.float64)
        keep = wh.weights[1:] > 0
        self.m = m[keep]
        self.coef = wh.weights[1:][keep] * (self.m @ pi)

    def value(self, f: np.ndarray) -> float:
        mass = self.m @ f
        if np.any(mass[self.coef > 0] <= 0):
            return np.inf
        with np.errstate(divide="ignore"):
            return float(-np.sum(np.where(self.coef > 0, self.coef * np.log(mass), 0.0)))

    def grad(self, f: np.ndarray) -> np.ndarray:
        mass = self.m @ f
        return -(np.where(self.coef > 0, self.coef / mass, 0.0) @ self.m)


def minimize_expected_loss(
    wh: WeightedHierarchy,
    pi,
    tol: float = 1e-8,
    max_iter: int = 1_000_000,
    start=None,
) -> SimplexMinResult:
    """Minimize the expected loss under label distribution ``pi`` over the simplex.

    Projected gradient descent with Barzilai-Borwein step lengths and an
    Armijo backtracking safeguard. Stops once the projected-gradient residual
    ``||f - P(f - g)||`` drops below ``tol``. Not converging within
    ``max_iter`` is reported through ``converged``; no exception is raised.
    """
    k = wh.tree.n_leaves
    if k > MAX_ORACLE_LEAVES:
        raise ValueError(f"oracle limited to {MAX_ORACLE_LEAVES} leaves, got {k}")
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (k,) or np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-9:
        raise ValueError("pi must be a strictly positive distribution over the leaves")
    obj = _Objective(wh, pi)
    f = np.full(k, 1.0 / k) if start is None else project_simplex(start)
    val, g = obj.value(f), obj.grad(f)
    step = 1.0
    it = 0
    resid = np.linalg.norm(f - project_simplex(f - g))
    while resid >= tol and it < max_iter:
        it += 1
        d = project_simplex(f - step * g) - f
        slope = float(g @ d)
        t = 1.0
        while True:
            cand = f + t * d
            cand_val = obj.value(cand)
            # slack for rounding once decreases reach machine precision
            if cand_val <= val + 1e-4 * t * slope + 8e-16 * abs(val):
                break
            t *= 0.5
            if t < 1e-20:
                break
        s = cand - f
        g_new = obj.grad(cand)
        yv = g_new - g
        sy = float(s @ yv)
        step = float(s @ s) / sy if sy > 1e-300 else 1e3
        step = min(max(step, 1e-10), 1e10)
        f, g, val = cand, g_new, cand_val
        resid = np.linalg.norm(f - project_simplex(f - g))
    return SimplexMinResult(f, val, float(resid), it, bool(resid < tol))


def bfs_distance(wh: WeightedHierarchy, a: int, b: int) -> float:
    """Weighted path length between any two nodes by graph search.

    The length of edge ``(p(j), j)`` is ``w_j``.
    """
    h = wh.tree
    n = h.node_count
    for node in (a, b):
        if not isinstance(node, (int, np.integer)) or not 0 <= node < n:
            raise HierarchyError(f"unknown node id {node!r}")
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for j in range(1, n):
        p = int(h.parent[j])
        adj[p].append((j, float(wh.weights[j])))
        adj[j].append((p, float(wh.weights[j])))
    dist = {int(a): 0.0}
    queue = deque([int(a)])
    while queue:
        u = queue.popleft()
        if u == b:
            break
        for v, length in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + length
                queue.append(v)
    return dist[int(b)]


def ot_lp(wh: WeightedHierarchy, mu, nu, max_leaves: int = MAX_ORACLE_LEAVES) -> float:
    """Optimal transport cost between leaf distributions, solved as an LP.

    The ground cost is the search-based leaf-to-leaf path length.
    """
    h = wh.tree
    k = h.n_leaves
    if k > max_leaves:
        raise ValueError(f"transport oracle limited to {max_leaves} leaves, got {k}")
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if mu.shape != (k,) or nu.shape != (k,):
        raise ValueError("distributions must be over the leaves")
    cost = np.array([[bfs_distance(wh, a, b) for b in h.leaves] for a in h.leaves])
    a_eq = np.zeros((2 * k, k * k))
    for i in range(k):
        a_eq[i, i * k:(i + 1) * k] = 1.0
        a_eq[k + i, i::k] = 1.0
    b_eq = np.concatenate([mu, nu])
    res = linprog(
        cost.ravel(),
        A_eq=a_eq[:-1],
        b_eq=b_eq[:-1],
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)
