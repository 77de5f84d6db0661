"""Oracle-backed self-checks run by ``hierloss verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hierarchy import enumerate_shapes, flat_hierarchy, from_edges, random_hierarchy, seven_leaf_hierarchy
from .loss import cross_entropy, hierarchical_loss, hierarchical_loss_grad, hxe_loss
from .metrics import tree_wasserstein, tree_wasserstein_general
from .oracle import bfs_distance, minimize_expected_loss, ot_lp
from .weighting import (
    WeightedHierarchy,
    distance_forms,
    exponential_weights,
    hxe_weights,
    unit_weights,
)

__all__ = ["CheckResult", "run_checks", "seven_leaf_weights", "three_leaf_hierarchy"]

SCALES = {"quick": 0.2, "default": 1.0, "full": 2.0}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def three_leaf_hierarchy():
    """Leaf 1 alone under the root, leaves 2 and 3 under one superclass."""
    return from_edges([("r", None), ("a", "r"), ("b", "s"), ("c", "s"), ("s", "r")])


def seven_leaf_weights(q: float) -> np.ndarray:
    """Closed-form exponential weights of :func:`seven_leaf_hierarchy` at growth ``q``."""
    a = 2 * (1 + q)
    b = 2 * (1 + q + q * q)
    w = np.zeros(11)
    w[1] = 0.5
    w[2:5] = q / a
    w[8] = 1 / a
    w[10] = 1 / b
    w[5] = q * (1 + q) / b
    w[9] = q / b
    w[6:8] = q * q / b
    return w


def random_distribution(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.dirichlet(np.ones(k))


def random_logits(rng: np.random.Generator, k: int, y: int) -> np.ndarray:
    """Gaussian logits; one draw in four is pushed close to one-hot at ``y``."""
    z = rng.normal(0.0, 2.0, size=k)
    if rng.random() < 0.25:
        z[y - 1] += rng.uniform(8.0, 20.0)
    return z


def check_balance(n: int, rng, weight_fn: Callable = exponential_weights) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        h = random_hierarchy(rng, 50)
        for q in (0.25, 0.5, 0.9, 1.0, 1.2, 2.0, 5.0):
            wh = weight_fn(h, q)
            worst = max(worst, float(np.max(np.abs(wh.leaf_sums() - 0.5))))
    return CheckResult("balance", worst <= 1e-12, f"{n} trees x 7 q, max |path sum - 1/2| = {worst:.3e}")


def check_golden() -> CheckResult:
    h = seven_leaf_hierarchy()
    worst = max(
        float(np.max(np.abs(exponential_weights(h, q).weights - seven_leaf_weights(q))))
        for q in (0.9, 1.0, 1.2)
    )
    return CheckResult("golden-weights", worst <= 1e-12, f"max deviation {worst:.3e}")


def check_proper(n_pi: int, rng) -> CheckResult:
    trees = enumerate_shapes(6, max_leaves=4) + [seven_leaf_hierarchy()]
    worst, failures = 0.0, 0
    for h in trees:
        schemes = [exponential_weights(h, 0.9), exponential_weights(h, 1.2),
                   hxe_weights(h, 0.1), hxe_weights(h, 0.5)]
        for wh in schemes:
            for _ in range(n_pi):
                pi = random_distribution(rng, h.n_leaves)
                res = minimize_expected_loss(wh, pi)
                failures += not res.converged
                worst = max(worst, float(np.max(np.abs(res.minimizer - pi))))
    ok = worst < 1e-4 and failures == 0
    return CheckResult(
        "proper-scoring",
        ok,
        f"{len(trees)} trees x 4 weightings x {n_pi} targets, max |f* - pi| = {worst:.3e}, "
        f"{failures} unconverged",
    )


def check_naive() -> CheckResult:
    res = minimize_expected_loss(unit_weights(three_leaf_hierarchy()), np.full(3, 1 / 3))
    err = float(np.max(np.abs(res.minimizer - [0.2, 0.4, 0.4])))
    gap = float(np.max(np.abs(res.minimizer - 1 / 3)))
    f = ", ".join(f"{v:.6f}" for v in res.minimizer)
    return CheckResult("naive-not-proper", err < 1e-4 and gap >= 0.1, f"minimizer ({f}) for uniform target")


def check_hxe(n: int, rng) -> CheckResult:
    worst_loss, worst_sum = 0.0, 0.0
    for _ in range(n):
        h = random_hierarchy(rng, 30)
        alpha = float(rng.uniform(0.05, 2.0))
        y = int(rng.integers(1, h.n_leaves + 1))
        z = random_logits(rng, h.n_leaves, y)
        raw = hxe_weights(h, alpha, renormalize=False)
        worst_loss = max(worst_loss, abs(hxe_loss(h, z, y, alpha) - hierarchical_loss(raw, z, y)))
        worst_sum = max(worst_sum, float(np.max(np.abs(raw.leaf_sums() - math.exp(-alpha)))))
    ok = worst_loss < 1e-10 and worst_sum <= 1e-12
    return CheckResult("hxe-equivalence", ok, f"{n} draws, max loss gap {worst_loss:.3e}, max path-sum gap {worst_sum:.3e}")


def check_flat(n: int, rng) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(2, 12))
        h = flat_hierarchy(k)
        wh = exponential_weights(h, float(rng.uniform(0.1, 3.0)))
        y = int(rng.integers(1, k + 1))
        z = random_logits(rng, k, y)
        worst = max(worst, abs(hierarchical_loss(wh, z, y) - 0.5 * cross_entropy(z, y)))
    return CheckResult("flat-reduction", worst <= 1e-12, f"{n} draws, max gap {worst:.3e}")


def finite_difference_grad(fn: Callable[[np.ndarray], float], z: np.ndarray, step: float = 1e-5) -> np.ndarray:
    out = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = step
        out[i] = (fn(z + e) - fn(z - e)) / (2 * step)
    return out


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|)``; entries where both vanish count as 0."""
    den = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric) / np.where(den > 0, den, 1.0)
    return float(np.max(err))


def check_gradient(n: int, rng) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        h = random_hierarchy(rng, 20) if rng.random() < 0.7 else seven_leaf_hierarchy()
        wh = exponential_weights(h, float(rng.choice([0.5, 0.9, 1.0, 1.2, 2.0])))
        y = int(rng.integers(1, h.n_leaves + 1))
        z = random_logits(rng, h.n_leaves, y)
        num = finite_difference_grad(lambda v: hierarchical_loss(wh, v, y), z)
        worst = max(worst, grad_rel_error(hierarchical_loss_grad(wh, z, y), num))
    return CheckResult("gradient", worst < 1e-5, f"{n} draws, max relative error {worst:.3e}")


def wasserstein_trees() -> list:
    rng = np.random.default_rng(7)
    trees = [seven_leaf_hierarchy(), flat_hierarchy(5), three_leaf_hierarchy()]
    while len(trees) < 5:
        h = random_hierarchy(rng, 14)
        if 3 <= h.n_leaves <= 8:
            trees.append(h)
    return trees


def check_wasserstein(n_pairs: int, rng) -> CheckResult:
    gap_closed, gap_lp = 0.0, 0.0
    for h in wasserstein_trees():
        wh = exponential_weights(h, float(rng.choice([0.9, 1.0, 1.2])))
        for _ in range(n_pairs):
            mu = random_distribution(rng, h.n_leaves)
            nu = random_distribution(rng, h.n_leaves)
            y = int(rng.integers(1, h.n_leaves + 1))
            delta = np.eye(h.n_leaves)[y - 1]
            general = tree_wasserstein_general(wh, mu, delta)
            gap_closed = max(gap_closed, abs(general - tree_wasserstein(wh, mu, y)))
            gap_lp = max(gap_lp, abs(general - ot_lp(wh, mu, delta)))
            gap_lp = max(gap_lp, abs(tree_wasserstein_general(wh, mu, nu) - ot_lp(wh, mu, nu)))
    ok = gap_closed <= 1e-12 and gap_lp <= 1e-8
    return CheckResult("wasserstein", ok, f"closed vs general {gap_closed:.3e}, general vs LP {gap_lp:.3e}")


def check_tree_metric(trees: list, rng) -> CheckResult:
    worst, root_gap = 0.0, 0.0
    for h in trees:
        wh = exponential_weights(h, float(rng.choice([0.5, 0.9, 1.0, 1.2, 2.0])))
        for a in h.leaves:
            root_gap = max(root_gap, abs(bfs_distance(wh, a, 0) - 0.5))
            for b in h.leaves:
                ref = bfs_distance(wh, a, b)
                forms = distance_forms(wh, a, b)
                worst = max(worst, *(abs(v - ref) for v in forms.values()))
    ok = worst <= 1e-12 and root_gap <= 1e-12
    return CheckResult("tree-metric", ok, f"max form gap {worst:.3e}, leaf-to-root gap {root_gap:.3e}")


def run_checks(
    scale: str = "default",
    include_naive: bool = False,
    seed: int = 0,
    corrupt_weights: bool = False,
) -> list[CheckResult]:
    """Run every self-check; ``corrupt_weights`` perturbs the balance check's weights."""
    s = SCALES[scale]
    rng = np.random.default_rng(seed)

    def corrupted(h, q):
        wh = exponential_weights(h, q)
        w = wh.weights.copy()
        w[1] += 1e-3
        return WeightedHierarchy(h, w, wh.balance_constant)

    weight_fn = corrupted if corrupt_weights else exponential_weights

    results = [
        check_balance(max(1, int(200 * s)), rng, weight_fn),
        check_golden(),
        check_proper(max(1, int(20 * s)), rng),
        check_hxe(max(1, int(100 * s)), rng),
        check_flat(max(1, int(100 * s)), rng),
        check_gradient(max(1, int(100 * s)), rng),
        check_wasserstein(max(1, int(50 * s)), rng),
        check_tree_metric(wasserstein_trees() + [random_hierarchy(rng, 30) for _ in range(5)], rng),
    ]
    if include_naive:
        results.append(check_naive())
    return results

