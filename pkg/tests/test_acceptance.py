"""Acceptance criteria, each checked at its stated tolerance and time budget."""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from hierloss.cli import main
from hierloss.hierarchy import flat_hierarchy, random_hierarchy, seven_leaf_hierarchy
from hierloss.metrics import coarsening_curve, evaluate
from hierloss.trainer import TrainConfig, compare_losses
from hierloss.verify import (
    check_balance,
    check_flat,
    check_golden,
    check_gradient,
    check_hxe,
    check_naive,
    check_proper,
    check_tree_metric,
    check_wasserstein,
    wasserstein_trees,
)
from hierloss.weighting import exponential_weights


def record(number, name, passed, detail, elapsed=None):
    timing = f" [{elapsed:.2f} s]" if elapsed is not None else ""
    line = f"{'PASS' if passed else 'FAIL'} {number:>2}. {name}: {detail}{timing}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def timed(fn, *args):
    start = time.perf_counter()
    result = fn(*args)
    return result, time.perf_counter() - start


def test_01_balance():
    res, elapsed = timed(check_balance, 200, np.random.default_rng(101))
    record(1, "balance", res.passed and elapsed < 5.0, res.detail, elapsed)


def test_02_golden_weights():
    res = check_golden()
    record(2, "golden weights", res.passed, res.detail)


def test_03_proper_scoring():
    res, elapsed = timed(check_proper, 20, np.random.default_rng(103))
    record(3, "proper scoring rule", res.passed and elapsed < 60.0, res.detail, elapsed)


def test_04_naive_not_proper():
    res = check_naive()
    record(4, "naive loss not proper", res.passed, res.detail)


def test_05_hxe_equivalence():
    res = check_hxe(100, np.random.default_rng(105))
    record(5, "HXE equivalence", res.passed, res.detail)


def test_06_flat_reduction():
    res = check_flat(100, np.random.default_rng(106))
    record(6, "flat-tree reduction", res.passed, res.detail)


def test_07_gradient():
    res = check_gradient(100, np.random.default_rng(107))
    record(7, "gradient check", res.passed, res.detail)


def test_08_wasserstein():
    res, elapsed = timed(check_wasserstein, 50, np.random.default_rng(108))
    record(8, "Wasserstein correctness", res.passed and elapsed < 30.0, res.detail, elapsed)


def test_09_tree_metric():
    rng = np.random.default_rng(109)
    trees = wasserstein_trees() + [random_hierarchy(rng, 30) for _ in range(10)]
    res = check_tree_metric(trees, rng)
    record(9, "tree metric", res.passed, f"{len(trees)} trees, {res.detail}")


def test_10_curve_endpoints():
    rng = np.random.default_rng(110)
    failures = []
    cases = [seven_leaf_hierarchy(), flat_hierarchy(6)] + [random_hierarchy(rng, 40) for _ in range(30)]
    for i, h in enumerate(cases):
        wh = exponential_weights(h, float(rng.choice([0.5, 0.9, 1.0, 1.2, 2.0])))
        probs = rng.dirichlet(np.full(h.n_leaves, 0.5), size=60)
        labels = rng.integers(1, h.n_leaves + 1, size=60)
        pts = coarsening_curve(wh, probs, labels).points
        fine = evaluate(wh, probs, labels).accuracy
        counts = [c for _, c, _ in pts]
        if not (pts[-1][0] == 0.5 and pts[-1][2] == fine and pts[0] == (0.0, 1, 1.0)
                and counts == sorted(counts)):
            failures.append(i)
    record(10, "coarsening curve endpoints", not failures,
           f"{len(cases)} trees, {len(failures)} with wrong endpoints or decreasing group counts")


def test_11_trend_reproduction():
    config = TrainConfig(loss="hier", q=0.9, epochs=100, lr=0.5, batch_size=8)
    results, elapsed = timed(lambda: compare_losses(
        seven_leaf_hierarchy(), range(10), config,
        train_per_class=5, test_per_class=200, dim=20, spread=2.0, eval_q=1.0))
    wins = sum(r.candidate.mean_hier_distance <= r.baseline.mean_hier_distance for r in results)
    acc_gap = math.fsum(r.candidate.accuracy - r.baseline.accuracy for r in results) / len(results)
    passed = wins >= 7 and acc_gap >= -0.02 and elapsed < 300.0
    record(11, "trend reproduction", passed,
           f"q=0.9 distance <= cross-entropy in {wins}/10 seeds, "
           f"mean accuracy difference {100 * acc_gap:+.2f} pp", elapsed)


def _run_twice(tmp_path, *argv):
    outputs = []
    for name in ("first", "second"):
        out_dir = tmp_path / name
        assert main([*argv, "--out-dir", str(out_dir)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    return outputs


def test_12_determinism(tmp_path, capsys):
    verify = _run_twice(tmp_path / "verify", "verify", "--scale", "quick", "--seed", "3")
    train = _run_twice(tmp_path / "train", "train", "--tree", "builtin:seven-leaf", "--epochs", "30",
                       "--per-class", "20", "--seed", "4", "--full-precision")
    threaded = _run_twice(tmp_path / "threads", "train", "--tree", "builtin:seven-leaf", "--epochs", "30",
                          "--per-class", "20", "--seed", "4", "--full-precision", "--threads", "4")
    capsys.readouterr()
    same_threads = train[0]["report.json"].split(b"\n", 1)[1] == threaded[0]["report.json"].split(b"\n", 1)[1]
    passed = verify[0] == verify[1] and train[0] == train[1] and threaded[0] == threaded[1] and same_threads
    record(12, "determinism", passed,
           f"verify files identical: {verify[0] == verify[1]}, train files identical: {train[0] == train[1]}, "
           f"report unchanged with 4 threads: {same_threads}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
