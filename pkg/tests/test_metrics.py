import json

import numpy as np
import pytest
from conftest import growth_rates, trees
from hypothesis import given, settings
from hypothesis import strategies as st

from hierloss.metrics import (
    coarsening_curve,
    evaluate,
    hier_distance,
    predict,
    tree_wasserstein,
    tree_wasserstein_general,
)
from hierloss.oracle import ot_lp
from hierloss.weighting import exponential_weights, tree_distance


def test_predict_ties_to_lowest():
    assert predict(np.array([[0.4, 0.4, 0.2], [0.1, 0.2, 0.7]])).tolist() == [1, 3]


def test_hier_distance_is_lca_height(seven):
    assert hier_distance(seven, 6, 6) == 0
    assert hier_distance(seven, 6, 7) == 1
    assert hier_distance(seven, 6, 5) == 2
    assert hier_distance(seven, 6, 1) == 3


def test_wasserstein_of_point_mass_is_tree_distance(seven):
    wh = exponential_weights(seven, 1.0)
    for y in seven.leaves:
        for k in seven.leaves:
            assert tree_wasserstein(wh, np.eye(7)[k - 1], y) == pytest.approx(tree_distance(wh, y, k), abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(trees(14), growth_rates, st.integers(0, 2**31))
def test_wasserstein_forms_and_lp(h, q, seed):
    rng = np.random.default_rng(seed)
    wh = exponential_weights(h, q)
    mu, nu = rng.dirichlet(np.ones(h.n_leaves), size=2)
    y = int(rng.integers(1, h.n_leaves + 1))
    delta = np.eye(h.n_leaves)[y - 1]
    assert abs(tree_wasserstein_general(wh, mu, delta) - tree_wasserstein(wh, mu, y)) <= 1e-12
    if h.n_leaves <= 8:
        assert abs(tree_wasserstein_general(wh, mu, nu) - ot_lp(wh, mu, nu)) <= 1e-8
    assert tree_wasserstein_general(wh, mu, nu) == pytest.approx(tree_wasserstein_general(wh, nu, mu), abs=1e-15)


def test_evaluate_report(seven):
    wh = exponential_weights(seven, 1.0)
    probs = np.eye(7)[[0, 5, 6, 4]]
    labels = np.array([1, 6, 6, 6])
    rep = evaluate(wh, probs, labels)
    assert rep.accuracy == 0.5
    assert rep.mean_hier_distance == pytest.approx((0 + 0 + 1 + 2) / 4)
    assert rep.mean_wasserstein == pytest.approx((1 / 3 + 2 / 3) / 4)
    assert rep.sample_count == 4
    assert json.loads(rep.to_json()) == {"accuracy": 0.5, "mean_hier_distance": 0.75,
                                          "mean_wasserstein": 0.25, "sample_count": 4}


def test_evaluate_threads_identical(seven):
    rng = np.random.default_rng(1)
    wh = exponential_weights(seven, 0.9)
    probs = rng.dirichlet(np.ones(7), size=501)
    labels = rng.integers(1, 8, size=501)
    one = evaluate(wh, probs, labels, threads=1)
    assert evaluate(wh, probs, labels, threads=4) == one
    perm = rng.permutation(501)
    assert evaluate(wh, probs[perm], labels[perm]) == one


def test_evaluate_rejects_bad_input(seven):
    wh = exponential_weights(seven, 1.0)
    with pytest.raises(ValueError):
        evaluate(wh, np.full((2, 7), 0.5), [1, 2])
    with pytest.raises(ValueError):
        evaluate(wh, np.full((2, 7), 1 / 7), [1])


@settings(max_examples=40, deadline=None)
@given(trees(30), growth_rates, st.integers(0, 2**31))
def test_curve_endpoints_and_monotone_groups(h, q, seed):
    rng = np.random.default_rng(seed)
    wh = exponential_weights(h, q)
    probs = rng.dirichlet(np.ones(h.n_leaves), size=40)
    labels = rng.integers(1, h.n_leaves + 1, size=40)
    pts = coarsening_curve(wh, probs, labels).points
    assert pts[0] == (0.0, 1, 1.0)
    assert pts[-1][0] == 0.5 and pts[-1][1] == h.n_leaves
    assert pts[-1][2] == evaluate(wh, probs, labels).accuracy
    counts = [c for _, c, _ in pts]
    assert counts == sorted(counts)


def test_curve_seven_leaf(seven):
    wh = exponential_weights(seven, 1.0)
    # predicts leaf 7 for a leaf-6 sample: right from tau = 1/3 down
    probs = np.eye(7)[[6]]
    curve = coarsening_curve(wh, probs, [6])
    assert [(round(t, 6), c, a) for t, c, a in curve.points] == [
        (0.0, 1, 1.0), (0.166667, 3, 1.0), (0.25, 4, 1.0), (0.333333, 6, 1.0), (0.5, 7, 0.0)]
    assert curve.to_csv().splitlines()[0] == "tau,group_count,accuracy"
