import math

import numpy as np
import pytest
from conftest import growth_rates, trees
from hypothesis import given, settings
from hypothesis import strategies as st

from hierloss.hierarchy import HierarchyError, flat_hierarchy
from hierloss.loss import (
    build_aggregation,
    cross_entropy,
    cross_entropy_grad,
    expected_loss,
    expected_loss_grad,
    hierarchical_loss,
    hierarchical_loss_grad,
    hxe_loss,
    hxe_loss_grad,
    log_masses,
    naive_loss,
    softmax,
)
from hierloss.oracle import expected_loss_direct, loss_from_probs
from hierloss.verify import finite_difference_grad, grad_rel_error, random_logits, three_leaf_hierarchy
from hierloss.weighting import exponential_weights, hxe_weights, unit_weights


def test_uniform_logits_value(seven):
    wh = exponential_weights(seven, 1.0)
    # F along the path of leaf 6 is (1/7, 2/7, 3/7) with weights (1/6, 1/6, 1/6)
    expected = (3 * math.log(7) - math.log(6)) / 6
    assert hierarchical_loss(wh, np.zeros(7), 6) == pytest.approx(expected, abs=1e-15)


def test_confident_prediction_has_vanishing_loss(seven):
    wh = exponential_weights(seven, 0.9)
    z = np.zeros(7)
    z[2] = 40.0
    assert hierarchical_loss(wh, z, 3) < 1e-15
    assert np.max(np.abs(hierarchical_loss_grad(wh, z, 3))) < 1e-15


def test_aggregation_map(seven):
    agg = build_aggregation(seven)
    assert agg[9] == frozenset({6, 7})
    assert agg[0] == frozenset(range(1, 8))
    f = softmax(np.arange(7.0))
    masses = agg.aggregate(f)
    assert masses[0] == pytest.approx(1.0)
    assert masses[10] == pytest.approx(f[4:7].sum())


@settings(max_examples=80, deadline=None)
@given(trees(25), growth_rates, st.integers(0, 2**31))
def test_loss_matches_probability_domain(h, q, seed):
    rng = np.random.default_rng(seed)
    wh = exponential_weights(h, q)
    y = int(rng.integers(1, h.n_leaves + 1))
    z = rng.normal(0, 2, size=h.n_leaves)
    assert hierarchical_loss(wh, z, y) == pytest.approx(loss_from_probs(wh, softmax(z), y), rel=1e-10, abs=1e-14)
    masses = log_masses(h, z)[0]
    np.testing.assert_allclose(np.exp(masses - masses[0]), build_aggregation(h).aggregate(softmax(z)), rtol=1e-12)


@settings(max_examples=80, deadline=None)
@given(trees(20), growth_rates, st.integers(0, 2**31))
def test_gradient_matches_finite_differences(h, q, seed):
    rng = np.random.default_rng(seed)
    wh = exponential_weights(h, q)
    y = int(rng.integers(1, h.n_leaves + 1))
    z = random_logits(rng, h.n_leaves, y)
    num = finite_difference_grad(lambda v: hierarchical_loss(wh, v, y), z)
    assert grad_rel_error(hierarchical_loss_grad(wh, z, y), num) < 1e-5


@settings(max_examples=50, deadline=None)
@given(trees(20), growth_rates, st.integers(0, 2**31))
def test_gradient_sums_to_zero(h, q, seed):
    # softmax is invariant to a common shift of the logits
    rng = np.random.default_rng(seed)
    wh = exponential_weights(h, q)
    y = int(rng.integers(1, h.n_leaves + 1))
    g = hierarchical_loss_grad(wh, rng.normal(0, 3, size=h.n_leaves), y)
    assert abs(g.sum()) < 1e-12


def test_batch_matches_single(seven):
    rng = np.random.default_rng(0)
    wh = exponential_weights(seven, 1.2)
    z = rng.normal(size=(6, 7))
    y = rng.integers(1, 8, size=6)
    batch = hierarchical_loss(wh, z, y)
    grads = hierarchical_loss_grad(wh, z, y)
    for i in range(6):
        assert batch[i] == hierarchical_loss(wh, z[i], int(y[i]))
        np.testing.assert_array_equal(grads[i], hierarchical_loss_grad(wh, z[i], int(y[i])))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), growth_rates, st.integers(0, 2**31))
def test_flat_tree_is_half_cross_entropy(k, q, seed):
    rng = np.random.default_rng(seed)
    wh = exponential_weights(flat_hierarchy(k), q)
    y = int(rng.integers(1, k + 1))
    z = random_logits(rng, k, y)
    assert abs(hierarchical_loss(wh, z, y) - 0.5 * cross_entropy(z, y)) <= 1e-12
    np.testing.assert_allclose(hierarchical_loss_grad(wh, z, y), 0.5 * cross_entropy_grad(z, y), atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(trees(30), st.floats(0.05, 2.0), st.integers(0, 2**31))
def test_hxe_direct_form_equals_weighted_form(h, alpha, seed):
    rng = np.random.default_rng(seed)
    y = int(rng.integers(1, h.n_leaves + 1))
    z = random_logits(rng, h.n_leaves, y)
    raw = hxe_weights(h, alpha, renormalize=False)
    assert abs(hxe_loss(h, z, y, alpha) - hierarchical_loss(raw, z, y)) < 1e-10
    num = finite_difference_grad(lambda v: hxe_loss(h, v, y, alpha), z)
    # central differences of the direct form resolve components only down to ~1e-11
    np.testing.assert_allclose(hxe_loss_grad(h, z, y, alpha), num, rtol=1e-5, atol=1e-10)


def test_naive_loss_uses_unit_weights():
    h = three_leaf_hierarchy()
    z = np.array([0.3, -1.0, 2.0])
    f = softmax(z)
    assert naive_loss(h, z, 2) == pytest.approx(-math.log(f[1]) - math.log(f[1] + f[2]), abs=1e-14)


def test_expected_loss_matches_sum_over_labels(seven):
    rng = np.random.default_rng(3)
    for wh in (exponential_weights(seven, 0.9), hxe_weights(seven, 0.5), unit_weights(seven)):
        pi = rng.dirichlet(np.ones(7))
        f = rng.dirichlet(np.ones(7))
        assert expected_loss(wh, f, pi) == pytest.approx(expected_loss_direct(wh, f, pi), rel=1e-12)
        num = finite_difference_grad(lambda v: expected_loss_direct(wh, v, pi), f, step=1e-7)
        np.testing.assert_allclose(expected_loss_grad(wh, f, pi), num, rtol=1e-6)


def test_expected_loss_rejects_non_distributions(seven):
    wh = exponential_weights(seven, 1.0)
    with pytest.raises(ValueError):
        expected_loss(wh, np.full(7, 0.2), np.full(7, 1 / 7))
    with pytest.raises(ValueError):
        expected_loss(wh, np.full(6, 1 / 6), np.full(7, 1 / 7))


@pytest.mark.parametrize("label", [0, 8, -1])
def test_bad_labels(seven, label):
    with pytest.raises(HierarchyError):
        hierarchical_loss(exponential_weights(seven, 1.0), np.zeros(7), label)


def test_bad_logits(seven):
    wh = exponential_weights(seven, 1.0)
    with pytest.raises(ValueError):
        hierarchical_loss(wh, np.zeros(6), 1)
    with pytest.raises(ValueError):
        hierarchical_loss(wh, np.array([np.nan] + [0.0] * 6), 1)
    with pytest.raises(HierarchyError):
        hierarchical_loss(wh, np.zeros(7), 1.5)


def test_extreme_logits_stay_finite(seven):
    wh = exponential_weights(seven, 1.0)
    z = np.array([800.0, -800, 0, 0, 0, 0, 0])
    assert math.isfinite(hierarchical_loss(wh, z, 2))
    assert np.all(np.isfinite(hierarchical_loss_grad(wh, z, 2)))
    assert hierarchical_loss(wh, z, 2) == pytest.approx(0.25 * 1600 + 0.25 * (800 - math.log(2)), rel=1e-12)
