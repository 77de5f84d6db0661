import math

import numpy as np
import pytest

from hierloss.hierarchy import flat_hierarchy
from hierloss.trainer import (
    Dataset,
    LinearModel,
    TrainConfig,
    TrainingDiverged,
    compare_losses,
    cosine_lr,
    evaluate_model,
    generate_synthetic,
    holdout_split,
    loss_function,
    named_rng,
    split_per_class,
    train,
)
from hierloss.weighting import exponential_weights


@pytest.fixture
def data(seven):
    return generate_synthetic(seven, per_class=12, dim=6, spread=1.0, seed=3)


def test_named_streams_are_independent_and_stable():
    a = named_rng(1, "init").normal(size=4)
    assert np.array_equal(a, named_rng(1, "init").normal(size=4))
    assert not np.array_equal(a, named_rng(1, "shuffle").normal(size=4))
    assert not np.array_equal(a, named_rng(2, "init").normal(size=4))


def test_synthetic_layout(seven, data):
    assert len(data) == 84 and data.dim == 6
    assert data.class_counts(7).tolist() == [12] * 7
    assert data.labels[:12].tolist() == [1] * 12
    again = generate_synthetic(seven, per_class=12, dim=6, spread=1.0, seed=3)
    assert np.array_equal(data.features, again.features)


def test_splits(data):
    tr, te = holdout_split(data, 0.25)
    assert tr.class_counts(7).tolist() == [9] * 7 and te.class_counts(7).tolist() == [3] * 7
    tr, te = split_per_class(data, 5)
    assert len(tr) == 35 and len(te) == 49


def test_csv_roundtrip(seven, data):
    again = Dataset.from_csv("# comment\n" + data.to_csv(), seven)
    assert np.array_equal(again.features, data.features)
    assert np.array_equal(again.labels, data.labels)
    with pytest.raises(ValueError):
        Dataset.from_csv("f_1,label\n1.0,unknown\n", seven)


def test_cosine_schedule():
    assert cosine_lr(0.4, 0, 10) == pytest.approx(0.4)
    assert cosine_lr(0.4, 5, 10) == pytest.approx(0.2)


def test_flat_tree_with_doubled_rate_matches_cross_entropy():
    h = flat_hierarchy(5)
    ds = generate_synthetic(h, per_class=8, dim=4, spread=1.0, seed=0)
    ce = train(ds, h, TrainConfig(loss="ce", epochs=10, lr=0.3, batch_size=7, seed=1))
    hier = train(ds, h, TrainConfig(loss="hier", q=0.7, epochs=10, lr=0.6, batch_size=7, seed=1))
    assert np.max(np.abs(ce.class_weights - hier.class_weights)) < 1e-8
    assert np.max(np.abs(ce.class_biases - hier.class_biases)) < 1e-8


def test_huge_q_approaches_half_cross_entropy(seven, data):
    fn = loss_function(seven, TrainConfig(loss="hier", q=1e6))
    ce = loss_function(seven, TrainConfig(loss="ce"))
    z = np.random.default_rng(0).normal(size=(10, 7))
    y = data.labels[:10]
    np.testing.assert_allclose(fn(z, y)[0], 0.5 * ce(z, y)[0], atol=1e-4)


@pytest.mark.parametrize("loss", ["ce", "hier", "hxe"])
def test_training_is_deterministic_and_descends(seven, data, loss):
    cfg = TrainConfig(loss=loss, epochs=15, lr=0.3, batch_size=8, seed=5)
    a, b = train(data, seven, cfg), train(data, seven, cfg)
    assert np.array_equal(a.class_weights, b.class_weights) and a.history == b.history
    assert a.history[-1] < a.history[0]
    assert all(math.isfinite(v) for v in a.history)


def test_single_step_reduces_loss(seven, data):
    cfg = TrainConfig(loss="hier", epochs=1, lr=0.05, batch_size=len(data), seed=0)
    fn = loss_function(seven, cfg)
    init = named_rng(0, "init").normal(0.0, 0.01, size=(7, data.dim))
    before = math.fsum(fn(data.features @ init.T, data.labels)[0]) / len(data)
    assert train(data, seven, cfg).history[0] < before


def test_divergence_is_reported(seven, data):
    scaled = Dataset(data.features * 1e150, data.labels)
    with pytest.raises(TrainingDiverged):
        train(scaled, seven, TrainConfig(loss="ce", epochs=3, lr=1e10, batch_size=4))


def test_config_validation():
    for bad in ({"loss": "mse"}, {"epochs": 0}, {"lr": 0.0}, {"q": -1.0}, {"loss": "hxe", "alpha": 0.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_model_roundtrip_and_evaluation(seven, data):
    model = train(data, seven, TrainConfig(epochs=20, lr=0.5, batch_size=8))
    again = LinearModel.from_dict(model.to_dict())
    assert np.array_equal(again.class_weights, model.class_weights)
    report, curve = evaluate_model(again, data, exponential_weights(seven, 1.0))
    assert report.accuracy > 0.9
    assert curve.points[-1][2] == report.accuracy


def test_compare_losses_shapes(seven):
    res = compare_losses(seven, [0, 1], TrainConfig(q=0.9, epochs=5, batch_size=8),
                         train_per_class=3, test_per_class=10, dim=5)
    assert [r.seed for r in res] == [0, 1]
    assert all(r.baseline.sample_count == 70 for r in res)


def test_small_sample_trend_favours_hierarchical_loss(seven):
    config = TrainConfig(loss="hier", q=0.9, epochs=100, lr=0.5, batch_size=8)
    res = compare_losses(seven, range(5), config, train_per_class=5, test_per_class=200)
    assert sum(r.candidate.mean_hier_distance <= r.baseline.mean_hier_distance for r in res) >= 3
    assert sum(r.candidate.mean_wasserstein < r.baseline.mean_wasserstein for r in res) >= 3
