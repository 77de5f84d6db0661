"""Linear softmax classifiers trained with flat or hierarchical losses.

Everything random draws from generators derived from one integer seed and a
stream name, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .hierarchy import Hierarchy
from .loss import cross_entropy, cross_entropy_grad, hierarchical_loss, hierarchical_loss_grad, softmax
from .metrics import CoarseningCurve, EvaluationReport, coarsening_curve, evaluate
from .weighting import WeightedHierarchy, exponential_weights, hxe_weights

__all__ = [
    "Dataset",
    "LinearModel",
    "TrainConfig",
    "TrainingDiverged",
    "named_rng",
    "generate_synthetic",
    "split_per_class",
    "holdout_split",
    "train",
    "evaluate_model",
    "loss_function",
    "cosine_lr",
    "checkpoint_json",
    "TrendResult",
    "compare_losses",
]

LOSS_KINDS = ("ce", "hier", "hxe")


class TrainingDiverged(FloatingPointError):
    """The training loss became non-finite."""


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for stream ``name`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("features must be (N, m) with one label per row")
        if x.shape[0] < 1:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if np.any(y < 1):
            raise ValueError("labels are leaf ids starting at 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self, n_classes: int | None = None) -> np.ndarray:
        k = n_classes if n_classes is not None else int(self.labels.max())
        return np.bincount(self.labels - 1, minlength=k)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])

    def to_csv(self, full_precision: bool = True) -> str:
        fmt = repr if full_precision else (lambda v: f"{v:.6f}")
        head = ",".join(f"f_{i + 1}" for i in range(self.dim)) + ",label\n"
        rows = (
            ",".join(fmt(float(v)) for v in row) + f",{lab}\n"
            for row, lab in zip(self.features, self.labels)
        )
        return head + "".join(rows)

    @classmethod
    def from_csv(cls, text: str, tree: Hierarchy | None = None) -> "Dataset":
        """Read ``f_1,...,f_m,label`` rows; ``#`` lines are skipped.

        Labels are leaf ids, or node names / original ids resolvable in ``tree``.
        """
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if len(lines) < 2:
            raise ValueError("dataset file needs a header and at least one row")
        lookup: dict[str, int] = {}
        if tree is not None:
            for k in tree.leaves:
                lookup[tree.original_ids[k]] = k
                if tree.names[k]:
                    lookup[tree.names[k]] = k
        feats, labels = [], []
        for lineno, line in enumerate(lines[1:], 2):
            cols = line.split(",")
            try:
                feats.append([float(c) for c in cols[:-1]])
            except ValueError as exc:
                raise ValueError(f"row {lineno}: {exc}") from exc
            raw = cols[-1].strip()
            if raw.lstrip("-").isdigit():
                labels.append(int(raw))
            elif raw in lookup:
                labels.append(lookup[raw])
            else:
                raise ValueError(f"row {lineno}: unknown label {raw!r}")
        return cls(np.array(feats), np.array(labels))


@dataclass(frozen=True)
class LinearModel:
    class_weights: np.ndarray
    class_biases: np.ndarray
    history: tuple[float, ...] = ()

    def logits(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.class_weights.T + self.class_biases

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def to_dict(self) -> dict:
        k, m = self.class_weights.shape
        return {
            "n_classes": k,
            "dim": m,
            "class_weights": self.class_weights.ravel().tolist(),
            "class_biases": self.class_biases.tolist(),
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        k, m = int(d["n_classes"]), int(d["dim"])
        return cls(
            np.asarray(d["class_weights"], dtype=np.float64).reshape(k, m),
            np.asarray(d["class_biases"], dtype=np.float64),
            tuple(d.get("history", ())),
        )


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "hier"
    q: float = 0.9
    alpha: float = 0.1
    epochs: int = 100
    lr: float = 0.5
    batch_size: int = 16
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.epochs < 1 or not self.lr > 0 or self.batch_size < 1:
            raise ValueError("epochs, lr and batch_size must be positive")
        if self.loss == "hier" and not self.q > 0:
            raise ValueError("q must be > 0")
        if self.loss == "hxe" and not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


LossFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def loss_function(h: Hierarchy, config: TrainConfig) -> LossFn:
    """Per-sample losses and logit gradients for the configured loss."""
    if config.loss == "ce":
        return lambda z, y: (cross_entropy(z, y), cross_entropy_grad(z, y))
    if config.loss == "hier":
        wh = exponential_weights(h, config.q)
    else:
        # raw HXE weights reproduce the conditional-probability form exactly
        wh = hxe_weights(h, config.alpha, renormalize=False)
    return lambda z, y: (hierarchical_loss(wh, z, y), hierarchical_loss_grad(wh, z, y))


def cosine_lr(base: float, epoch: int, epochs: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / epochs))


def train(dataset: Dataset, h: Hierarchy, config: TrainConfig) -> LinearModel:
    """Mini-batch gradient descent on the mean loss, cosine-annealed per epoch.

    ``history`` holds the full-dataset mean loss after every epoch.
    """
    k = h.n_leaves
    if int(dataset.labels.max()) > k:
        raise ValueError(f"labels exceed the {k} leaves of the hierarchy")
    x, y = dataset.features, dataset.labels
    n, m = x.shape
    fn = loss_function(h, config)
    weights = named_rng(config.seed, "init").normal(0.0, config.init_scale, size=(k, m))
    biases = np.zeros(k)
    shuffle = named_rng(config.seed, "shuffle")
    history = []
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr, epoch, config.epochs)
        order = shuffle.permutation(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = order[start: start + config.batch_size]
                z = x[idx] @ weights.T + biases
                if not np.all(np.isfinite(z)):
                    raise TrainingDiverged(f"non-finite logits at epoch {epoch + 1}")
                _, g = fn(z, y[idx])
                g /= idx.shape[0]
                weights -= lr * (g.T @ x[idx])
                biases -= lr * g.sum(axis=0)
            z = x @ weights.T + biases
        if not np.all(np.isfinite(z)):
            raise TrainingDiverged(f"non-finite logits at epoch {epoch + 1}")
        losses, _ = fn(z, y)
        mean = math.fsum(losses) / n
        if not math.isfinite(mean):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch + 1}")
        history.append(mean)
    return LinearModel(weights, biases, tuple(history))


def evaluate_model(
    model: LinearModel, dataset: Dataset, wh: WeightedHierarchy, threads: int = 1
) -> tuple[EvaluationReport, CoarseningCurve]:
    if model.class_weights.shape != (wh.tree.n_leaves, dataset.dim):
        raise ValueError(
            f"model shape {model.class_weights.shape} does not match "
            f"{wh.tree.n_leaves} classes x {dataset.dim} features"
        )
    probs = model.predict_proba(dataset.features)
    return (
        evaluate(wh, probs, dataset.labels, threads=threads),
        coarsening_curve(wh, probs, dataset.labels),
    )


def generate_synthetic(
    h: Hierarchy,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
    step: float = 4.0,
) -> Dataset:
    """Gaussian classes whose means follow the tree.

    Starting from the origin at the root, each node's mean is its parent's
    mean plus a Gaussian offset with standard deviation ``step * 2 w_j``
    (``w`` the ``q = 1`` exponential weights, so each root-to-leaf walk has
    the same total scale). Samples are drawn around the leaf means with
    standard deviation ``spread`` and stored class by class.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    w = exponential_weights(h, 1.0).weights
    means = np.zeros((h.node_count, dim))
    walk = named_rng(seed, "class-means")
    for j in np.argsort(h.depths, kind="stable")[1:]:
        means[j] = means[h.parent[j]] + walk.normal(0.0, step * 2.0 * w[j], size=dim)
    noise = named_rng(seed, "samples")
    feats = []
    for c in h.leaves:
        feats.append(means[c] + spread * noise.normal(size=(per_class, dim)))
    labels = np.repeat(np.arange(1, h.n_leaves + 1), per_class)
    return Dataset(np.vstack(feats), labels)


def split_per_class(dataset: Dataset, n_train: int) -> tuple[Dataset, Dataset]:
    """First ``n_train`` samples of every class for training, the rest held out."""
    train_idx, test_idx = [], []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    return dataset.subset(np.array(train_idx)), dataset.subset(np.array(test_idx, dtype=np.int64))


def holdout_split(dataset: Dataset, fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Hold out the last ``fraction`` of each class (at least one sample when possible)."""
    train_idx, test_idx = [], []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        n_test = int(round(fraction * idx.shape[0]))
        if n_test == 0 and idx.shape[0] > 1 and fraction > 0:
            n_test = 1
        train_idx.extend(idx[: idx.shape[0] - n_test])
        test_idx.extend(idx[idx.shape[0] - n_test:])
    return dataset.subset(np.array(train_idx)), dataset.subset(np.array(test_idx, dtype=np.int64))


def checkpoint_json(model: LinearModel, config: TrainConfig, manifest: dict | None = None) -> str:
    doc = {"manifest": manifest or {}, "config": config.to_dict(), "model": model.to_dict()}
    return json.dumps(doc) + "\n"


@dataclass(frozen=True)
class TrendResult:
    seed: int
    baseline: EvaluationReport
    candidate: EvaluationReport


def compare_losses(
    h: Hierarchy,
    seeds,
    candidate: TrainConfig,
    baseline: TrainConfig | None = None,
    train_per_class: int = 5,
    test_per_class: int = 200,
    dim: int = 20,
    spread: float = 2.0,
    eval_q: float = 1.0,
) -> list[TrendResult]:
    """Train a baseline and a candidate loss on the same small synthetic sets.

    For every seed, ``train_per_class`` samples per class are used for
    training and ``test_per_class`` fresh samples per class for evaluation.
    The configs' own seeds are replaced by the experiment seed.
    """
    baseline = baseline or TrainConfig(**{**candidate.to_dict(), "loss": "ce"})
    wh = exponential_weights(h, eval_q)
    out = []
    for seed in seeds:
        data = generate_synthetic(h, train_per_class + test_per_class, dim, spread, seed)
        tr, te = split_per_class(data, train_per_class)
        reports = []
        for cfg in (baseline, candidate):
            model = train(tr, h, TrainConfig(**{**cfg.to_dict(), "seed": seed}))
            reports.append(evaluate_model(model, te, wh)[0])
        out.append(TrendResult(seed, reports[0], reports[1]))
    return out
