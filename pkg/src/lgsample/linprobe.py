"""Linear-probe evaluation: multinomial logistic regression on frozen
features, an L-BFGS fit per cost on a 96-point log grid, validation-based
selection, and a final refit on train+val.

Objective convention (documented, since probe numbers are only comparable
under a stated convention):

    loss(W) = sum_i cross_entropy(softmax(W @ x_i), y_i)
              + (1 / (2 * cost)) * ||W_without_bias||_F^2

so larger cost means weaker regularization. Features are used as-is; an
optional standardization flag is exposed and defaults off. Initialization
is W = 0, which makes every fit deterministic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .lbfgs import LbfgsResult, lbfgs_minimize

GRID_LOW = 1e-6
GRID_HIGH = 1e6
GRID_POINTS = 96

METRIC_KINDS = ("accuracy", "mean-per-class")


def default_cost_grid(points: int = GRID_POINTS) -> np.ndarray:
    """Log-uniform cost grid from 1e-6 to 1e6."""
    if points < 1:
        raise ValidationError(f"grid needs >= 1 points, got {points}")
    if points == 1:
        return np.array([1.0])
    return np.logspace(np.log10(GRID_LOW), np.log10(GRID_HIGH), points)


@dataclass
class ProbeConfig:
    cost_grid: np.ndarray = field(default_factory=default_cost_grid)
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-6
    lbfgs_memory: int = 10
    metric_kind: str = "accuracy"
    standardize: bool = False

    def __post_init__(self) -> None:
        grid = np.asarray(self.cost_grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 1:
            raise ValidationError("cost_grid must be a non-empty 1-D sequence")
        if (grid <= 0).any():
            raise ValidationError("cost_grid values must be positive")
        if grid.size > 1 and not (np.diff(grid) > 0).all():
            raise ValidationError("cost_grid must be strictly increasing")
        self.cost_grid = grid
        if self.max_iterations < 1:
            raise ValidationError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.metric_kind not in METRIC_KINDS:
            raise ValidationError(
                f"metric_kind must be one of {METRIC_KINDS}, got {self.metric_kind!r}"
            )


@dataclass
class ProbeReport:
    per_cost_val_metric: list[tuple[float, float]]
    best_cost: float
    best_val_metric: float
    test_metric: float
    iterations_used: list[int]
    final_iterations: int
    metric_kind: str

    def to_json_dict(self) -> dict:
        return {
            "metric": self.metric_kind,
            "per_cost": [
                {"cost": c, "val_metric": m} for c, m in self.per_cost_val_metric
            ],
            "best_cost": self.best_cost,
            "best_val_metric": self.best_val_metric,
            "test_metric": self.test_metric,
            "iterations": self.iterations_used,
            "final_iterations": self.final_iterations,
        }


def logreg_objective(
    weights: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    cost: float,
) -> tuple[float, np.ndarray]:
    """Loss and exact gradient at ``weights`` ((F+1) x C, bias last row).

    Softmax goes through the log-sum-exp shift; the penalty excludes the
    bias row.
    """
    if not cost > 0:
        raise ValidationError(f"cost must be positive, got {cost}")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if not np.isfinite(x).all():
        raise ValidationError("features contain non-finite values")
    n, f = x.shape
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != f + 1:
        raise ValidationError(
            f"weights must have {f + 1} rows (features + bias), got {w.shape[0]}"
        )
    c = w.shape[1]
    if y.min() < 0 or y.max() >= c:
        raise ValidationError("labels out of range of the weight columns")

    logits = x @ w[:f] + w[f]
    shift = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - shift)
    norm = expd.sum(axis=1)
    log_probs = logits - shift - np.log(norm)[:, None]
    data_loss = -log_probs[np.arange(n), y].sum()
    penalty = 0.5 / cost * float((w[:f] ** 2).sum())

    probs = expd / norm[:, None]
    probs[np.arange(n), y] -= 1.0
    grad = np.empty_like(w)
    grad[:f] = x.T @ probs + w[:f] / cost
    grad[f] = probs.sum(axis=0)
    return float(data_loss + penalty), grad


def fit_logreg(
    features: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    cost: float,
    config: ProbeConfig,
) -> tuple[np.ndarray, LbfgsResult]:
    """One deterministic fit from W = 0; returns ((F+1) x C weights, result)."""
    n, f = features.shape
    shape = (f + 1, n_classes)

    def objective(flat: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad = logreg_objective(flat.reshape(shape), features, labels, cost)
        return loss, grad.reshape(-1)

    result = lbfgs_minimize(
        objective,
        np.zeros(shape, dtype=np.float64).reshape(-1),
        max_iterations=config.max_iterations,
        gradient_tolerance=config.gradient_tolerance,
        memory=config.lbfgs_memory,
    )
    return result.x.reshape(shape), result


def predict(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    f = x.shape[1]
    logits = x @ weights[:f] + weights[f]
    return np.argmax(logits, axis=1)


def compute_metric(
    predictions: np.ndarray, labels: np.ndarray, kind: str = "accuracy"
) -> float:
    """Plain accuracy, or the unweighted mean of per-class recalls
    ("mean-per-class"; classes absent from ``labels`` are excluded)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels must have equal length")
    if labels.size == 0:
        raise ValidationError("empty input")
    if kind == "accuracy":
        return float(np.mean(predictions == labels))
    if kind == "mean-per-class":
        recalls = []
        for cls in np.unique(labels):
            mask = labels == cls
            recalls.append(float(np.mean(predictions[mask] == cls)))
        return float(np.mean(recalls))
    raise ValidationError(f"unknown metric kind {kind!r}")


@dataclass(frozen=True)
class ProbeSplit:
    """Features and integer labels for one split."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.features)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValidationError(f"split features must be 2-D, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValidationError("labels must align with feature rows")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))


def sweep_and_fit(
    train: ProbeSplit,
    val: ProbeSplit,
    test: ProbeSplit,
    config: ProbeConfig | None = None,
    n_threads: int | None = None,
) -> ProbeReport:
    """Fit one classifier per cost on train, select by validation metric
    (ties to the smaller cost), refit on train+val, report the test metric.
    """
    config = config if config is not None else ProbeConfig()
    for name, split in (("train", train), ("val", val), ("test", test)):
        if split.features.shape[0] == 0:
            raise ValidationError(f"{name} split is empty")
    if train.features.shape[1] != val.features.shape[1] or train.features.shape[
        1
    ] != test.features.shape[1]:
        raise ValidationError("feature dimension differs across splits")

    classes = np.unique(train.labels)
    for name, split in (("val", val), ("test", test)):
        missing = np.setdiff1d(np.unique(split.labels), classes)
        if missing.size:
            raise ValidationError(
                f"labels present in {name} but absent in train: {missing.tolist()}"
            )
    remap = {int(c): i for i, c in enumerate(classes)}
    n_classes = classes.size

    def encode(y: np.ndarray) -> np.ndarray:
        return np.array([remap[int(v)] for v in y], dtype=np.int64)

    train_y = encode(train.labels)
    val_y_orig = val.labels
    test_y_orig = test.labels

    train_x = train.features.astype(np.float64)
    val_x = val.features.astype(np.float64)
    test_x = test.features.astype(np.float64)
    if config.standardize:
        train_x, val_x, test_x2 = _standardized(train_x, val_x, test_x)
    else:
        test_x2 = test_x

    costs = config.cost_grid
    val_metrics: list[float | None] = [None] * costs.size
    iterations: list[int] = [0] * costs.size

    def fit_cost(ci: int) -> None:
        w, result = fit_logreg(train_x, train_y, n_classes, float(costs[ci]), config)
        preds = classes[predict(w, val_x)]
        val_metrics[ci] = compute_metric(preds, val_y_orig, config.metric_kind)
        iterations[ci] = result.iterations

    workers = n_threads if n_threads is not None else (os.cpu_count() or 1)
    if workers <= 1:
        for ci in range(costs.size):
            fit_cost(ci)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fit_cost, range(costs.size)))

    metrics = np.array([m for m in val_metrics], dtype=np.float64)
    best_index = int(np.argmax(metrics))  # first max == smallest cost on ties
    best_cost = float(costs[best_index])

    combo_x_raw = np.vstack([train.features, val.features]).astype(np.float64)
    combo_y = encode(np.concatenate([train.labels, val.labels]))
    if config.standardize:
        combo_x, _, test_x2 = _standardized(combo_x_raw, combo_x_raw, test_x)
    else:
        combo_x = combo_x_raw
    final_w, final_result = fit_logreg(combo_x, combo_y, n_classes, best_cost, config)
    test_preds = classes[predict(final_w, test_x2)]
    test_metric = compute_metric(test_preds, test_y_orig, config.metric_kind)

    return ProbeReport(
        per_cost_val_metric=[(float(c), float(m)) for c, m in zip(costs, metrics)],
        best_cost=best_cost,
        best_val_metric=float(metrics[best_index]),
        test_metric=test_metric,
        iterations_used=iterations,
        final_iterations=final_result.iterations,
        metric_kind=config.metric_kind,
    )


def _standardized(
    fit_x: np.ndarray, *others: np.ndarray
) -> tuple[np.ndarray, ...]:
    mean = fit_x.mean(axis=0)
    std = fit_x.std(axis=0)
    std[std == 0.0] = 1.0
    return tuple((arr - mean) / std for arr in (fit_x, *others))
