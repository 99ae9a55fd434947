"""Episodic few-shot evaluation of frozen features.

Protocol: 5-way 5-shot episodes with up to 5 query images per class (all
available test images when a class has fewer), a weighted nearest-neighbor
classifier over the full support set, and accuracy averaged over many
episodes with a 95% confidence interval.

Features are centered on the episode's support mean and L2-normalized
before classification. Support-only centering avoids test-set leakage and
is recorded in every report, since the protocol's source for the mean is
ambiguous.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
CENTERING = "support"


@dataclass(frozen=True)
class LabeledFeatureSet:
    """N x F float32 features with integer class labels and split tags."""

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray | None = None  # "train" | "test" per record
    class_names: tuple[str, ...] | None = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        x = np.ascontiguousarray(np.asarray(self.features, dtype=np.float32))
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValidationError(f"features must be 2-D and non-empty, got {x.shape}")
        if not np.isfinite(x).all():
            raise ValidationError("features contain non-finite values")
        if y.shape != (x.shape[0],):
            raise ValidationError("labels must align with feature rows")
        if y.min() < 0:
            raise ValidationError("labels must be non-negative class indices")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if self.split is not None:
            split = np.asarray(self.split)
            if split.shape != (x.shape[0],):
                raise ValidationError("split must align with feature rows")
            bad = ~np.isin(split, (SPLIT_TRAIN, SPLIT_TEST))
            if bad.any():
                raise ValidationError(
                    f"unknown split tag {split[bad][0]!r}; expected train or test"
                )
            object.__setattr__(self, "split", split)
        if self.class_names is not None:
            if y.max() >= len(self.class_names):
                raise ValidationError("labels exceed the class-name table")
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n_records(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class EpisodeSpec:
    """Episode protocol parameters; defaults are the standard 5-way/5-shot
    5000-episode configuration."""

    n_way: int = 5
    n_shot: int = 5
    n_query: int = 5
    episodes: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_way < 2:
            raise ValidationError(f"n_way must be >= 2, got {self.n_way}")
        if self.n_shot < 1 or self.n_query < 1:
            raise ValidationError("n_shot and n_query must be >= 1")
        if self.episodes < 1:
            raise ValidationError(f"episodes must be >= 1, got {self.episodes}")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass(frozen=True)
class Episode:
    support_indices: np.ndarray  # n_way * n_shot rows into the feature set
    query_indices: np.ndarray  # <= n_way * n_query rows
    classes: np.ndarray  # the n_way sampled class indices


@dataclass(frozen=True)
class FewshotReport:
    mean_accuracy: float
    ci95: float
    ci95_defined: bool
    episodes: int
    seed: int
    centering: str = CENTERING
    per_episode_accuracies: np.ndarray | None = None


def normalize_features(
    fset: LabeledFeatureSet, center: np.ndarray
) -> LabeledFeatureSet:
    """Subtract ``center`` from every row and L2-normalize (float64)."""
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    if center.shape[0] != fset.dim:
        raise ValidationError(
            f"center has length {center.shape[0]}, features have dim {fset.dim}"
        )
    shifted = fset.features.astype(np.float64) - center
    norms = np.sqrt(np.einsum("ij,ij->i", shifted, shifted))
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise ValidationError(f"row {row} is zero after centering")
    return LabeledFeatureSet(
        features=(shifted / norms[:, None]).astype(np.float32),
        labels=fset.labels,
        split=fset.split,
        class_names=fset.class_names,
        ids=fset.ids,
    )


def _episode_rng(seed: int, episode_index: int) -> np.random.Generator:
    # Entropy mixing of (seed, episode_index) gives each episode its own
    # stream, independent of evaluation order and thread schedule.
    return np.random.default_rng(np.random.SeedSequence([seed, episode_index]))


def _eligible_classes(fset: LabeledFeatureSet, spec: EpisodeSpec) -> np.ndarray:
    if fset.split is None:
        raise ValidationError("feature set has no train/test split tags")
    train_mask = fset.split == SPLIT_TRAIN
    test_mask = fset.split == SPLIT_TEST
    classes = np.unique(fset.labels)
    eligible = [
        int(c)
        for c in classes
        if (fset.labels[train_mask] == c).sum() >= spec.n_shot
        and (fset.labels[test_mask] == c).sum() >= 1
    ]
    if len(eligible) < spec.n_way:
        raise ValidationError(
            f"need >= {spec.n_way} classes with >= {spec.n_shot} train and "
            f">= 1 test records; only {len(eligible)} qualify"
        )
    return np.asarray(eligible, dtype=np.int64)


def sample_episode(
    fset: LabeledFeatureSet, spec: EpisodeSpec, episode_index: int
) -> Episode:
    """Draw one episode, deterministic in (seed, episode_index).

    Classes are drawn uniformly without replacement from those with enough
    records; support rows are train records, query rows are up to
    ``n_query`` test records per class (all of them when a class has
    fewer).
    """
    eligible = _eligible_classes(fset, spec)
    rng = _episode_rng(spec.seed, episode_index)
    classes = rng.choice(eligible, size=spec.n_way, replace=False)
    train_mask = fset.split == SPLIT_TRAIN
    test_mask = fset.split == SPLIT_TEST
    support = []
    query = []
    for cls in classes:
        train_rows = np.flatnonzero(train_mask & (fset.labels == cls))
        test_rows = np.flatnonzero(test_mask & (fset.labels == cls))
        support.append(rng.choice(train_rows, size=spec.n_shot, replace=False))
        take = min(spec.n_query, test_rows.shape[0])
        query.append(rng.choice(test_rows, size=take, replace=False))
    return Episode(
        support_indices=np.concatenate(support),
        query_indices=np.concatenate(query),
        classes=classes,
    )


def knn_classify(
    support_features: np.ndarray,
    support_labels: np.ndarray,
    query_features: np.ndarray,
) -> np.ndarray:
    """Weighted nearest-neighbor prediction over the full support set.

    Each query gets the class whose summed cosine similarity over that
    class's support members is largest; ties go to the smallest class
    index. Features must already be normalized.
    """
    support = np.asarray(support_features, dtype=np.float64)
    labels = np.asarray(support_labels)
    queries = np.asarray(query_features, dtype=np.float64)
    if support.shape[0] == 0:
        raise ValidationError("empty support set")
    sims = queries @ support.T
    classes = np.unique(labels)
    scores = np.empty((queries.shape[0], classes.shape[0]), dtype=np.float64)
    for col, cls in enumerate(classes):
        scores[:, col] = sims[:, labels == cls].sum(axis=1)
    return classes[np.argmax(scores, axis=1)]  # first max: smallest class


def evaluate_episode(
    fset: LabeledFeatureSet, spec: EpisodeSpec, episode_index: int
) -> float:
    """Accuracy of one episode under support-mean centering."""
    episode = sample_episode(fset, spec, episode_index)
    support_raw = fset.features[episode.support_indices].astype(np.float64)
    query_raw = fset.features[episode.query_indices].astype(np.float64)
    center = support_raw.mean(axis=0)
    support = _center_normalize(support_raw, center, "support")
    query = _center_normalize(query_raw, center, "query")
    preds = knn_classify(support, fset.labels[episode.support_indices], query)
    truth = fset.labels[episode.query_indices]
    return float(np.mean(preds == truth))


def _center_normalize(rows: np.ndarray, center: np.ndarray, what: str) -> np.ndarray:
    shifted = rows - center
    norms = np.sqrt(np.einsum("ij,ij->i", shifted, shifted))
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise ValidationError(f"{what} row {row} is zero after centering")
    return shifted / norms[:, None]


def run_fewshot(
    fset: LabeledFeatureSet,
    spec: EpisodeSpec,
    n_threads: int | None = None,
    keep_per_episode: bool = False,
) -> FewshotReport:
    """Evaluate all episodes and aggregate.

    ci95 = 1.96 * stdev(accuracies, ddof=1) / sqrt(episodes); undefined for
    a single episode and reported as 0 with ``ci95_defined=False``.
    Episodes evaluate in parallel; accuracies reduce in episode order, so
    the report is bit-identical for any thread count.
    """
    _eligible_classes(fset, spec)  # validate up front
    accuracies = np.zeros(spec.episodes, dtype=np.float64)

    def run(index: int) -> None:
        accuracies[index] = evaluate_episode(fset, spec, index)

    workers = n_threads if n_threads is not None else (os.cpu_count() or 1)
    if workers <= 1 or spec.episodes == 1:
        for i in range(spec.episodes):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(spec.episodes)))

    mean = float(np.mean(accuracies))
    if spec.episodes > 1:
        ci95 = float(
            1.96 * np.std(accuracies, ddof=1) / np.sqrt(spec.episodes)
        )
        defined = True
    else:
        ci95 = 0.0
        defined = False
    return FewshotReport(
        mean_accuracy=mean,
        ci95=ci95,
        ci95_defined=defined,
        episodes=spec.episodes,
        seed=spec.seed,
        per_episode_accuracies=accuracies if keep_per_episode else None,
    )
