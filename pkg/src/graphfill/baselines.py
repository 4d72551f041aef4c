"""Deterministic reference imputers: per-feature MEAN and within-graph KNN."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class KnnConfig:
    k: int = 5
    distance: str = "euclidean_observed"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.distance != "euclidean_observed":
            raise ValueError(f"unknown distance '{self.distance}'")


def fit_feature_means(matrices: list[np.ndarray], masks: list[np.ndarray]) -> np.ndarray:
    """Per-feature mean of observed entries across all given matrices.

    Dimensions with no observed value fall back to 0 (the post-normalization
    fill value).
    """
    d = matrices[0].shape[1]
    total = np.zeros(d)
    count = np.zeros(d)
    for x, r in zip(matrices, masks):
        total += (x * r).sum(axis=0)
        count += r.sum(axis=0)
    means = np.zeros(d)
    seen = count > 0
    means[seen] = total[seen] / count[seen]
    return means


def mean_impute(x: np.ndarray, r: np.ndarray, feature_means: np.ndarray | None = None) -> np.ndarray:
    """Fill missing entries with per-feature means; observed entries untouched.

    Pass dataset-wide means fitted on the training split; with None the means
    are fitted per matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise ValueError("feature/mask shapes must match")
    if feature_means is None:
        feature_means = fit_feature_means([x], [r])
    return x * r + (1.0 - r) * feature_means[None, :]


def knn_impute(
    x: np.ndarray,
    r: np.ndarray,
    cfg: KnnConfig | None = None,
    feature_means: np.ndarray | None = None,
) -> np.ndarray:
    """Fill each missing entry with the mean of the k nearest rows' observed
    values in that dimension.

    Distance is euclidean over commonly observed dimensions, rescaled by
    D/|common| to correct for support size; rows sharing no observed dimension
    are not neighbors.  Entries no neighbor observes fall back to mean
    imputation.
    """
    cfg = cfg or KnnConfig()
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise ValueError("feature/mask shapes must match")
    n, d = x.shape
    if n < 2:
        warnings.warn("degenerate graph with a single row: falling back to mean imputation")
        return mean_impute(x, r, feature_means)
    if feature_means is None:
        feature_means = fit_feature_means([x], [r])

    out = x * r
    xz = x * r
    for i in range(n):
        missing = np.flatnonzero(r[i] == 0)
        if missing.size == 0:
            continue
        common = r * r[i]  # (n, d) commonly observed indicator
        counts = common.sum(axis=1)
        counts[i] = 0
        diff = (xz - xz[i]) * common
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.sqrt((diff * diff).sum(axis=1) * d / counts)
        dist[counts == 0] = np.inf
        dist[i] = np.inf
        order = np.argsort(dist, kind="stable")
        neighbors = order[np.isfinite(dist[order])][: cfg.k]
        for j in missing:
            values = [x[t, j] for t in neighbors if r[t, j] == 1]
            out[i, j] = np.mean(values) if values else feature_means[j]
    return out
