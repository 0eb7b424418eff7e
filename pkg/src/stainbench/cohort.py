"""Reference selection and representative-subset selection for a cohort.

The reference image is the one whose red/blue mean-intensity ratio is
closest to 1. Representative selection embeds concatenated lαβ channel
histograms with PCA, clusters the 2-D projections with seeded k-means,
and picks the member nearest each centroid. Everything is deterministic:
fixed seeds, earliest-index tie-breaks, and fixed sign conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import colorspace as cs
from .errors import (EmptyCohortError, InconsistentModelError, KTooLargeError,
                     TooFewSamplesError)
from .raster import RgbImage

DEFAULT_CLUSTER_COUNT = 8
MAX_LLOYD_ITERATIONS = 300


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Concatenated normalized lαβ channel histograms (3 * bin_count)."""

    values: np.ndarray
    image_id: str = ""


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (n_components, d), orthonormal rows
    explained_variance: np.ndarray  # (n_components,), non-increasing

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


@dataclass(frozen=True, eq=False)
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,)
    wcss: float
    seed: int


def select_reference(ratios) -> str:
    """image_id whose ratio is closest to 1; earliest entry wins ties."""
    ratios = list(ratios)
    if not ratios:
        raise EmptyCohortError("no ratios given")
    best_id, best_err = None, None
    for image_id, ratio in ratios:
        if not np.isfinite(ratio):
            raise ValueError(f"{image_id}: ratio is not finite")
        err = abs(ratio - 1.0)
        if best_err is None or err < best_err:
            best_id, best_err = image_id, err
    return best_id


def histogram_features(img: RgbImage, bins: int = cs.DEFAULT_BIN_COUNT,
                       image_id: str = "") -> FeatureVector:
    hists = cs.channel_histograms(cs.rgb_to_lab(img), bins)
    return FeatureVector(values=np.concatenate([h.weights for h in hists]),
                         image_id=image_id)


def pca_fit_project(features, n_components: int = 2):
    """Mean-centered SVD projection.

    Component signs are fixed so each component's largest-magnitude entry
    is positive; explained variances use the population convention.
    """
    features = list(features) if not isinstance(features, np.ndarray) else features
    if isinstance(features, list) and features and isinstance(features[0], FeatureVector):
        x = np.stack([f.values for f in features])
    else:
        x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise TooFewSamplesError("need a nonempty 2-D sample matrix")
    n = x.shape[0]
    if n < 2:
        raise TooFewSamplesError(f"{n} samples, need at least 2")
    if not 1 <= n_components <= min(n, x.shape[1]):
        raise ValueError("n_components must be within min(samples, dimension)")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:n_components].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    model = PcaModel(mean=mean, components=components,
                     explained_variance=(svals[:n_components] ** 2) / n)
    return model, centered @ components.T


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _wcss(points: np.ndarray, centroids: np.ndarray,
          assignments: np.ndarray) -> float:
    diff = points - centroids[assignments]
    return float((diff * diff).sum())


def _lloyd(points: np.ndarray, centroids: np.ndarray):
    """Lloyd iterations until stable assignments or the iteration cap.

    Empty clusters are re-seeded from the point farthest from its own
    centroid. Returns (centroids, assignments, per-iteration WCSS history).
    """
    k = centroids.shape[0]
    assignments = None
    history = []
    for _ in range(MAX_LLOYD_ITERATIONS):
        new_assign = _assign(points, centroids)
        for cluster in range(k):
            if not (new_assign == cluster).any():
                dist = ((points - centroids[new_assign]) ** 2).sum(axis=1)
                far = int(dist.argmax())
                new_assign[far] = cluster
                centroids[cluster] = points[far]
        history.append(_wcss(points, centroids, new_assign))
        if assignments is not None and (new_assign == assignments).all():
            break
        assignments = new_assign
        for cluster in range(k):
            members = points[assignments == cluster]
            if members.size:
                centroids[cluster] = members.mean(axis=0)
    for cluster in range(k):
        members = points[assignments == cluster]
        centroids[cluster] = members.mean(axis=0)
    history.append(_wcss(points, centroids, assignments))
    return centroids, assignments, history


def kmeans_cluster(points, k: int, seed: int = 0) -> ClusterModel:
    """Seeded k-means++ then Lloyd; same seed gives an identical model."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be an (n, d) array")
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise KTooLargeError(f"k={k} exceeds {n} points")
    rng = np.random.default_rng(seed)
    centroids, assignments, history = _lloyd(points, _kmeanspp_init(points, k, rng))
    return ClusterModel(k=int(k), centroids=centroids, assignments=assignments,
                        wcss=history[-1], seed=int(seed))


def wcss_curve(points, k_range, seed: int = 0):
    """(k, wcss) pairs for operator-side elbow inspection; no automatic pick."""
    return [(int(k), kmeans_cluster(points, int(k), seed).wcss) for k in k_range]


def choose_representatives(model: ClusterModel, points, ids) -> list:
    """Per cluster, the id nearest the centroid; earliest index wins ties.

    Output is ordered by cluster index."""
    points = np.asarray(points, dtype=np.float64)
    ids = list(ids)
    if points.shape[0] != model.assignments.shape[0] or len(ids) != points.shape[0]:
        raise InconsistentModelError("points/ids do not match the model")
    if model.assignments.max(initial=-1) >= model.k:
        raise InconsistentModelError("assignment index out of range")
    reps = []
    for cluster in range(model.k):
        members = np.flatnonzero(model.assignments == cluster)
        if members.size == 0:
            raise InconsistentModelError(f"cluster {cluster} is empty")
        d2 = ((points[members] - model.centroids[cluster]) ** 2).sum(axis=1)
        reps.append(ids[members[int(d2.argmin())]])
    return reps


def cluster_results_to_json(model: ClusterModel, ids, representatives,
                            curve) -> dict:
    return {
        "k": model.k,
        "seed": model.seed,
        "assignments": {image_id: int(cluster)
                        for image_id, cluster in zip(ids, model.assignments)},
        "representatives": list(representatives),
        "wcss_curve": [[int(k), float(w)] for k, w in curve],
    }
