"""Lloyd K-means over trajectory rows, Euclidean or Mahalanobis.

The Mahalanobis variant uses one pooled, ridge-regularized covariance for
the whole matrix. With that covariance fixed, clustering under it is
plain Euclidean K-means on whitened rows, which is how it is run here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from growthpatterns.cohort import TrajectoryMatrix
from growthpatterns.errors import DataError
from growthpatterns.linalg import cholesky_spd, pooled_covariance, whiten

METRICS = ("euclidean", "mahalanobis")
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    metric: str = "euclidean"
    max_iterations: int = 300
    tolerance: float = 1e-6
    restarts: int = 16
    seed: int = 0
    covariance_ridge: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if self.metric not in METRICS:
            raise DataError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.tolerance < 0:
            raise DataError("tolerance must be non-negative")
        if self.max_iterations < 1 or self.restarts < 1:
            raise DataError("max_iterations and restarts must be >= 1")


@dataclass
class KMeansModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    metric: str = "euclidean"
    covariance: np.ndarray | None = None
    child_ids: tuple[str, ...] = ()
    seed: int = 0
    # objective after each (assign, update) round of the winning restart
    history: tuple[float, ...] = ()
    restart_inertias: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def squared_euclidean(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def mahalanobis_sq(a, b, covariance) -> float:
    """(a-b)^T C^-1 (a-b) through a Cholesky solve."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    chol = cholesky_spd(covariance)
    if chol.shape[0] != a.shape[-1]:
        raise DataError("covariance dimension does not match vectors")
    z = whiten(a - b, chol)
    return float(np.dot(z, z))


def _as_rows(matrix) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(matrix, TrajectoryMatrix):
        return np.asarray(matrix.values, dtype=float), matrix.child_ids
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise DataError("expected an N x d matrix")
    return x, tuple(str(i) for i in range(x.shape[0]))


def _canonical_order(child_ids: Sequence[str]) -> np.ndarray:
    # Rows are visited in an id-hash order so the seeded draws do not
    # depend on how the caller happened to order the matrix.
    def key(i):
        cid = str(child_ids[i])
        return hashlib.blake2b(cid.encode("utf-8"), digest_size=16).digest(), cid

    return np.array(sorted(range(len(child_ids)), key=key), dtype=np.intp)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, n - 1)
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def _repair_empty(labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its own centroid."""
    counts = np.bincount(labels, minlength=k)
    if counts.min() > 0:
        return labels
    labels = labels.copy()
    own = d2[np.arange(labels.size), labels].copy()
    for j in np.flatnonzero(counts == 0):
        candidates = np.where(counts[labels] > 1, own, -np.inf)
        i = int(np.argmax(candidates))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] = 1
        own[i] = -np.inf
    return labels


def _means(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums / np.bincount(labels, minlength=k)[:, None]


def _objective(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _lloyd(x, k, rng, max_iterations, tolerance):
    centroids = _plusplus(x, k, rng)
    history = []
    labels = None
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        d2 = _sq_dists(x, centroids)
        labels = _repair_empty(np.argmin(d2, axis=1), d2, k)
        new = _means(x, labels, k)
        history.append(_objective(x, new, labels))
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift <= tolerance:
            break
    return centroids, labels, history[-1], iterations, history


def kmeans_fit(matrix, config: KMeansConfig) -> KMeansModel:
    """Best-of-restarts K-means with k-means++ seeding.

    ``matrix`` is a :class:`TrajectoryMatrix` or a plain N x d array (rows
    then get ids "0".."N-1"). The result depends only on the matrix
    contents, the child ids and ``config``.
    """
    x, child_ids = _as_rows(matrix)
    n = x.shape[0]
    if config.k > n:
        raise DataError(f"k={config.k} exceeds number of rows {n}")

    order = _canonical_order(child_ids)
    covariance = None
    work = x[order]
    if config.metric == "mahalanobis":
        covariance = pooled_covariance(work, config.covariance_ridge)
        work = whiten(work, cholesky_spd(covariance))

    best = None
    inertias = []
    for restart in range(config.restarts):
        rng = np.random.default_rng([config.seed & _SEED_MASK, restart])
        result = _lloyd(work, config.k, rng, config.max_iterations, config.tolerance)
        inertias.append(result[2])
        if best is None or result[2] < best[2]:
            best = result
    _, labels_sorted, _, iterations, history = best

    labels = np.empty(n, dtype=np.intp)
    labels[order] = labels_sorted
    # summed in canonical row order so the result is bitwise row-order independent
    centroids = _means(x[order], labels_sorted, config.k)
    inertia = _objective(work, _means(work, labels_sorted, config.k), labels_sorted)
    return KMeansModel(
        centroids=centroids,
        assignments=labels,
        inertia=inertia,
        iterations_run=iterations,
        metric=config.metric,
        covariance=covariance,
        child_ids=tuple(child_ids),
        seed=config.seed,
        history=tuple(history),
        restart_inertias=tuple(inertias),
    )


def assign_point(point, model: KMeansModel, covariance=None) -> int:
    """Nearest centroid under the model's metric; ties go to the lowest index."""
    point = np.asarray(point, dtype=float)
    if point.shape != model.centroids.shape[1:]:
        raise DataError(f"dimension mismatch: {point.shape} vs {model.centroids.shape[1:]}")
    if model.metric == "mahalanobis":
        if covariance is None:
            raise DataError("mahalanobis model needs a covariance")
        chol = cholesky_spd(covariance)
        z = whiten(point[None, :] - model.centroids, chol)
        dists = np.einsum("kd,kd->k", z, z)
    else:
        if covariance is not None:
            raise DataError("covariance given for a euclidean model")
        dists = np.array([squared_euclidean(point, c) for c in model.centroids])
    return int(np.argmin(dists))


def objective(matrix, model: KMeansModel) -> float:
    """Recompute the model's objective from its centroids and assignments."""
    x, _ = _as_rows(matrix)
    if model.metric == "mahalanobis":
        chol = cholesky_spd(model.covariance)
        z = whiten(x - model.centroids[model.assignments], chol)
        return float(np.einsum("nd,nd->", z, z))
    return _objective(x, model.centroids, model.assignments)


def model_to_dict(model: KMeansModel) -> dict:
    out = {
        "algorithm": "kmeans",
        "metric": model.metric,
        "k": model.k,
        "centroids": model.centroids.tolist(),
        "assignments": {cid: int(a) for cid, a in zip(model.child_ids, model.assignments)},
        "inertia": model.inertia,
        "iterations_run": model.iterations_run,
        "seed": model.seed,
    }
    if model.covariance is not None:
        out["covariance"] = model.covariance.tolist()
    return out


def model_from_dict(data: dict) -> KMeansModel:
    try:
        ids = tuple(data["assignments"])
        cov = data.get("covariance")
        return KMeansModel(
            centroids=np.array(data["centroids"], dtype=float),
            assignments=np.array([data["assignments"][c] for c in ids], dtype=np.intp),
            inertia=float(data["inertia"]),
            iterations_run=int(data.get("iterations_run", 0)),
            metric=data["metric"],
            covariance=None if cov is None else np.array(cov, dtype=float),
            child_ids=ids,
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed k-means model: {exc}") from None
