"""EM for Gaussian mixtures with full, per-component covariance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from growthpatterns.errors import DataError, NumericError
from growthpatterns.kmeans import KMeansConfig, _as_rows, kmeans_fit
from growthpatterns.linalg import cholesky_spd, whiten

INITS = ("from_kmeans", "random_responsibilities")
_SEED_MASK = (1 << 64) - 1
_LOG_2PI = math.log(2.0 * math.pi)
# a component with less total responsibility than this holds no data
ZERO_MASS = 1e-10


class ComponentCollapse(NumericError):
    """Raised by :func:`m_step` when a component has (numerically) no mass."""

    def __init__(self, components):
        self.components = tuple(int(c) for c in components)
        super().__init__(f"zero-mass mixture component(s) {list(self.components)}")


@dataclass(frozen=True)
class GmmConfig:
    k: int
    max_iterations: int = 500
    tolerance: float = 1e-7
    covariance_ridge: float = 1e-6
    init: str = "from_kmeans"
    seed: int = 0
    restarts: int = 8
    # responsibility mass below which a component counts as collapsed;
    # None means d + 1 whenever N >= 2k(d + 1), else only zero mass
    min_component_mass: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if self.init not in INITS:
            raise DataError(f"unknown init {self.init!r}; choose from {INITS}")
        if self.tolerance < 0 or self.covariance_ridge < 0:
            raise DataError("tolerance and covariance_ridge must be non-negative")
        if self.max_iterations < 1 or self.restarts < 1:
            raise DataError("max_iterations and restarts must be >= 1")


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float = float("nan")
    iterations_run: int = 0
    # total log-likelihood at every E-step of the winning restart
    history: tuple[float, ...] = ()
    # history positions right after a collapsed component was re-spread
    respread_at: tuple[int, ...] = ()
    restart_log_likelihoods: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def validate(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise NumericError("mixture weights must be positive and sum to 1")
        if self.means.shape[0] != w.size or self.covariances.shape[0] != w.size:
            raise NumericError("weights, means and covariances disagree on k")
        d = self.means.shape[1]
        if self.covariances.shape[1:] != (d, d):
            raise NumericError("covariance shape does not match mean dimension")


def _logpdf_rows(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    z = whiten(x - mean, chol)
    maha = np.einsum("nd,nd->n", z, z)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (x.shape[1] * _LOG_2PI + log_det + maha)


def gaussian_logpdf(x, mean, covariance) -> float:
    """Multivariate normal log-density at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if x.shape != mean.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {mean.shape}")
    chol = cholesky_spd(np.atleast_2d(covariance))
    if chol.shape[0] != x.size:
        raise DataError("covariance dimension does not match x")
    return float(_logpdf_rows(x[None, :], mean, chol)[0])


def _weighted_log_densities(x: np.ndarray, model: GmmModel) -> np.ndarray:
    out = np.empty((x.shape[0], model.k))
    for j in range(model.k):
        chol = cholesky_spd(model.covariances[j])
        out[:, j] = math.log(model.weights[j]) + _logpdf_rows(x, model.means[j], chol)
    return out


def e_step(matrix, model: GmmModel) -> tuple[np.ndarray, float]:
    """Responsibilities (N x k, rows sum to 1) and total log-likelihood."""
    model.validate()
    x, _ = _as_rows(matrix)
    if x.shape[1] != model.means.shape[1]:
        raise DataError("matrix dimension does not match model")
    log_p = _weighted_log_densities(x, model)
    log_norm = logsumexp(log_p, axis=1)
    resp = np.exp(log_p - log_norm[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, float(np.sum(log_norm))


def _ridge_scale(x: np.ndarray, ridge: float) -> float:
    d = x.shape[1]
    if x.shape[0] < 2:
        return ridge
    total = float(np.trace(np.cov(x, rowvar=False, ddof=0)))
    return ridge * (total / d if total > 0 else 1.0)


def m_step(matrix, resp, ridge: float = 1e-6) -> GmmModel:
    """Weighted proportions, means and full covariances from responsibilities.

    Each covariance gets ``ridge * trace(C) / d`` on its diagonal, where C
    is the covariance of the whole matrix.
    """
    x, _ = _as_rows(matrix)
    resp = np.asarray(resp, dtype=float)
    if resp.ndim != 2 or resp.shape[0] != x.shape[0]:
        raise DataError("responsibilities must be N x k")
    mass = resp.sum(axis=0)
    empty = np.flatnonzero(mass < ZERO_MASS)
    if empty.size:
        raise ComponentCollapse(empty)
    k, d = resp.shape[1], x.shape[1]
    means = (resp.T @ x) / mass[:, None]
    floor = _ridge_scale(x, ridge) * np.eye(d)
    covs = np.empty((k, d, d))
    for j in range(k):
        diff = x - means[j]
        c = (resp[:, j, None] * diff).T @ diff / mass[j] + floor
        covs[j] = 0.5 * (c + c.T)
    return GmmModel(weights=mass / mass.sum(), means=means, covariances=covs)


def _initial_model(x, config: GmmConfig, seed_words) -> GmmModel:
    seeds = np.random.SeedSequence(seed_words)
    if config.init == "random_responsibilities":
        rng = np.random.default_rng(seeds)
        resp = rng.dirichlet(np.ones(config.k), size=x.shape[0])
        return m_step(x, resp, config.covariance_ridge)
    km_seed = int(seeds.generate_state(1, dtype=np.uint64)[0])
    km = kmeans_fit(x, KMeansConfig(k=config.k, restarts=1, seed=km_seed))
    counts = np.bincount(km.assignments, minlength=config.k).astype(float)
    cov = _pooled_within_covariance(x, km.assignments, km.centroids, config.covariance_ridge)
    return GmmModel(
        weights=counts / counts.sum(),
        means=km.centroids.copy(),
        covariances=np.repeat(cov[None], config.k, axis=0),
    )


def _pooled_within_covariance(x, labels, centroids, ridge: float) -> np.ndarray:
    """Within-cluster scatter pooled over all clusters, divided by N."""
    diff = x - centroids[labels]
    c = diff.T @ diff / x.shape[0] + _ridge_scale(x, ridge) * np.eye(x.shape[1])
    return 0.5 * (c + c.T)


def _global_covariance(x: np.ndarray, ridge: float) -> np.ndarray:
    d = x.shape[1]
    if x.shape[0] < 2:
        return _ridge_scale(x, ridge) * np.eye(d) + np.eye(d)
    c = np.cov(x, rowvar=False, ddof=0) + _ridge_scale(x, ridge) * np.eye(d)
    return 0.5 * (c + c.T)


def _respread(x, model: GmmModel, resp, components, ridge) -> GmmModel:
    """Re-seed collapsed components at the worst-explained rows with the global covariance."""
    weights = model.weights.copy()
    means = model.means.copy()
    covs = model.covariances.copy()
    log_p = _weighted_log_densities(x, model)
    fit = logsumexp(log_p, axis=1)
    cov = _global_covariance(x, ridge)
    taken = set()
    for j in components:
        order = np.argsort(fit, kind="stable")
        i = next(int(i) for i in order if int(i) not in taken)
        taken.add(i)
        means[j] = x[i]
        covs[j] = cov
        weights[j] = 1.0 / model.k
    return GmmModel(weights=weights / weights.sum(), means=means, covariances=covs)


def _collapse_floor(n: int, d: int, config: GmmConfig) -> float:
    if config.min_component_mass is not None:
        return max(config.min_component_mass, ZERO_MASS)
    # a full d x d covariance needs more than d points' worth of mass
    return float(d + 1) if n >= 2 * config.k * (d + 1) else ZERO_MASS


def _run_em(x, model: GmmModel, config: GmmConfig) -> tuple[GmmModel, np.ndarray]:
    n, d = x.shape
    floor = _collapse_floor(n, d, config)
    history = []
    respread_at = []
    iterations = 0
    while True:
        resp, ll = e_step(x, model)
        history.append(ll)
        converged = len(history) > 1 and (history[-1] - history[-2]) / n < config.tolerance
        if converged and (not respread_at or respread_at[-1] != len(history) - 1):
            break
        if iterations >= config.max_iterations:
            break
        iterations += 1
        try:
            weak = np.flatnonzero(resp.sum(axis=0) < floor)
            if weak.size:
                raise ComponentCollapse(weak)
            model = m_step(x, resp, config.covariance_ridge)
        except ComponentCollapse as exc:
            if respread_at:
                raise NumericError(f"mixture component collapsed again after re-spreading: {exc}") from None
            model = _respread(x, model, resp, exc.components, config.covariance_ridge)
            respread_at.append(len(history))
    model.log_likelihood = ll
    model.iterations_run = iterations
    model.history = tuple(history)
    model.respread_at = tuple(respread_at)
    return model, resp


def hard_assignments(resp) -> np.ndarray:
    """Argmax responsibility per row; ties go to the lowest component index."""
    return np.argmax(np.asarray(resp), axis=1).astype(np.intp)


def gmm_fit(matrix, config: GmmConfig) -> tuple[GmmModel, np.ndarray]:
    """Best-of-restarts EM fit; returns the model and hard assignments."""
    x, _ = _as_rows(matrix)
    n = x.shape[0]
    if config.k > n:
        raise DataError(f"k={config.k} exceeds number of rows {n}")
    best = None
    failures = []
    lls = []
    for restart in range(config.restarts):
        seed = [config.seed & _SEED_MASK, restart]
        try:
            start = _initial_model(x, config, seed)
            model, resp = _run_em(x, start, config)
        except NumericError as exc:
            failures.append(f"restart {restart}: {exc}")
            lls.append(float("nan"))
            continue
        lls.append(model.log_likelihood)
        if best is None or model.log_likelihood > best[0].log_likelihood:
            best = (model, resp)
    if best is None:
        raise NumericError("every EM restart failed: " + "; ".join(failures))
    model, resp = best
    model.restart_log_likelihoods = tuple(lls)
    return model, hard_assignments(resp)


def model_to_dict(model: GmmModel, child_ids=(), assignments=None, config: GmmConfig | None = None) -> dict:
    out = {
        "algorithm": "gmm",
        "k": model.k,
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "covariances": [c.tolist() for c in model.covariances],
        "log_likelihood": model.log_likelihood,
        "iterations_run": model.iterations_run,
    }
    if assignments is not None:
        out["assignments"] = {cid: int(a) for cid, a in zip(child_ids, assignments)}
    if config is not None:
        out["config"] = {
            "k": config.k,
            "max_iterations": config.max_iterations,
            "tolerance": config.tolerance,
            "covariance_ridge": config.covariance_ridge,
            "init": config.init,
            "seed": config.seed,
            "restarts": config.restarts,
            "min_component_mass": config.min_component_mass,
        }
    return out


def model_from_dict(data: dict) -> GmmModel:
    try:
        model = GmmModel(
            weights=np.array(data["weights"], dtype=float),
            means=np.array(data["means"], dtype=float),
            covariances=np.array(data["covariances"], dtype=float),
            log_likelihood=float(data["log_likelihood"]),
            iterations_run=int(data.get("iterations_run", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed mixture model: {exc}") from None
    model.validate()
    return model
