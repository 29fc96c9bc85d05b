"""Cholesky-based helpers shared by the distance and density code."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from growthpatterns.errors import NumericError

SYMMETRY_TOL = 1e-12


def cholesky_spd(covariance) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises NumericError if the matrix is not square, not symmetric to a
    relative 1e-12, or not positive definite.
    """
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NumericError(f"covariance must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise NumericError("covariance has non-finite entries")
    scale = max(float(np.max(np.abs(cov))), 1.0)
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * scale:
        raise NumericError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericError("covariance is not positive definite") from None


def whiten(diff, chol: np.ndarray) -> np.ndarray:
    """Solve L z = diff for z; rows of a 2-D ``diff`` are treated as vectors."""
    diff = np.asarray(diff, dtype=float)
    if diff.ndim == 1:
        return solve_triangular(chol, diff, lower=True, check_finite=False)
    return solve_triangular(chol, diff.T, lower=True, check_finite=False).T


def ridge(covariance: np.ndarray, strength: float) -> np.ndarray:
    """Add ``strength * trace / d`` to the diagonal, keeping the floor unit-free."""
    d = covariance.shape[0]
    out = covariance + (strength * np.trace(covariance) / d) * np.eye(d)
    return 0.5 * (out + out.T)


def pooled_covariance(values, ridge_strength: float = 1e-6) -> np.ndarray:
    """Sample covariance (ddof=1) of all rows, ridge-regularized."""
    x = np.asarray(values, dtype=float)
    if x.shape[0] < 2:
        raise NumericError("pooled covariance needs at least two rows")
    return ridge(np.cov(x, rowvar=False, ddof=1), ridge_strength)
