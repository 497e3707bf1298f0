"""Moment estimators for the dispersion and the working correlation.

All estimators consume Pearson residuals ``(y - mu) / sqrt(v(mu))`` laid out
in stacked cluster order. Denominators subtract the number of regression
coefficients ``q``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalError, SpecError

CLAMP = 0.99
MIN_EIGENVALUE = 1e-10
RIDGE = 1e-8


class CorrelationWarning(UserWarning):
    """Clamped estimates, ridge adjustments and degenerate residuals."""


@dataclass(frozen=True)
class CorrelationStructure:
    """A fitted working correlation.

    ``alpha`` is the scalar parameter for exchangeable and AR(1); ``matrix``
    is the full ``m x m`` estimate for unstructured. ``raw`` keeps the
    unclamped estimate (scalar or matrix).
    """

    tag: str
    alpha: Optional[float] = None
    matrix: Optional[np.ndarray] = None
    raw: object = None

    def matrix_for(self, m: int) -> np.ndarray:
        if self.tag == "independence":
            return np.eye(m)
        if self.tag == "exchangeable":
            R = np.full((m, m), self.alpha)
            np.fill_diagonal(R, 1.0)
            return R
        if self.tag == "ar1":
            lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
            return self.alpha ** lag
        if self.matrix.shape[0] != m:
            raise SpecError(
                f"unstructured correlation has dimension {self.matrix.shape[0]}, "
                f"cluster has size {m}")
        return self.matrix

    @property
    def n_params(self) -> int:
        """Number of distinct correlation parameters."""
        if self.tag == "independence":
            return 0
        if self.tag in ("exchangeable", "ar1"):
            return 1
        m = self.matrix.shape[0]
        return m * (m - 1) // 2

    def describe(self) -> str:
        if self.tag == "independence":
            return "independence"
        if self.tag in ("exchangeable", "ar1"):
            return f"{self.tag} (alpha = {self.alpha:.4f})"
        return f"unstructured ({self.n_params} correlation parameters)"


def pearson_residuals(y, mu, family) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("y and mu must have the same shape")
    v = family.variance(family.clamp_mean(mu))
    if np.any(v <= 0):
        raise NumericalError("variance function is zero; cannot form Pearson residuals")
    return (y - mu) / np.sqrt(v)


def estimate_dispersion(residuals, q: int) -> float:
    """``sum(e^2) / (M_tot - q)``; an all-zero residual vector gives 0 with a warning."""
    e = np.asarray(residuals, dtype=float)
    dof = e.size - q
    if dof <= 0:
        raise NumericalError(
            f"no residual degrees of freedom: {e.size} observations, {q} coefficients")
    phi = float(np.dot(e, e) / dof)
    if phi == 0.0:
        warnings.warn("all residuals are zero; dispersion estimate is 0 (degenerate fit)",
                      CorrelationWarning, stacklevel=2)
    return phi


def _clamp(value, what):
    clipped = np.clip(value, -CLAMP, CLAMP)
    if np.any(clipped != value):
        warnings.warn(f"{what} clamped to [-{CLAMP}, {CLAMP}]", CorrelationWarning,
                      stacklevel=3)
    return clipped


def estimate_correlation(residuals, cluster_starts, tag: str, phi: float,
                         q: int) -> CorrelationStructure:
    """Moment estimate of the working correlation from Pearson residuals.

    Parameters
    ----------
    residuals : ndarray
        Pearson residuals in stacked cluster order.
    cluster_starts : ndarray
        Cluster offsets with the total length appended.
    tag : {'independence', 'exchangeable', 'ar1', 'unstructured'}
    phi : float
        Dispersion in force.
    q : int
        Number of regression coefficients.
    """
    e = np.asarray(residuals, dtype=float)
    starts = np.asarray(cluster_starts)
    sizes = np.diff(starts)
    if tag == "independence":
        return CorrelationStructure("independence")
    if tag not in ("exchangeable", "ar1", "unstructured"):
        raise SpecError(f"unknown correlation structure {tag!r}")

    if tag == "unstructured":
        if np.any(sizes != sizes[0]):
            raise SpecError("unstructured working correlation requires equal cluster sizes")
        m = int(sizes[0])
        if m < 2:
            raise SpecError("unstructured working correlation needs clusters of size >= 2")
        n = sizes.size
        if n - q <= 0:
            raise SpecError(
                f"unstructured correlation needs more clusters ({n}) than coefficients ({q})")
        E = e.reshape(n, m)
        if phi == 0:
            return _degenerate(tag, m)
        raw = (E.T @ E) / (phi * (n - q))
        R = 0.5 * (raw + raw.T)
        np.fill_diagonal(R, 1.0)
        off = ~np.eye(m, dtype=bool)
        R[off] = _clamp(R[off], "unstructured correlation entries")
        return CorrelationStructure("unstructured", matrix=R, raw=raw)

    if np.all(sizes < 2):
        raise SpecError(f"{tag} working correlation needs at least one cluster of size >= 2")
    nonempty = starts[:-1][sizes > 0]
    if tag == "exchangeable":
        cl_sum = np.add.reduceat(e, nonempty)
        cl_sq = np.add.reduceat(e * e, nonempty)
        pair_sum = 0.5 * float(np.sum(cl_sum ** 2 - cl_sq))
        n_pairs = float(np.sum(sizes * (sizes - 1))) / 2.0
        denom = n_pairs - q
    else:
        boundary = np.zeros(e.size, dtype=bool)
        boundary[starts[1:-1] - 1] = True
        pair_sum = float(np.sum((e[:-1] * e[1:])[~boundary[:-1]]))
        denom = float(np.sum(np.maximum(sizes - 1, 0))) - q
    if denom <= 0:
        raise SpecError(f"too few within-cluster pairs to estimate {tag} correlation")
    if phi == 0:
        return _degenerate(tag, None)
    raw = pair_sum / (phi * denom)
    alpha = float(_clamp(raw, f"{tag} correlation"))
    return CorrelationStructure(tag, alpha=alpha, raw=raw)


def _degenerate(tag, m):
    warnings.warn("dispersion is zero; using identity working correlation",
                  CorrelationWarning, stacklevel=3)
    if tag == "unstructured":
        return CorrelationStructure(tag, matrix=np.eye(m), raw=np.eye(m))
    return CorrelationStructure(tag, alpha=0.0, raw=0.0)


def stabilize(R: np.ndarray) -> tuple:
    """Return ``(R_used, ridge)`` with ``R_used`` safe for a Cholesky solve.

    If the smallest eigenvalue is below ``MIN_EIGENVALUE`` the diagonal is
    shifted so the smallest eigenvalue becomes ``RIDGE``.
    """
    lam = float(np.linalg.eigvalsh(R)[0])
    if lam >= MIN_EIGENVALUE:
        return R, 0.0
    ridge = RIDGE - min(lam, 0.0)
    warnings.warn(
        f"working correlation is near-singular (min eigenvalue {lam:.3g}); "
        f"adding ridge {ridge:.3g} to the diagonal", CorrelationWarning, stacklevel=2)
    return R + ridge * np.eye(R.shape[0]), ridge


def build_working_covariance(R, mu, phi: float, family) -> np.ndarray:
    """``phi * A^{1/2} R A^{1/2}`` with ``A = diag(v(mu))``."""
    R = np.asarray(R, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if R.shape != (mu.size, mu.size):
        raise SpecError(f"correlation dimension {R.shape} does not match cluster size {mu.size}")
    s = np.sqrt(family.variance(mu))
    return phi * (s[:, None] * R * s[None, :])
