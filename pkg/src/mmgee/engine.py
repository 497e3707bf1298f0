"""First-order GEE solver (Fisher scoring) with robust and model-based covariances.

Clusters are processed in groups of equal size. Within a group the working
correlation is factorised once (Cholesky) and every cluster's design and
residuals are whitened by that factor, so no per-cluster inverse is formed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, stats

from .correlation import (CorrelationStructure, estimate_correlation,
                          estimate_dispersion, pearson_residuals, stabilize)
from .design import StackedProblem
from .errors import NumericalError, SpecError
from .families import Family


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class GeeFit:
    """Result of :func:`fit_gee`.

    ``trace`` holds ``max |delta beta|`` for each scoring iteration.
    Covariances are ``q x q``; ``fitted`` holds stacked fitted means.
    """

    coef: np.ndarray
    robust_cov: np.ndarray
    model_cov: np.ndarray
    scale: float
    correlation: CorrelationStructure
    n_iter: int
    converged: bool
    trace: tuple
    fitted: np.ndarray
    labels: tuple
    family: Family
    corstr: str
    responses: tuple = ()
    n_clusters: int = 0
    n_obs: int = 0
    score: Optional[np.ndarray] = None

    @property
    def robust_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.robust_cov), 0, None))

    @property
    def model_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.model_cov), 0, None))

    def cov(self, source: str = "robust") -> np.ndarray:
        if source == "robust":
            return self.robust_cov
        if source in ("model", "naive", "model-based"):
            return self.model_cov
        raise ValueError(f"unknown covariance source {source!r}")

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no coefficient labelled {label!r}") from None

    def summary_frame(self):
        """Coefficient table with robust and model-based SEs and Z statistics."""
        import pandas as pd

        rse, mse = self.robust_se, self.model_se
        with np.errstate(divide="ignore", invalid="ignore"):
            return pd.DataFrame({
                "estimate": self.coef,
                "robust_se": rse,
                "robust_z": self.coef / rse,
                "model_se": mse,
                "model_z": self.coef / mse,
            }, index=pd.Index(self.labels, name="label"))


class _Layout:
    """Row indices of clusters grouped by cluster size."""

    def __init__(self, problem: StackedProblem):
        starts = problem.cluster_starts
        sizes = np.diff(starts)
        self.n_clusters = sizes.size
        self.groups = []
        for m in np.unique(sizes):
            which = np.flatnonzero(sizes == m)
            rows = starts[which][:, None] + np.arange(m)[None, :]
            self.groups.append((int(m), which, rows))


def _whiten(L, A):
    """Apply ``L^{-1}`` along axis 1 of an ``(n, m, ...)`` array."""
    n, m = A.shape[:2]
    flat = np.moveaxis(A, 1, 0).reshape(m, -1)
    out = linalg.solve_triangular(L, flat, lower=True, check_finite=False)
    return np.moveaxis(out.reshape((m, n) + A.shape[2:]), 0, 1)


def cluster_sums(problem: StackedProblem, family: Family, beta, correlation,
                 layout: Optional[_Layout] = None):
    """Information matrix and per-cluster scores at ``beta``.

    Returns ``(B, U)`` where ``B = sum_i D_i' W_i^{-1} D_i`` and row ``i`` of
    ``U`` is ``D_i' W_i^{-1} (y_i - mu_i)``, with ``W_i = A_i^{1/2} R A_i^{1/2}``
    the unit-dispersion working covariance.
    """
    layout = layout or _Layout(problem)
    X, y = problem.X, problem.y
    q = X.shape[1]
    B = np.zeros((q, q))
    U = np.zeros((layout.n_clusters, q))
    for m, which, rows in layout.groups:
        Xg = X[rows]
        eta = Xg @ beta
        mu = family.clamp_mean(family.inverse_link(eta))
        sd = np.sqrt(family.variance(mu))
        D = (family.mean_derivative(eta) / sd)[..., None] * Xg
        r = (y[rows] - mu) / sd
        if correlation.tag != "independence":
            R, _ = stabilize(correlation.matrix_for(m))
            try:
                L = np.linalg.cholesky(R)
            except np.linalg.LinAlgError as exc:
                ids = [str(s) for s in problem.subject_ids[which[:5]]]
                raise NumericalError(
                    f"working correlation for clusters of size {m} is not positive "
                    f"definite (clusters {ids})") from exc
            D = _whiten(L, D)
            r = _whiten(L, r)
        B += np.einsum("nmq,nmr->qr", D, D)
        U[which] = np.einsum("nmq,nm->nq", D, r)
    return B, U


def _cho_inverse(B):
    try:
        c = linalg.cho_factor(B, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("weighted information matrix is singular") from exc
    return linalg.cho_solve(c, np.eye(B.shape[0]))


def beta_update_step(beta, problem: StackedProblem, family: Family,
                     correlation: CorrelationStructure, layout=None) -> np.ndarray:
    """One Fisher-scoring increment ``B^{-1} sum_i D_i' V_i^{-1} (y_i - mu_i)``."""
    B, U = cluster_sums(problem, family, np.asarray(beta, dtype=float), correlation, layout)
    try:
        c = linalg.cho_factor(B)
        delta = linalg.cho_solve(c, U.sum(axis=0))
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("weighted information matrix is singular") from exc
    if not np.all(np.isfinite(delta)):
        bad = np.flatnonzero(~np.all(np.isfinite(U), axis=1))
        raise NumericalError(
            f"non-finite Fisher-scoring step (clusters with non-finite scores: "
            f"{[str(s) for s in problem.subject_ids[bad[:5]]]})")
    return delta


def robust_covariance(B, U) -> np.ndarray:
    """Sandwich ``B^{-1} (sum_i u_i u_i') B^{-1}``."""
    Binv = _cho_inverse(B)
    V = Binv @ (U.T @ U) @ Binv
    return 0.5 * (V + V.T)


def model_based_covariance(B, scale: float) -> np.ndarray:
    V = scale * _cho_inverse(B)
    return 0.5 * (V + V.T)


def check_full_rank(X, labels=None):
    q = X.shape[1]
    if X.shape[0] <= q:
        raise SpecError(f"need more stacked rows ({X.shape[0]}) than coefficients ({q})")
    rank = np.linalg.matrix_rank(X)
    if rank < q:
        _, _, piv = linalg.qr(X, mode="economic", pivoting=True)
        dependent = sorted(piv[rank:])
        names = [labels[i] if labels else i for i in dependent]
        raise SpecError(f"design matrix is rank deficient (rank {rank} < {q}); "
                        f"linearly dependent column(s): {names}")


def glm_irls(X, y, family: Family, tol: float = 1e-10, max_iter: int = 100):
    """Independence GLM fit by iteratively reweighted least squares.

    Started from data-based means ``family.starting_mean(y)``. Returns
    ``(beta, n_iter, converged)``.
    """
    eta = family.link_fn(family.clamp_mean(family.starting_mean(y)))
    beta = None
    for it in range(1, max_iter + 1):
        mu = family.clamp_mean(family.inverse_link(eta))
        dmu = family.mean_derivative(eta)
        w = dmu ** 2 / family.variance(mu)
        z = eta + (y - mu) / dmu
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if not np.all(np.isfinite(new)):
            raise NumericalError("IRLS produced non-finite coefficients")
        done = beta is not None and np.max(np.abs(new - beta)) < tol
        beta = new
        eta = X @ beta
        if done:
            return beta, it, True
    return beta, max_iter, False


def fit_gee(problem: StackedProblem, family: Family, corstr: str = "independence",
            tol: float = 1e-6, max_iter: int = 25, beta0=None) -> GeeFit:
    """Fit marginal mean coefficients by GEE with the given working structure.

    Alternates moment estimation of the dispersion and correlation with a
    Fisher-scoring update of the coefficients, starting from an independence
    GLM fit. Stops once ``max |delta beta| < tol``; if ``max_iter`` is reached
    first, the fit is returned with ``converged=False`` and a warning.
    """
    if tol <= 0 or max_iter < 1:
        raise SpecError("tol must be > 0 and max_iter >= 1")
    X, y = problem.X, problem.y
    q = X.shape[1]
    check_full_rank(X, problem.labels)
    layout = _Layout(problem)

    if beta0 is None:
        beta, _, _ = glm_irls(X, y, family)
    else:
        beta = np.array(beta0, dtype=float)

    def moments(beta):
        mu = family.clamp_mean(family.inverse_link(X @ beta))
        e = pearson_residuals(y, mu, family)
        phi = family.dispersion if family.fixed_dispersion else estimate_dispersion(e, q)
        corr = estimate_correlation(e, problem.cluster_starts, corstr, phi, q)
        return mu, phi, corr

    trace = []
    converged = False
    for _ in range(max_iter):
        _, phi, corr = moments(beta)
        delta = beta_update_step(beta, problem, family, corr, layout)
        beta = beta + delta
        trace.append(float(np.max(np.abs(delta))))
        if trace[-1] < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"GEE did not converge in {max_iter} iterations "
                      f"(last max |delta beta| = {trace[-1]:.3g})", ConvergenceWarning,
                      stacklevel=2)

    mu, phi, corr = moments(beta)
    B, U = cluster_sums(problem, family, beta, corr, layout)
    return GeeFit(
        coef=beta,
        robust_cov=robust_covariance(B, U),
        model_cov=model_based_covariance(B, phi),
        scale=float(phi),
        correlation=corr,
        n_iter=len(trace),
        converged=converged,
        trace=tuple(trace),
        fitted=mu,
        labels=tuple(problem.labels),
        family=family,
        corstr=corstr,
        responses=tuple(problem.responses),
        n_clusters=problem.n_clusters,
        n_obs=problem.n_rows,
        score=U.sum(axis=0),
    )


def wald_pvalue(z):
    return 2.0 * stats.norm.sf(np.abs(z))
