"""scikit-learn compatible front end.

``MarginalGEE`` takes a covariate matrix ``X`` of shape ``(M, p)``, a response
matrix ``Y`` of shape ``(M, k)`` and subject identifiers ``groups``; it builds
the stacked problem internally and exposes the fit through the usual
trailing-underscore attributes.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import from_arrays
from .design import ModelSpec, build_problem, build_stacked_design
from .engine import fit_gee
from .families import Family
from .inference import derive_response, wald_statistics


class MarginalGEE(BaseEstimator):
    """Multivariate marginal model fitted by GEE.

    Parameters
    ----------
    family : {'gaussian', 'binomial', 'poisson'}
    link : str, optional
        Defaults to the canonical link (logit for binomial).
    corstr : {'independence', 'exchangeable', 'ar1', 'unstructured'}
    rtype : bool
        Give each non-reference response its own intercept.
    interaction : tuple of int
        0-based covariate columns whose slopes are separated by response.
        ``'all'`` separates every slope.
    dispersion : float, optional
        Fix the dispersion instead of estimating it.
    tol, max_iter
        Fisher-scoring stopping rule on ``max |delta beta|``.
    response_names : sequence of str, optional
        Names of the ``Y`` columns; the first is the reference response.
    """

    def __init__(self, family="gaussian", link=None, corstr="independence", rtype=False,
                 interaction=(), dispersion=None, tol=1e-6, max_iter=25,
                 response_names=None):
        self.family = family
        self.link = link
        self.corstr = corstr
        self.rtype = rtype
        self.interaction = interaction
        self.dispersion = dispersion
        self.tol = tol
        self.max_iter = max_iter
        self.response_names = response_names

    def _spec(self, p, feature_names):
        inter = tuple(range(p)) if self.interaction == "all" else tuple(self.interaction)
        return ModelSpec(
            responses=tuple(self.response_names_),
            covariates=tuple(feature_names),
            include_rtype=bool(self.rtype),
            interaction=inter,
            family=Family(self.family, self.link, self.dispersion),
            corstr=self.corstr,
        )

    def fit(self, X, Y, groups, time=None):
        """Fit the model.

        ``time`` orders observations within a subject; when omitted, row
        order within each subject is used.
        """
        if hasattr(X, "columns"):
            names = [str(c) for c in X.columns]
        else:
            names = None
        X = check_array(X, ensure_min_features=0, dtype=float)
        if hasattr(Y, "columns") and self.response_names is None:
            resp_names = [str(c) for c in Y.columns]
        else:
            resp_names = self.response_names
        Y = check_array(Y, ensure_2d=False, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        groups = np.asarray(groups)
        if groups.shape[0] != X.shape[0]:
            raise ValueError("groups must have one entry per row")

        self.n_features_in_ = X.shape[1]
        if names is not None:
            self.feature_names_in_ = np.asarray(names, dtype=object)
        cov_names = names or [f"x{l + 1}" for l in range(X.shape[1])]
        self.response_names_ = list(resp_names or [f"y{j + 1}" for j in range(Y.shape[1])])

        data = from_arrays(Y, X, groups, time, self.response_names_, cov_names)
        self.spec_ = self._spec(X.shape[1], cov_names)
        self.fit_ = fit_gee(build_problem(data, self.spec_), self.spec_.family,
                            self.corstr, self.tol, self.max_iter)
        self.coef_ = self.fit_.coef
        self.labels_ = list(self.fit_.labels)
        self.robust_cov_ = self.fit_.robust_cov
        self.model_cov_ = self.fit_.model_cov
        self.scale_ = self.fit_.scale
        self.working_correlation_ = self.fit_.correlation
        self.n_iter_ = self.fit_.n_iter
        self.converged_ = self.fit_.converged
        return self

    def _stacked_design(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X, ensure_min_features=0, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        k = len(self.response_names_)
        data = from_arrays(np.zeros((X.shape[0], k)), X, np.arange(X.shape[0]),
                           None, self.response_names_, self.spec_.covariates)
        Xs, _ = build_stacked_design(data, self.spec_)
        return Xs, k

    def decision_function(self, X):
        """Linear predictor, shape ``(n, k)``."""
        Xs, k = self._stacked_design(X)
        return (Xs @ self.coef_).reshape(-1, k)

    def predict(self, X):
        """Marginal means for every response, shape ``(n, k)``."""
        return self.spec_.family.inverse_link(self.decision_function(X))

    def summary(self):
        return self.fit_.summary_frame()

    def wald(self, source="robust"):
        check_is_fitted(self, "fit_")
        return wald_statistics(self.fit_, source)

    def response_coefficients(self, response, source="robust"):
        check_is_fitted(self, "fit_")
        return derive_response(self.fit_, response, source)
