import warnings

import numpy as np
import pytest
from scipy import optimize

from mmgee.correlation import CorrelationStructure
from mmgee.dataset import from_arrays
from mmgee.design import ModelSpec, StackedProblem, build_problem
from mmgee.engine import (ConvergenceWarning, beta_update_step, cluster_sums, fit_gee,
                          glm_irls)
from mmgee.errors import SpecError
from mmgee.families import Family

from conftest import binary_panel, gaussian_panel
from oracles import hc0, logistic_newton, ols

G = Family("gaussian")
LOGIT = Family("binomial")
INDEP = CorrelationStructure("independence")


def problem_from(X, y, groups):
    """Single-response problem with an intercept column prepended."""
    d = from_arrays(y, X, groups)
    spec = ModelSpec(("y1",), d.covariate_names)
    return build_problem(d, spec)


def gaussian_problem(seed=0, n=120, T=3, p=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n * T, p))
    y = 1.0 + X @ np.arange(1, p + 1) + rng.normal(size=n * T)
    return problem_from(X, y, np.repeat(np.arange(n), T))


def test_ols_equivalence():
    pr = gaussian_problem()
    fit = fit_gee(pr, G, "independence")
    beta, cov = ols(pr.X, pr.y)
    np.testing.assert_allclose(fit.coef, beta, atol=1e-8)
    np.testing.assert_allclose(fit.model_cov, cov, atol=1e-8)


def test_step_is_zero_at_ols_solution():
    pr = gaussian_problem(1)
    beta, _ = ols(pr.X, pr.y)
    assert np.max(np.abs(beta_update_step(beta, pr, G, INDEP))) < 1e-10


def test_single_observation_one_step():
    pr = StackedProblem(y=np.array([3.0]), X=np.ones((1, 1)), cluster_starts=np.array([0, 1]),
                        labels=("(Intercept)",), responses=("y",),
                        subject_ids=np.array(["1"]), response_index=np.zeros(1, int),
                        time=np.zeros(1))
    assert beta_update_step(np.zeros(1), pr, G, INDEP)[0] == pytest.approx(3.0)


def test_logistic_step_from_zero_is_newton_step():
    X, Y, g = binary_panel()
    pr = problem_from(X, Y[:, 0], g)
    # Newton from beta = 0: p = 1/2, Hessian X'X/4, gradient X'(y - 1/2)
    newton = np.linalg.solve(pr.X.T @ pr.X / 4, pr.X.T @ (pr.y - 0.5))
    np.testing.assert_allclose(beta_update_step(np.zeros(3), pr, LOGIT, INDEP), newton,
                               atol=1e-12)


def test_logistic_independence_matches_newton_mle():
    X, Y, g = binary_panel(seed=7)
    pr = problem_from(X, Y[:, 1], g)
    fit = fit_gee(pr, Family("binomial", dispersion=1.0), "independence", tol=1e-10)
    beta, inv_info = logistic_newton(pr.X, pr.y)
    np.testing.assert_allclose(fit.coef, beta, atol=1e-8)
    np.testing.assert_allclose(fit.model_cov, inv_info, atol=1e-8)


def test_poisson_independence_matches_direct_likelihood():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(400, 2))
    y = rng.poisson(np.exp(0.3 + X @ [0.4, -0.2])).astype(float)
    pr = problem_from(X, y, np.repeat(np.arange(100), 4))

    def nll(b):
        eta = pr.X @ b
        return np.sum(np.exp(eta) - pr.y * eta)

    res = optimize.minimize(nll, np.zeros(3), method="BFGS",
                            jac=lambda b: pr.X.T @ (np.exp(pr.X @ b) - pr.y),
                            options={"gtol": 1e-12})
    fit = fit_gee(pr, Family("poisson"), "independence", tol=1e-10)
    np.testing.assert_allclose(fit.coef, res.x, atol=1e-6)


def test_robust_close_to_model_based_when_homoskedastic():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(2000, 2))
    y = X @ [1.0, -1.0] + rng.normal(size=2000)
    fit = fit_gee(problem_from(X, y, np.arange(2000)), G, "independence")
    ratio = np.trace(fit.robust_cov) / np.trace(fit.model_cov)
    assert 0.9 < ratio < 1.1


def test_cluster_size_one_gives_hc0():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(300, 2))
    y = X @ [0.5, 1.0] + rng.normal(size=300) * (1 + np.abs(X[:, 0]))
    pr = problem_from(X, y, np.arange(300))
    fit = fit_gee(pr, G, "independence")
    beta, _ = ols(pr.X, pr.y)
    np.testing.assert_allclose(fit.robust_cov, hc0(pr.X, pr.y, beta), atol=1e-10)


def test_exact_fit_zero_covariance():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(40, 2))
    y = 1 + X @ [2.0, 3.0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_gee(problem_from(X, y, np.repeat(np.arange(10), 4)), G, "independence")
    np.testing.assert_allclose(fit.robust_cov, 0.0, atol=1e-20)
    np.testing.assert_allclose(fit.model_cov, 0.0, atol=1e-20)


def test_covariate_scaling_rescales_covariance():
    rng = np.random.default_rng(15)
    X = rng.normal(size=(200, 2))
    y = X @ [1.0, 2.0] + rng.normal(size=200)
    g = np.repeat(np.arange(50), 4)
    c = 4.0
    f1 = fit_gee(problem_from(X, y, g), G, "exchangeable", tol=1e-10)
    f2 = fit_gee(problem_from(X * c, y, g), G, "exchangeable", tol=1e-10)
    scale = np.array([1.0, 1 / c, 1 / c])
    for a, b in ((f1.robust_cov, f2.robust_cov), (f1.model_cov, f2.model_cov)):
        np.testing.assert_allclose(b, a * np.outer(scale, scale), rtol=1e-6)


@pytest.mark.parametrize("corstr", ["exchangeable", "ar1", "unstructured"])
def test_estimating_equation_solved(corstr):
    X, Y, g = binary_panel(seed=21)
    d = from_arrays(Y, X, g)
    spec = ModelSpec(("y1", "y2"), ("x1", "x2"), True, (0,), LOGIT, corstr)
    pr = build_problem(d, spec)
    fit = fit_gee(pr, LOGIT, corstr, tol=1e-10, max_iter=100)
    assert fit.converged
    # score at the final coefficients, with the working correlation in force
    _, U = cluster_sums(pr, LOGIT, fit.coef, fit.correlation)
    assert np.max(np.abs(U.sum(axis=0))) / pr.n_clusters < 1e-5


@pytest.mark.parametrize("corstr", ["independence", "exchangeable", "ar1", "unstructured"])
def test_subject_permutation_invariance(corstr):
    X, Y, g = gaussian_panel()
    d = from_arrays(Y, X, g)
    spec = ModelSpec(("y1", "y2"), ("x1", "x2"), True, (0, 1), G, corstr)
    pr = build_problem(d, spec)
    perm = np.random.default_rng(3).permutation(pr.n_clusters)
    a = fit_gee(pr, G, corstr, tol=1e-12, max_iter=100)
    b = fit_gee(pr.subset(perm), G, corstr, tol=1e-12, max_iter=100)
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-10)


@pytest.mark.parametrize("corstr", ["independence", "exchangeable", "ar1", "unstructured"])
def test_covariances_symmetric_psd(corstr):
    X, Y, g = binary_panel(seed=5)
    d = from_arrays(Y, X, g)
    spec = ModelSpec(("y1", "y2"), ("x1", "x2"), True, (0, 1), LOGIT, corstr)
    fit = fit_gee(build_problem(d, spec), LOGIT, corstr)
    for V in (fit.robust_cov, fit.model_cov):
        assert np.array_equal(V, V.T)
        assert np.linalg.eigvalsh(V).min() >= -1e-10
    if fit.converged:
        assert fit.trace[-1] < 1e-6


def test_unbalanced_clusters():
    rng = np.random.default_rng(8)
    sizes = rng.integers(1, 6, size=80)
    g = np.repeat(np.arange(80), sizes)
    X = rng.normal(size=(g.size, 1))
    y = X[:, 0] + rng.normal(size=80)[g] + rng.normal(size=g.size)
    pr = problem_from(X, y, g)
    for corstr in ("exchangeable", "ar1"):
        fit = fit_gee(pr, G, corstr, tol=1e-10)
        assert fit.converged and 0 < fit.correlation.alpha < 1
    with pytest.raises(SpecError):
        fit_gee(pr, G, "unstructured")


def test_rank_deficiency_names_column():
    rng = np.random.default_rng(0)
    x = rng.normal(size=40)
    X = np.column_stack([x, 2 * x])
    with pytest.raises(SpecError, match="x"):
        fit_gee(problem_from(X, x + rng.normal(size=40), np.arange(40)), G)


def test_non_convergence_is_flagged():
    X, Y, g = binary_panel(seed=3)
    d = from_arrays(Y, X, g)
    spec = ModelSpec(("y1", "y2"), ("x1", "x2"), True, (0, 1), LOGIT, "exchangeable")
    with pytest.warns(ConvergenceWarning):
        fit = fit_gee(build_problem(d, spec), LOGIT, "exchangeable", tol=1e-14, max_iter=1)
    assert not fit.converged
    assert fit.n_iter == len(fit.trace) == 1


def test_glm_irls_gaussian_one_step():
    pr = gaussian_problem(4)
    beta, n_iter, ok = glm_irls(pr.X, pr.y, G)
    np.testing.assert_allclose(beta, ols(pr.X, pr.y)[0], atol=1e-10)
    assert ok and n_iter == 2
