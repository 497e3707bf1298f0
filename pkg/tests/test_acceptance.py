"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
outside pytest's capture so they appear in the log. The MSCM check runs only
when ``MSCM_CSV`` points at the analysis file (see README).
"""
import os
import time

import numpy as np
import pytest

from mmgee.dataset import ColumnRoles, from_arrays, ingest_long
from mmgee.design import (ModelSpec, build_block_problem, build_problem,
                          full_interaction_to_block)
from mmgee.correlation import estimate_correlation
from mmgee.engine import fit_gee
from mmgee.families import Family
from mmgee.inference import combined_standard_error, odds_ratio
from mmgee.simulation import (SimConfig, model_spec, monte_carlo, replication_rng,
                              simulate_dataset)

from conftest import MSCM_COVARIATES, gaussian_panel
from oracles import logistic_newton, ols

STRUCTURES = ("independence", "exchangeable", "ar1", "unstructured")
MC_CONFIG = SimConfig(n_subjects=300, n_times=3, reps=500, seed=1)


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def mc_serial():
    t0 = time.perf_counter()
    summary = monte_carlo(MC_CONFIG)
    return summary, time.perf_counter() - t0


def test_criterion_01_glm_oracle(capsys):
    rng = np.random.default_rng(101)
    n, m = 200, 6
    X = rng.normal(size=(n * m, 3))
    u = rng.normal(scale=0.7, size=n).repeat(m)
    y = (rng.random(n * m) < 1 / (1 + np.exp(-(-0.3 + X @ [0.8, -0.5, 0.2] + u)))).astype(float)
    t0 = time.perf_counter()
    d = from_arrays(y, X, np.repeat(np.arange(n), m))
    spec = ModelSpec(("y1",), d.covariate_names, family=Family("binomial", dispersion=1.0))
    fit = fit_gee(build_problem(d, spec), spec.family, "independence", tol=1e-10)
    elapsed = time.perf_counter() - t0
    beta, inv_info = logistic_newton(np.column_stack([np.ones(n * m), X]), y)
    db = np.max(np.abs(fit.coef - beta))
    dse = np.max(np.abs(fit.model_se - np.sqrt(np.diag(inv_info))))
    ok = db < 1e-6 and dse < 1e-6 and elapsed < 5
    verdict(capsys, 1, ok, f"max|dbeta|={db:.2e} max|dSE|={dse:.2e} time={elapsed:.2f}s")


def test_criterion_02_ols(capsys):
    X, Y, g = gaussian_panel(n=200, T=5, seed=102, p=3)
    d = from_arrays(Y[:, 0], X, g)
    spec = ModelSpec(("y1",), d.covariate_names)
    fit = fit_gee(build_problem(d, spec), spec.family, "independence")
    beta, cov = ols(np.column_stack([np.ones(len(X)), X]), Y[:, 0])
    db = np.max(np.abs(fit.coef - beta))
    dv = np.max(np.abs(fit.model_cov - cov))
    verdict(capsys, 2, db < 1e-8 and dv < 1e-8, f"max|dbeta|={db:.2e} max|dcov|={dv:.2e}")


def _reparam_gap(family, corstr, Y, X, g):
    d = from_arrays(Y, X, g)
    spec = ModelSpec(("y1", "y2"), d.covariate_names, True, tuple(range(d.p)), family, corstr)
    flex = fit_gee(build_problem(d, spec), family, corstr, tol=1e-12, max_iter=200)
    block = fit_gee(build_block_problem(d, spec), family, corstr, tol=1e-12, max_iter=200)
    dmu = np.max(np.abs(flex.fitted - block.fitted))
    dcoef = np.max(np.abs(full_interaction_to_block(flex.coef, spec) - block.coef))
    return dmu, dcoef


def test_criterion_03_reparameterization(capsys):
    X, Y, g = gaussian_panel(n=150, T=4, seed=103)
    rng = np.random.default_rng(103)
    Yb = (rng.random(Y.shape) < 1 / (1 + np.exp(-Y / 2))).astype(float)
    gaps = [_reparam_gap(Family("gaussian"), "exchangeable", Y, X, g),
            _reparam_gap(Family("binomial"), "exchangeable", Yb, X, g),
            _reparam_gap(Family("binomial"), "unstructured", Yb, X, g)]
    dmu = max(a for a, _ in gaps)
    dcoef = max(b for _, b in gaps)
    verdict(capsys, 3, dmu < 1e-8 and dcoef < 1e-6,
            f"max|dmu|={dmu:.2e} max|dcoef|={dcoef:.2e} (gaussian+binomial, exch+uns)")


def test_criterion_04_dimension_law(capsys):
    rng = np.random.default_rng(104)
    bad = []
    for _ in range(200):
        k, p, n, T = (int(v) for v in rng.integers((1, 0, 1, 1), (5, 6, 6, 5)))
        p_star = int(rng.integers(0, p + 1)) if k > 1 else 0
        g = np.repeat(np.arange(n), T)
        d = from_arrays(rng.normal(size=(n * T, k)), rng.normal(size=(n * T, p)), g)
        inter = tuple(sorted(rng.choice(p, p_star, replace=False).tolist()))
        spec = ModelSpec(d.response_names, d.covariate_names, k > 1, inter)
        pr = build_problem(d, spec)
        expected = p + 1 + (k - 1) + (k - 1) * p_star if k > 1 else p + 1
        if pr.X.shape != (n * T * k, expected):
            bad.append((k, p, p_star, pr.X.shape))
    e = np.random.default_rng(0).normal(size=(400, 24)).ravel()
    s = estimate_correlation(e, np.arange(0, 400 * 24 + 1, 24), "unstructured", 1.0, 15)
    ok = not bad and s.n_params == 276
    verdict(capsys, 4, ok, f"200 random (k,p,p*) designs, mismatches={len(bad)}; "
                          f"unstructured(12x2) params={s.n_params}")


def test_criterion_05_arithmetic(capsys):
    se = combined_standard_error(0.13, 0.09, -0.03)
    or1, or2 = odds_ratio(-0.43), odds_ratio(-0.43, 0.24)
    intercept = round(-2.23 + 0.89, 10)
    ok = (0.40 - 1e-12 <= se <= 0.41 and abs(or1 - 0.6505) <= 5e-4
          and abs(or2 - 0.8270) <= 5e-4 and intercept == -1.34)
    verdict(capsys, 5, ok, f"SE={se:.4f} OR={or1:.4f},{or2:.4f} intercept={intercept}")


def test_criterion_06_simulation(capsys, mc_serial):
    summary, elapsed = mc_serial
    worst_p = max(np.max(np.abs(summary.table("parsimonious", s)[1])) for s in STRUCTURES)
    ratio = summary.table("common", "exchangeable")[2][:4] / \
        summary.table("parsimonious", "exchangeable")[2]
    worst_c = max(np.max(np.abs(summary.table("common", s)[1][4:])) for s in STRUCTURES)
    failed = sum(summary.n_failed(m, s) for m, s in summary.cells)
    ok = worst_p <= 0.1 and np.all((ratio >= 1.5) & (ratio <= 2.5)) and worst_c <= 0.05 \
        and elapsed < 600
    verdict(capsys, 6, ok,
            f"(a) max|bias| pars={worst_p:.4f} (b) MSE ratio b0-b3="
            f"{np.array2string(ratio, precision=3)} (c) max|bias| b4-b7={worst_c:.4f}; "
            f"non-converged={failed}; {elapsed:.0f}s")


def test_criterion_07_coverage(capsys, mc_serial):
    summary, _ = mc_serial
    cov = np.array([summary.coverage("parsimonious", s) for s in STRUCTURES])
    ok = bool(np.all((cov >= 0.92) & (cov <= 0.97)))
    verdict(capsys, 7, ok, f"parsimonious 95% robust-Wald coverage over 4 structures x 4 "
                          f"coefficients: min={cov.min():.3f} max={cov.max():.3f}")


def test_criterion_08_structure_consistency(capsys):
    data = simulate_dataset(SimConfig(n_subjects=2000), replication_rng(108, 0))
    fits = {}
    for s in ("independence", "exchangeable", "ar1"):
        spec = model_spec("common", s)
        fits[s] = fit_gee(build_problem(data, spec), spec.family, s)
    worst = 0.0
    names = list(fits)
    for a in range(3):
        for b in range(a + 1, 3):
            fa, fb = fits[names[a]], fits[names[b]]
            se = np.minimum(fa.robust_se, fb.robust_se)
            worst = max(worst, float(np.max(np.abs(fa.coef - fb.coef) / se)))
    verdict(capsys, 8, worst < 3, f"N=2000, max pairwise |diff|/robust SE = {worst:.3f}")


# Published MSCM estimates and robust SEs (rounded to 2 decimals).
REFERENCE_MSCM = {
    "model1": {
        "(Intercept)": (-2.14, 0.42), "married": (-0.01, 0.24), "education": (0.36, 0.23),
        "employed": (-0.65, 0.25), "chlth": (-0.26, 0.13), "mhlth": (-0.17, 0.12),
        "race": (-0.02, 0.24), "csex": (-0.04, 0.22), "housize": (0.06, 0.24),
        "bstress": (3.89, 0.71), "billness": (0.86, 0.71), "week": (-0.43, 0.16),
        "rtype_illness": (0.56, 0.54), "married:rtype_illness": (0.50, 0.32),
        "education:rtype_illness": (-0.42, 0.31), "employed:rtype_illness": (0.43, 0.38),
        "chlth:rtype_illness": (-0.14, 0.17), "mhlth:rtype_illness": (0.20, 0.18),
        "race:rtype_illness": (0.04, 0.32), "csex:rtype_illness": (0.06, 0.29),
        "housize:rtype_illness": (-0.63, 0.32), "bstress:rtype_illness": (-3.83, 1.10),
        "billness:rtype_illness": (1.32, 0.88), "week:rtype_illness": (0.24, 0.26),
    },
    "model2": {
        "(Intercept)": (-2.23, 0.36), "married": (0.25, 0.19), "education": (0.19, 0.20),
        "employed": (-0.43, 0.22), "chlth": (-0.34, 0.12), "mhlth": (-0.11, 0.11),
        "race": (-0.01, 0.18), "csex": (0.02, 0.18), "housize": (0.04, 0.23),
        "bstress": (3.48, 0.67), "billness": (1.52, 0.57), "week": (-0.31, 0.14),
        "rtype_illness": (0.89, 0.31), "housize:rtype_illness": (-0.58, 0.30),
        "bstress:rtype_illness": (-3.18, 0.99),
    },
    "model3": {
        "(Intercept)": (-2.58, 0.34), "married": (0.22, 0.18), "education": (0.25, 0.20),
        "employed": (-0.35, 0.22), "chlth": (-0.26, 0.11), "mhlth": (-0.18, 0.10),
        "race": (0.19, 0.18), "csex": (0.05, 0.17), "housize": (0.17, 0.23),
        "bstress": (3.59, 0.65), "billness": (1.51, 0.56), "week": (-0.36, 0.13),
        "rtype_illness": (1.03, 0.29), "housize:rtype_illness": (-0.78, 0.29),
        "bstress:rtype_illness": (-3.79, 0.95),
    },
}
MSCM_MODELS = {"model1": (tuple(range(11)), "exchangeable"),
               "model2": ((7, 8), "exchangeable"),
               "model3": ((7, 8), "unstructured")}


def test_criterion_09_mscm(capsys):
    path = os.environ.get("MSCM_CSV")
    if not path:
        with capsys.disabled():
            print("\ncriterion  9: SKIP  conditional; set MSCM_CSV to the MSCM analysis file")
        pytest.skip("MSCM data not supplied (set MSCM_CSV)")
    roles = ColumnRoles("id", "day", ("stress", "illness"), MSCM_COVARIATES)
    data = ingest_long(path, roles)
    worst, where = 0.0, ""
    for name, (inter, corstr) in MSCM_MODELS.items():
        spec = ModelSpec(roles.responses, roles.covariates, True, inter,
                         Family("binomial"), corstr)
        fit = fit_gee(build_problem(data, spec), spec.family, corstr)
        for label, (est, se) in REFERENCE_MSCM[name].items():
            i = fit.index(label)
            for got, want in ((fit.coef[i], est), (fit.robust_se[i], se)):
                gap = abs(round(float(got), 2) - want)
                if gap > worst:
                    worst, where = gap, f"{name}/{label}"
    verdict(capsys, 9, worst <= 0.01 + 1e-9, f"max rounded gap={worst:.2f} at {where}")


def test_criterion_10_determinism(capsys, mc_serial):
    serial, _ = mc_serial
    parallel = monte_carlo(MC_CONFIG, n_jobs=2)
    same = serial.to_csv() == parallel.to_csv()
    same_draws = serial.draws_csv() == parallel.draws_csv()
    verdict(capsys, 10, same and same_draws,
            f"serial vs 2-process summary CSV identical={same}, draws identical={same_draws}")
