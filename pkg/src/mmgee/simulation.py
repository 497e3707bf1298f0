"""Correlated bivariate longitudinal binary data and the Monte Carlo comparison
of the parsimonious (shared-coefficient) and common (response-specific) models.

Responses are produced by thresholding a latent Gaussian vector at
``Phi^{-1}(p)``, which keeps every marginal probit mean exact while giving
within-response latent correlation ``rho_within`` and cross-response latent
correlation ``rho_between`` (same-time and cross-time alike).
"""
from __future__ import annotations

import csv
import io
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special

from .dataset import LongitudinalDataset, read_roles_config
from .design import CORRELATION_STRUCTURES, ModelSpec, build_problem
from .engine import fit_gee
from .errors import MmgeeError, SpecError
from .families import Family

MODELS = ("parsimonious", "common")
PROBIT = Family("binomial", "probit")
SUMMARY_HEADER = ["parameter", "model", "structure", "mean", "bias", "mse", "n_converged"]


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int = 300
    n_times: int = 3
    beta: tuple = (-0.5, 0.5, 0.9, 0.6, 0.0, 0.0, 0.0, 0.0)
    gamma0: float = 0.2
    gamma1: float = 0.5
    x1_sd: float = 0.4
    eps_sd: tuple = (0.25, 0.15)
    x2_prob: float = 0.5
    rho_within: float = 0.5
    rho_between: float = 0.25
    reps: int = 500
    seed: int = 1
    tol: float = 1e-6
    max_iter: int = 25

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "eps_sd", tuple(float(s) for s in self.eps_sd))
        if self.reps < 1:
            raise SpecError("replication count must be >= 1")
        if self.n_subjects < 1 or self.n_times < 1:
            raise SpecError("n_subjects and n_times must be >= 1")
        if len(self.beta) != 8:
            raise SpecError(f"beta must have 8 entries (beta0..beta7), got {len(self.beta)}")
        if len(self.eps_sd) != self.n_times - 1:
            raise SpecError(f"eps_sd needs n_times - 1 = {self.n_times - 1} entries")
        if not 0 <= self.x2_prob <= 1:
            raise SpecError("x2_prob must lie in [0, 1]")
        if self.x1_sd < 0 or any(s < 0 for s in self.eps_sd):
            raise SpecError("standard deviations must be non-negative")
        try:
            np.linalg.cholesky(latent_correlation(self.n_times, self.rho_within,
                                                  self.rho_between))
        except np.linalg.LinAlgError:
            raise SpecError(
                f"latent correlation (within={self.rho_within}, between={self.rho_between}) "
                "is not positive definite") from None

    @classmethod
    def from_mapping(cls, values: dict) -> "SimConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise SpecError(f"unknown simulation setting {key!r}")
            if key in ("beta", "eps_sd"):
                out[key] = tuple(float(v) for v in str(raw).split(",") if v.strip())
            elif key in ("n_subjects", "n_times", "reps", "seed", "max_iter"):
                out[key] = int(raw)
            else:
                out[key] = float(raw)
        return cls(**out)

    @classmethod
    def from_file(cls, path: str, **overrides) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            values = read_roles_config(fh)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def lines(self) -> list:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append(f"{f.name}={v}")
        return out


def latent_correlation(n_times: int, rho_within: float, rho_between: float) -> np.ndarray:
    """``2T x 2T`` latent correlation ordered time-major, response-minor."""
    resp = np.tile([0, 1], n_times)
    same = resp[:, None] == resp[None, :]
    C = np.where(same, rho_within, rho_between).astype(float)
    np.fill_diagonal(C, 1.0)
    return C


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep``, identical however reps are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def generate_covariates(config: SimConfig, rng: np.random.Generator):
    """Return ``(x1, x2)``: ``x1`` is ``(N, T)`` autoregressive, ``x2`` is ``(N,)`` binary."""
    n, T = config.n_subjects, config.n_times
    x1 = np.empty((n, T))
    x1[:, 0] = rng.normal(0.0, config.x1_sd, size=n)
    for t in range(1, T):
        eps = rng.normal(0.0, config.eps_sd[t - 1], size=n)
        x1[:, t] = config.gamma0 + config.gamma1 * x1[:, t - 1] + eps
    x2 = (rng.random(n) < config.x2_prob).astype(float)
    return x1, x2


def marginal_probabilities(x1, x2, rtype, beta) -> np.ndarray:
    """Probit marginal mean with all two- and three-way rtype interactions."""
    b = np.asarray(beta, dtype=float)
    if b.size != 8:
        raise SpecError("beta must have 8 entries")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    r = np.asarray(rtype, dtype=float)
    eta = (b[0] + b[1] * x1 + b[2] * x2 + b[3] * x1 * x2
           + r * (b[4] + b[5] * x1 + b[6] * x2 + b[7] * x1 * x2))
    return special.ndtr(eta)


def generate_responses(p, rho_within: float, rho_between: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Binary responses from an ``(N, T, 2)`` array of marginal probabilities."""
    p = np.asarray(p, dtype=float)
    n, T, k = p.shape
    if k != 2:
        raise SpecError("the generator produces exactly two responses")
    if np.any((p <= 0) | (p >= 1)):
        raise SpecError("marginal probabilities must lie strictly inside (0, 1)")
    try:
        L = np.linalg.cholesky(latent_correlation(T, rho_within, rho_between))
    except np.linalg.LinAlgError:
        raise SpecError("latent correlation matrix is not positive definite") from None
    z = rng.standard_normal((n, 2 * T)) @ L.T
    return (z.reshape(n, T, 2) <= special.ndtri(p)).astype(float)


def simulate_dataset(config: SimConfig, rng: np.random.Generator) -> LongitudinalDataset:
    """One synthetic dataset with responses ``y1, y2`` and covariates ``x1, x2, x1x2``.

    ``rtype`` is 1 for ``y1`` and 0 for ``y2``.
    """
    n, T = config.n_subjects, config.n_times
    x1, x2 = generate_covariates(config, rng)
    x2t = np.broadcast_to(x2[:, None], (n, T))
    p = np.stack([marginal_probabilities(x1, x2t, 1.0, config.beta),
                  marginal_probabilities(x1, x2t, 0.0, config.beta)], axis=-1)
    y = generate_responses(p, config.rho_within, config.rho_between, rng)
    cov = np.column_stack([x1.ravel(), x2t.ravel(), (x1 * x2t).ravel()])
    return LongitudinalDataset(
        subject=np.repeat(np.arange(1, n + 1), T),
        time=np.tile(np.arange(1, T + 1), n),
        responses=y.reshape(n * T, 2),
        covariates=cov,
        response_names=("y1", "y2"),
        covariate_names=("x1", "x2", "x1x2"),
    )


def model_spec(model: str, corstr: str) -> ModelSpec:
    # y2 goes first so that the indicator column marks y1, as in the generator
    if model == "parsimonious":
        return ModelSpec(("y2", "y1"), ("x1", "x2", "x1x2"), False, (), PROBIT, corstr)
    if model == "common":
        return ModelSpec(("y2", "y1"), ("x1", "x2", "x1x2"), True, (0, 1, 2), PROBIT, corstr)
    raise SpecError(f"unknown model variant {model!r}; choose from {MODELS}")


def truth_for(model: str, beta) -> np.ndarray:
    return np.asarray(beta[:4] if model == "parsimonious" else beta, dtype=float)


@dataclass
class CellResult:
    model: str
    structure: str
    coef: np.ndarray
    se: np.ndarray
    ok: np.ndarray
    seconds: float = 0.0


@dataclass
class McSummary:
    config: SimConfig
    cells: dict = field(default_factory=dict)

    def rows(self) -> list:
        out = []
        for (model, structure), cell in self.cells.items():
            truth = truth_for(model, self.config.beta)
            n_ok = int(cell.ok.sum())
            if n_ok:
                mean, bias, mse = summarize_estimates(cell.coef[cell.ok], truth)
            else:
                mean = bias = mse = np.full(truth.size, np.nan)
            for j in range(truth.size):
                out.append([f"beta{j}", model, structure, mean[j], bias[j], mse[j], n_ok])
        return out

    def table(self, model: str, structure: str):
        """``(mean, bias, mse)`` arrays for one cell."""
        cell = self.cells[(model, structure)]
        if not cell.ok.any():
            raise MmgeeError(f"cell {model}/{structure} has no converged replications")
        return summarize_estimates(cell.coef[cell.ok], truth_for(model, self.config.beta))

    def n_failed(self, model: str, structure: str) -> int:
        return int((~self.cells[(model, structure)].ok).sum())

    def coverage(self, model: str, structure: str, level: float = 0.95) -> np.ndarray:
        """Share of converged replications whose robust Wald interval covers the truth."""
        cell = self.cells[(model, structure)]
        z = special.ndtri(0.5 + level / 2.0)
        truth = truth_for(model, self.config.beta)
        b, s = cell.coef[cell.ok], cell.se[cell.ok]
        return np.mean(np.abs(b - truth) <= z * s, axis=0)

    def to_csv(self, stream=None) -> Optional[str]:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in self.rows():
            w.writerow([*row[:3], *(repr(float(v)) for v in row[3:6]), row[6]])
        return out.getvalue() if stream is None else None

    def draws_csv(self, stream=None) -> Optional[str]:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["rep", "model", "structure", "converged", "parameter", "estimate",
                    "robust_se"])
        for (model, structure), cell in self.cells.items():
            for r in range(cell.coef.shape[0]):
                for j in range(cell.coef.shape[1]):
                    w.writerow([r, model, structure, int(cell.ok[r]), f"beta{j}",
                                repr(float(cell.coef[r, j])), repr(float(cell.se[r, j]))])
        return out.getvalue() if stream is None else None


def summarize_estimates(draws, truth):
    """Mean, bias and MSE (mean squared deviation from truth) per parameter."""
    d = np.atleast_2d(np.asarray(draws, dtype=float))
    if d.shape[0] < 1:
        raise MmgeeError("no draws to summarise")
    truth = np.asarray(truth, dtype=float)
    mean = d.mean(axis=0)
    return mean, mean - truth, np.mean((d - truth) ** 2, axis=0)


def run_replication(args):
    """Fit every (model, structure) cell on replication ``rep``'s dataset."""
    config, models, structures, rep = args
    data = simulate_dataset(config, replication_rng(config.seed, rep))
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for model in models:
            for corstr in structures:
                spec = model_spec(model, corstr)
                q = spec.n_coef
                t0 = time.perf_counter()
                try:
                    fit = fit_gee(build_problem(data, spec), spec.family, corstr,
                                  config.tol, config.max_iter)
                    res = (fit.coef, fit.robust_se, fit.converged)
                except MmgeeError:
                    res = (np.full(q, np.nan), np.full(q, np.nan), False)
                out[(model, corstr)] = res + (time.perf_counter() - t0,)
    return out


def monte_carlo(config: SimConfig, models: Sequence[str] = MODELS,
                structures: Sequence[str] = CORRELATION_STRUCTURES,
                n_jobs: int = 1, progress=None) -> McSummary:
    """Run ``config.reps`` replications and collect per-cell estimates.

    Results do not depend on ``n_jobs``: each replication draws from its own
    stream and results are reduced in replication order.
    """
    for m in models:
        model_spec(m, "independence")
    for s in structures:
        if s not in CORRELATION_STRUCTURES:
            raise SpecError(f"unknown correlation structure {s!r}")
    tasks = [(config, tuple(models), tuple(structures), r) for r in range(config.reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_replication, tasks,
                                    chunksize=max(1, config.reps // (4 * n_jobs))))
    else:
        results = []
        for task in tasks:
            results.append(run_replication(task))
            if progress is not None:
                progress(len(results), config.reps)

    summary = McSummary(config)
    for model in models:
        for corstr in structures:
            coef = np.array([res[(model, corstr)][0] for res in results])
            se = np.array([res[(model, corstr)][1] for res in results])
            ok = np.array([res[(model, corstr)][2] for res in results], dtype=bool)
            ok &= np.all(np.isfinite(coef), axis=1)
            secs = float(sum(res[(model, corstr)][3] for res in results))
            summary.cells[(model, corstr)] = CellResult(model, corstr, coef, se, ok, secs)
    return summary


def parse_list(value: Optional[str], allowed: Iterable[str]) -> tuple:
    allowed = tuple(allowed)
    if not value:
        return allowed
    items = tuple(v.strip() for v in value.split(",") if v.strip())
    bad = [v for v in items if v not in allowed]
    if bad:
        raise SpecError(f"unknown value(s) {bad}; choose from {allowed}")
    return items
