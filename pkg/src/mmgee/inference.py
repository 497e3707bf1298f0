"""Post-fit quantities: per-response coefficients, Wald tests, odds ratios,
efficiency gains, and the plain-text fit file format."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .correlation import CorrelationStructure
from .design import INTERCEPT, rtype_label
from .engine import GeeFit
from .errors import CovarianceInconsistencyError, DataError, SpecError
from .families import Family

FIT_FORMAT = "mmgee-fit"
FIT_VERSION = 1


class InterpretationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DerivedCoefficient:
    response: str
    covariate: str
    base_index: int
    interaction_index: Optional[int]
    estimate: float
    se: float

    @property
    def z(self) -> float:
        return self.estimate / self.se if self.se > 0 else math.copysign(math.inf, self.estimate)

    @property
    def p_value(self) -> float:
        return float(2.0 * stats.norm.sf(abs(self.z)))


def combined_standard_error(var_s: float, var_t: float, cov_st: float) -> float:
    """Standard error of ``b_s + b_t`` from its variance/covariance entries."""
    total = var_s + var_t + 2.0 * cov_st
    if total < 0:
        raise CovarianceInconsistencyError(
            f"negative variance {total:.4g} for a sum of coefficients; "
            "the covariance entries are inconsistent")
    return math.sqrt(total)


def derived_coefficient(fit: GeeFit, s: int, s_prime: Optional[int] = None,
                        rtype: float = 1.0, source: str = "robust",
                        response: str = "", covariate: str = "") -> DerivedCoefficient:
    """Coefficient ``b_s + b_s' * rtype`` with its standard error."""
    q = len(fit.coef)
    for idx in (s, s_prime):
        if idx is not None and not 0 <= idx < q:
            raise SpecError(f"coefficient index {idx} out of range for {q} coefficients")
    V = fit.cov(source)
    if s_prime is None or rtype == 0:
        est = float(fit.coef[s])
        se = combined_standard_error(V[s, s], 0.0, 0.0)
    else:
        est = float(fit.coef[s] + fit.coef[s_prime] * rtype)
        se = combined_standard_error(V[s, s], rtype ** 2 * V[s_prime, s_prime],
                                     rtype * V[s, s_prime])
    return DerivedCoefficient(response, covariate or fit.labels[s], s,
                              s_prime if rtype != 0 else None, est, se)


def base_labels(fit: GeeFit) -> list:
    """Intercept and plain covariate labels (those before any rtype column)."""
    out = []
    for lab in fit.labels:
        if lab.startswith("rtype_") or ":" in lab:
            break
        out.append(lab)
    return out


def derive_response(fit: GeeFit, response: str, source: str = "robust") -> list:
    """All coefficients on the scale of one response."""
    if response not in fit.responses:
        raise SpecError(f"unknown response {response!r}; fit has {list(fit.responses)}")
    rt = rtype_label(response)
    rows = []
    for lab in base_labels(fit):
        s = fit.index(lab)
        partner = rt if lab == INTERCEPT else f"{lab}:{rt}"
        s_prime = fit.labels.index(partner) if partner in fit.labels else None
        rows.append(derived_coefficient(fit, s, s_prime, 1.0, source, response, lab))
    return rows


def wald_statistics(fit: GeeFit, source: str = "robust"):
    """Return ``(z, p)`` arrays; zero standard errors give infinite Z with a warning."""
    se = np.sqrt(np.clip(np.diag(fit.cov(source)), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, fit.coef / np.where(se > 0, se, 1.0),
                     np.copysign(np.inf, fit.coef))
    z = np.where((se == 0) & (fit.coef == 0), 0.0, z)
    if np.any(se == 0):
        warnings.warn("zero standard error(s); Z reported as infinite", InterpretationWarning,
                      stacklevel=2)
    return z, 2.0 * stats.norm.sf(np.abs(z))


def odds_ratio(*estimates: float, link: str = "logit") -> float:
    """``exp`` of the summed estimates; warns unless the link is logit."""
    if link != "logit":
        warnings.warn(f"odds ratios are only interpretable for the logit link, not {link!r}",
                      InterpretationWarning, stacklevel=2)
    return math.exp(sum(estimates))


def percent_decrease(se_ref: float, se_cmp: float) -> float:
    return 100.0 * (se_ref - se_cmp) / se_ref


def efficiency_gain(fit_ref: GeeFit, fit_cmp: GeeFit, by: str = "response",
                    source: str = "robust") -> list:
    """Percentage decrease in standard errors from ``fit_ref`` to ``fit_cmp``.

    ``by='coefficient'`` matches raw coefficients by label; ``by='response'``
    matches per-response derived coefficients by (response, covariate).
    Returns rows ``(key, se_ref, se_cmp, gain)``.
    """
    if by == "coefficient":
        ref = dict(zip(fit_ref.labels, np.sqrt(np.diag(fit_ref.cov(source)))))
        cmp_ = dict(zip(fit_cmp.labels, np.sqrt(np.diag(fit_cmp.cov(source)))))
        keys = [lab for lab in fit_ref.labels if lab in cmp_]
    elif by == "response":
        ref, cmp_ = {}, {}
        for f, table in ((fit_ref, ref), (fit_cmp, cmp_)):
            for r in f.responses:
                for d in derive_response(f, r, source):
                    table[(r, d.covariate)] = d.se
        keys = [key for key in ref if key in cmp_]
    else:
        raise ValueError("by must be 'response' or 'coefficient'")
    if not keys:
        raise SpecError("the two fits share no matching coefficients")
    return [(key, float(ref[key]), float(cmp_[key]), percent_decrease(ref[key], cmp_[key]))
            for key in keys]


# -- text rendering -------------------------------------------------------

def _fmt(x: float, width: int = 8) -> str:
    return f"{x:{width}.2f}" if np.isfinite(x) else f"{'inf' if x > 0 else '-inf':>{width}}"


def coefficient_table(fit: GeeFit) -> str:
    """Aligned text table rounded to 2 decimals."""
    z_r, _ = wald_statistics(fit, "robust")
    z_m, _ = wald_statistics(fit, "model")
    w = max(12, max(len(lab) for lab in fit.labels) + 1)
    head = (f"{'':<{w}}{'Est.':>8}{'Rob.SE':>8}{'Rob.Z':>8}"
            f"{'Mod.SE':>8}{'Mod.Z':>8}")
    lines = [head]
    for lab, b, rs, zr, ms, zm in zip(fit.labels, fit.coef, fit.robust_se, z_r,
                                      fit.model_se, z_m):
        lines.append(f"{lab:<{w}}{_fmt(b)}{_fmt(rs)}{_fmt(zr)}{_fmt(ms)}{_fmt(zm)}")
    return "\n".join(lines)


def derived_table(rows: Sequence[DerivedCoefficient]) -> str:
    w = max(12, max(len(r.covariate) for r in rows) + 1)
    lines = [f"{'':<{w}}{'Est.':>8}{'SE':>8}{'Z':>8}"]
    for r in rows:
        lines.append(f"{r.covariate:<{w}}{_fmt(r.estimate)}{_fmt(r.se)}{_fmt(r.z)}")
    return "\n".join(lines)


def summary_rows(fit: GeeFit) -> list:
    z_r, _ = wald_statistics(fit, "robust")
    z_m, _ = wald_statistics(fit, "model")
    return [
        [lab, repr(float(b)), repr(float(rs)), repr(float(zr)), repr(float(ms)), repr(float(zm))]
        for lab, b, rs, zr, ms, zm in zip(fit.labels, fit.coef, fit.robust_se, z_r,
                                          fit.model_se, z_m)
    ]


SUMMARY_HEADER = ["label", "estimate", "robust_se", "robust_z", "model_se", "model_z"]


# -- serialisation --------------------------------------------------------

def fit_to_dict(fit: GeeFit) -> dict:
    corr = fit.correlation
    return {
        "format": FIT_FORMAT,
        "version": FIT_VERSION,
        "family": fit.family.name,
        "link": fit.family.link,
        "fixed_dispersion": fit.family.dispersion,
        "corstr": fit.corstr,
        "responses": list(fit.responses),
        "labels": list(fit.labels),
        "coef": [float(b) for b in fit.coef],
        "robust_cov": np.asarray(fit.robust_cov).tolist(),
        "model_cov": np.asarray(fit.model_cov).tolist(),
        "scale": fit.scale,
        "alpha": corr.alpha,
        "correlation_matrix": None if corr.matrix is None else corr.matrix.tolist(),
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "trace": list(fit.trace),
        "n_clusters": fit.n_clusters,
        "n_obs": fit.n_obs,
    }


def fit_from_dict(d: dict) -> GeeFit:
    if d.get("format") != FIT_FORMAT:
        raise DataError("not a fit file")
    if d.get("version") != FIT_VERSION:
        raise DataError(f"unsupported fit file version {d.get('version')}")
    mat = d.get("correlation_matrix")
    corr = CorrelationStructure(d["corstr"], alpha=d.get("alpha"),
                                matrix=None if mat is None else np.array(mat))
    return GeeFit(
        coef=np.array(d["coef"], dtype=float),
        robust_cov=np.array(d["robust_cov"], dtype=float),
        model_cov=np.array(d["model_cov"], dtype=float),
        scale=float(d["scale"]),
        correlation=corr,
        n_iter=int(d["n_iter"]),
        converged=bool(d["converged"]),
        trace=tuple(d["trace"]),
        fitted=np.empty(0),
        labels=tuple(d["labels"]),
        family=Family(d["family"], d["link"], d.get("fixed_dispersion")),
        corstr=d["corstr"],
        responses=tuple(d["responses"]),
        n_clusters=int(d["n_clusters"]),
        n_obs=int(d["n_obs"]),
    )


def save_fit(fit: GeeFit, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit), fh, indent=1)
        fh.write("\n")


def load_fit(path: str) -> GeeFit:
    try:
        with open(path, encoding="utf-8") as fh:
            return fit_from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed fit file ({exc})") from exc
