"""Stacked response vector and design matrix for shared/separate coefficients.

Each subject's ``n_i x k`` response block is flattened time-major,
response-minor into one cluster of length ``n_i * k``. Each covariate row is
replicated ``k`` times; response-type indicators and indicator-by-covariate
interactions are appended on the right. Response 1 is the reference level.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import LongitudinalDataset
from .errors import SpecError
from .families import Family

CORRELATION_STRUCTURES = ("independence", "exchangeable", "ar1", "unstructured")
INTERCEPT = "(Intercept)"


@dataclass(frozen=True)
class ModelSpec:
    """Which responses and covariates enter, and which effects are separated.

    ``interaction`` holds 0-based covariate positions (relative to
    ``covariates``) whose slopes differ by response.
    """

    responses: tuple
    covariates: tuple = ()
    include_rtype: bool = False
    interaction: tuple = ()
    family: Family = field(default_factory=Family)
    corstr: str = "independence"

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        inter = tuple(int(i) for i in self.interaction)
        object.__setattr__(self, "interaction", inter)
        if not self.responses:
            raise SpecError("at least one response is required")
        if len(set(self.responses)) != len(self.responses):
            raise SpecError("duplicate response names")
        if len(set(self.covariates)) != len(self.covariates):
            raise SpecError("duplicate covariate names")
        p = len(self.covariates)
        bad = [i for i in inter if not 0 <= i < p]
        if bad:
            raise SpecError(
                f"interaction index out of range (1-based): {[i + 1 for i in bad]} "
                f"(model has {p} covariates)")
        if len(set(inter)) != len(inter):
            raise SpecError("duplicate interaction indices")
        if inter and not self.include_rtype:
            raise SpecError("interactions require the response-type indicator (rtype)")
        if self.corstr not in CORRELATION_STRUCTURES:
            raise SpecError(
                f"unknown correlation structure {self.corstr!r}; "
                f"choose one of {CORRELATION_STRUCTURES}")

    @property
    def k(self) -> int:
        return len(self.responses)

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def n_coef(self) -> int:
        if not self.include_rtype:
            return self.p + 1
        return self.p + 1 + (self.k - 1) + (self.k - 1) * len(self.interaction)

    def column_labels(self) -> list:
        labels = [INTERCEPT, *self.covariates]
        if self.include_rtype:
            others = self.responses[1:]
            labels += [rtype_label(r) for r in others]
            labels += [f"{self.covariates[l]}:{rtype_label(r)}"
                       for r in others for l in self.interaction]
        return labels


def rtype_label(response: str) -> str:
    return f"rtype_{response}"


@dataclass(frozen=True, eq=False)
class StackedProblem:
    """Stacked ``(M*k,)`` response and ``(M*k, q)`` design with cluster offsets."""

    y: np.ndarray
    X: np.ndarray
    cluster_starts: np.ndarray
    labels: tuple
    responses: tuple
    subject_ids: np.ndarray
    response_index: np.ndarray
    time: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_starts) - 1

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.diff(self.cluster_starts)

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def subset(self, clusters: Sequence[int]) -> "StackedProblem":
        """Problem restricted to (and reordered by) the given cluster positions."""
        starts = self.cluster_starts
        rows = np.concatenate([np.arange(starts[c], starts[c + 1]) for c in clusters])
        sizes = self.cluster_sizes[list(clusters)]
        return StackedProblem(
            y=self.y[rows], X=self.X[rows],
            cluster_starts=np.concatenate([[0], np.cumsum(sizes)]),
            labels=self.labels, responses=self.responses,
            subject_ids=self.subject_ids[list(clusters)],
            response_index=self.response_index[rows], time=self.time[rows],
        )


def _response_matrix(data: LongitudinalDataset, spec: ModelSpec) -> np.ndarray:
    missing = [r for r in spec.responses if r not in data.response_names]
    if missing:
        raise SpecError(f"unknown response name(s): {missing}")
    idx = [data.response_names.index(r) for r in spec.responses]
    return data.responses[:, idx]


def _covariate_matrix(data: LongitudinalDataset, spec: ModelSpec) -> np.ndarray:
    missing = [c for c in spec.covariates if c not in data.covariate_names]
    if missing:
        raise SpecError(f"unknown covariate name(s): {missing}")
    idx = [data.covariate_names.index(c) for c in spec.covariates]
    return data.covariates[:, idx]


def build_stacked_response(data: LongitudinalDataset, spec: ModelSpec) -> np.ndarray:
    # row-major ravel of (M, k) gives (i,t,1), (i,t,2), ... ordering
    return np.ascontiguousarray(_response_matrix(data, spec)).ravel()


def build_stacked_design(data: LongitudinalDataset, spec: ModelSpec):
    """Return ``(X_new, labels)``."""
    cov = _covariate_matrix(data, spec)
    m, k = data.n_obs, spec.k
    base = np.column_stack([np.ones(m), cov])
    blocks = [np.repeat(base, k, axis=0)]
    if spec.include_rtype:
        resp = np.tile(np.arange(k), m)
        rt = np.column_stack([(resp == j).astype(float) for j in range(1, k)]) \
            if k > 1 else np.empty((m * k, 0))
        blocks.append(rt)
        rep_cov = np.repeat(cov, k, axis=0)
        for j in range(k - 1):
            for l in spec.interaction:
                blocks.append((rep_cov[:, l] * rt[:, j])[:, None])
    X = np.hstack(blocks)
    return X, tuple(spec.column_labels())


def build_problem(data: LongitudinalDataset, spec: ModelSpec) -> StackedProblem:
    y = build_stacked_response(data, spec)
    X, labels = build_stacked_design(data, spec)
    k = spec.k
    return StackedProblem(
        y=y, X=X,
        cluster_starts=data.cluster_starts * k,
        labels=labels,
        responses=spec.responses,
        subject_ids=data.subject_ids,
        response_index=np.tile(np.arange(k), data.n_obs),
        time=np.repeat(data.time, k),
    )


def build_block_problem(data: LongitudinalDataset, spec: ModelSpec) -> StackedProblem:
    """Traditional model with a separate coefficient vector per response.

    Uses the same stacked row order as :func:`build_problem`; the design is
    block structured so response ``j`` rows only load on the ``j``-th copy of
    ``(1, X_it)``. Labels are ``name@response``.
    """
    cov = _covariate_matrix(data, spec)
    m, k = data.n_obs, spec.k
    base = np.repeat(np.column_stack([np.ones(m), cov]), k, axis=0)
    resp = np.tile(np.arange(k), m)
    X = np.hstack([base * (resp == j)[:, None] for j in range(k)])
    names = [INTERCEPT, *spec.covariates]
    labels = tuple(f"{n}@{r}" for r in spec.responses for n in names)
    return StackedProblem(
        y=build_stacked_response(data, spec), X=X,
        cluster_starts=data.cluster_starts * k, labels=labels,
        responses=spec.responses, subject_ids=data.subject_ids,
        response_index=resp, time=np.repeat(data.time, k),
    )


def full_interaction_to_block(beta, spec: ModelSpec) -> np.ndarray:
    """Map full-interaction coefficients onto per-response blocks.

    Requires ``include_rtype`` and every covariate in ``interaction``. Response
    ``j > 1`` gets ``shared + rtype_j`` for the intercept and
    ``shared + cov:rtype_j`` for each slope.
    """
    if not spec.include_rtype or sorted(spec.interaction) != list(range(spec.p)):
        raise SpecError("mapping requires rtype and interactions on every covariate")
    beta = np.asarray(beta, dtype=float)
    p, k = spec.p, spec.k
    shared = beta[: p + 1]
    out = [shared]
    for j in range(k - 1):
        delta = np.empty(p + 1)
        delta[0] = beta[p + 1 + j]
        start = p + 1 + (k - 1) + j * p
        delta[1 + np.array(spec.interaction, dtype=int)] = beta[start:start + p]
        out.append(shared + delta)
    return np.concatenate(out)


def interaction_from_one_based(indices: Optional[Sequence[int]]) -> tuple:
    return tuple(int(i) - 1 for i in (indices or ()))
