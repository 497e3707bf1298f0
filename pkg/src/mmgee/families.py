"""Link functions and variance functions for the supported response families.

Only four family/link pairs are admitted: gaussian/identity, binomial/logit,
binomial/probit and poisson/log.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, SpecError

#: Guard used inside the solver to keep binomial variances away from zero.
BINOMIAL_EPS = 1e-12
# exp(709.78) overflows float64
_MAX_LOG_ETA = 700.0

DEFAULT_LINKS = {"gaussian": "identity", "binomial": "logit", "poisson": "log"}
ALLOWED = {
    ("gaussian", "identity"),
    ("binomial", "logit"),
    ("binomial", "probit"),
    ("poisson", "log"),
}


@dataclass(frozen=True)
class Family:
    """A family/link pair plus the dispersion mode.

    Parameters
    ----------
    name : {'gaussian', 'binomial', 'poisson'}
    link : str, optional
        Defaults to the canonical link of ``name``.
    dispersion : float, optional
        Fixed dispersion. ``None`` means the dispersion is estimated.
    """

    name: str = "gaussian"
    link: Optional[str] = None
    dispersion: Optional[float] = None

    def __post_init__(self):
        if self.name not in DEFAULT_LINKS:
            raise SpecError(
                f"unknown family {self.name!r}; choose one of {sorted(DEFAULT_LINKS)}"
            )
        if self.link is None:
            object.__setattr__(self, "link", DEFAULT_LINKS[self.name])
        if (self.name, self.link) not in ALLOWED:
            raise SpecError(f"link {self.link!r} is not allowed for family {self.name!r}")
        if self.dispersion is not None:
            if not np.isfinite(self.dispersion) or self.dispersion <= 0:
                raise SpecError(f"fixed dispersion must be > 0, got {self.dispersion}")
            object.__setattr__(self, "dispersion", float(self.dispersion))

    @property
    def fixed_dispersion(self) -> bool:
        return self.dispersion is not None

    # -- link side -----------------------------------------------------

    def link_fn(self, mu):
        """Linear predictor ``g(mu)``; raises DomainError on the domain boundary."""
        mu = np.asarray(mu, dtype=float)
        if self.link == "identity":
            return mu.copy()
        if self.link in ("logit", "probit"):
            if np.any((mu <= 0) | (mu >= 1)) or np.any(np.isnan(mu)):
                raise DomainError(f"{self.link} link requires 0 < mu < 1")
            return special.logit(mu) if self.link == "logit" else special.ndtri(mu)
        if np.any(mu <= 0) or np.any(np.isnan(mu)):
            raise DomainError("log link requires mu > 0")
        return np.log(mu)

    def inverse_link(self, eta):
        """Mean ``g^{-1}(eta)``.

        The logit and probit inverses saturate to exactly 0 or 1 in float64
        once ``|eta|`` exceeds roughly 37 and 8 respectively; the log inverse
        is capped at ``exp(700)``.
        """
        eta = np.asarray(eta, dtype=float)
        if self.link == "identity":
            return eta.copy()
        if self.link == "logit":
            return special.expit(eta)
        if self.link == "probit":
            return special.ndtr(eta)
        return np.exp(np.minimum(eta, _MAX_LOG_ETA))

    def mean_derivative(self, eta):
        """``d mu / d eta``, strictly positive for finite ``eta`` (up to underflow)."""
        eta = np.asarray(eta, dtype=float)
        if self.link == "identity":
            return np.ones_like(eta)
        if self.link == "logit":
            p = special.expit(eta)
            return p * (1.0 - p)
        if self.link == "probit":
            return np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
        return np.exp(np.minimum(eta, _MAX_LOG_ETA))

    # -- variance side -------------------------------------------------

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.name == "gaussian":
            return np.ones_like(mu)
        if self.name == "binomial":
            if np.any((mu < 0) | (mu > 1)):
                raise DomainError("binomial variance requires 0 <= mu <= 1")
            return mu * (1.0 - mu)
        if np.any(mu < 0):
            raise DomainError("poisson variance requires mu >= 0")
        return mu.copy()

    def clamp_mean(self, mu):
        """Numerical guard applied inside the solver, not a model change."""
        if self.name == "binomial":
            return np.clip(mu, BINOMIAL_EPS, 1.0 - BINOMIAL_EPS)
        if self.name == "poisson":
            return np.maximum(mu, BINOMIAL_EPS)
        return mu

    def starting_mean(self, y):
        """Data-based starting means used to initialise IRLS."""
        y = np.asarray(y, dtype=float)
        if self.name == "binomial":
            return (y + 0.5) / 2.0
        if self.name == "poisson":
            return y + 0.1
        return y.copy()

    def describe(self) -> str:
        disp = "estimated" if self.dispersion is None else f"fixed({self.dispersion:g})"
        return f"{self.name}/{self.link}, dispersion {disp}"


def make_family(name="gaussian", link=None, dispersion=None) -> Family:
    if isinstance(name, Family):
        return name
    return Family(name=name, link=link, dispersion=dispersion)
