import io
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def mscm_shaped_csv(n_subjects=167, days=range(17, 29), seed=0, p=11):
    """Synthetic file with the MSCM layout: two binary responses, 11 covariates."""
    rng = np.random.default_rng(seed)
    names = ["married", "education", "employed", "chlth", "mhlth", "race", "csex",
             "housize", "bstress", "billness", "week"][:p]
    out = io.StringIO()
    out.write(",".join(["id", "day", "stress", "illness", *names]) + "\n")
    for i in range(1, n_subjects + 1):
        base = rng.integers(0, 2, size=8).astype(float)
        base[3] = rng.integers(0, 4)
        base[4] = rng.integers(0, 4)
        bs, bi = rng.uniform(0, 0.5, size=2)
        u = rng.normal(scale=0.8)
        for day in days:
            week = (day - 22) / 7
            covs = [*base, round(bs, 4), round(bi, 4), round(week, 6)][:p]
            s = int(rng.random() < 1 / (1 + np.exp(-(-1.5 + 2 * bs + u - 0.3 * week))))
            ill = int(rng.random() < 1 / (1 + np.exp(-(-1.0 + 1.5 * bi + 0.5 * u))))
            out.write(",".join(map(str, [i, day, s, ill, *covs])) + "\n")
    return out.getvalue()


MSCM_COVARIATES = ("married", "education", "employed", "chlth", "mhlth", "race", "csex",
                   "housize", "bstress", "billness", "week")


@pytest.fixture(scope="session")
def mscm_text():
    return mscm_shaped_csv()


def gaussian_panel(n=150, T=4, seed=1, p=2):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(n), T)
    X = rng.normal(size=(n * T, p))
    u = rng.normal(size=(n, 2))[g]
    Y = np.column_stack([
        1.0 + X @ np.linspace(0.5, -0.5, p) + u[:, 0] + rng.normal(size=n * T),
        -0.5 + X @ np.linspace(0.2, 0.8, p) + u[:, 1] + rng.normal(size=n * T),
    ])
    return X, Y, g


def binary_panel(n=200, T=3, seed=2, p=2):
    rng = np.random.default_rng(seed)
    g = np.repeat(np.arange(n), T)
    X = rng.normal(size=(n * T, p))
    u = rng.normal(size=n)[g]
    eta1 = 0.2 + X @ np.linspace(0.6, -0.3, p) + u
    eta2 = -0.3 + X @ np.linspace(0.4, 0.1, p) + 0.7 * u
    Y = np.column_stack([rng.random(n * T) < 1 / (1 + np.exp(-e)) for e in (eta1, eta2)])
    return X, Y.astype(float), g
