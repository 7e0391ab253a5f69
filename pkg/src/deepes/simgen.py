"""Synthetic data generation and ground truth for the simulation studies.

Location-scale responses y = h1(x) + h2(x) * eta over x uniform on [0,1]^d,
with three built-in (h1, h2) models of dimension 8, 10 and 12 and a family
of noise distributions (normal, scaled Student t, Pareto, Frechet, Burr,
plus uniform/two-point helpers for tests).  True conditional quantile and
tail-average (expected shortfall) functions follow in closed form from the
quantile q_alpha(eta) and tail mean e_alpha(eta) of the noise, which are
computed here by adaptive quadrature.

All randomness flows through counter-based Philox generators spawned from
one seed, so replications are reproducible and parallel-safe.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, ndtri, stdtrit

__all__ = [
    "ErrorDist",
    "DgpModel",
    "DgpSpec",
    "TrueFns",
    "MODELS",
    "eval_h",
    "quantile_of_eta",
    "es_of_eta",
    "true_fns",
    "generate",
    "dataset_to_csv",
    "dataset_from_csv",
    "truth_grid_to_csv",
]

_T_DF = 2.25
_T_SCALE = 1.0 / 3.0


# ---------------------------------------------------------------------------
# noise distributions


@dataclass(frozen=True)
class ErrorDist:
    """Noise distribution for the location-scale generator.

    kind is one of "normal", "scaled_t", "pareto", "frechet", "burr",
    "uniform", "twopoint".  The scaled t is fixed to t_{2.25}/3 (already
    zero mean, unit variance); for Pareto/Frechet/Burr the ``standardized``
    flag recentres and rescales to zero mean and unit variance using
    quadrature moments, which requires a finite second moment.
    """

    kind: str
    k: float | None = None
    s_m: float | None = None
    k1: float | None = None
    k2: float | None = None
    standardized: bool = False

    def __post_init__(self):
        if self.kind in ("normal", "scaled_t", "uniform", "twopoint"):
            pass
        elif self.kind == "pareto":
            if self.k is None or not self.k > 1:
                raise ValueError("pareto needs shape k > 1")
            if self.s_m is None:
                object.__setattr__(self, "s_m", 1.0)
            if not self.s_m > 0:
                raise ValueError("pareto needs minimum value s_m > 0")
        elif self.kind == "frechet":
            if self.k is None or not self.k > 1:
                raise ValueError("frechet needs shape k > 1")
        elif self.kind == "burr":
            if self.k1 is None or self.k2 is None or not (self.k1 > 1 and self.k2 > 1):
                raise ValueError("burr needs shapes k1, k2 > 1")
        else:
            raise ValueError(f"unknown error distribution {self.kind!r}")
        if self.standardized and self.kind in ("pareto", "frechet", "burr"):
            _raw_moments(self)  # fails fast if the variance does not exist

    @classmethod
    def normal(cls):
        return cls("normal")

    @classmethod
    def scaled_t(cls):
        return cls("scaled_t")

    @classmethod
    def pareto(cls, k, s_m=1.0, standardized=False):
        return cls("pareto", k=k, s_m=s_m, standardized=standardized)

    @classmethod
    def frechet(cls, k, standardized=False):
        return cls("frechet", k=k, standardized=standardized)

    @classmethod
    def burr(cls, k1, k2, standardized=False):
        return cls("burr", k1=k1, k2=k2, standardized=standardized)

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def twopoint(cls):
        return cls("twopoint")


def _t_pdf(x, df):
    c = math.exp(gammaln((df + 1) / 2) - gammaln(df / 2)) / math.sqrt(df * math.pi)
    return c * (1.0 + x * x / df) ** (-(df + 1) / 2)


def _raw_quantile(dist, u):
    """Inverse CDF of the unstandardized distribution, vectorized in u."""
    u = np.asarray(u, dtype=np.float64)
    if dist.kind == "normal":
        return ndtri(u)
    if dist.kind == "scaled_t":
        return stdtrit(_T_DF, u) * _T_SCALE
    if dist.kind == "pareto":
        return dist.s_m * (1.0 - u) ** (-1.0 / dist.k)
    if dist.kind == "frechet":
        with np.errstate(divide="ignore"):
            return (-np.log(u)) ** (-1.0 / dist.k)
    if dist.kind == "burr":
        return ((1.0 - u) ** (-1.0 / dist.k2) - 1.0) ** (1.0 / dist.k1)
    if dist.kind == "uniform":
        return u
    # twopoint: -1 with probability 1/2, +1 otherwise
    return np.where(u <= 0.5, -1.0, 1.0)


def _raw_pdf(dist, x):
    x = np.asarray(x, dtype=np.float64)
    if dist.kind == "normal":
        return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    if dist.kind == "scaled_t":
        return _t_pdf(x / _T_SCALE, _T_DF) / _T_SCALE
    with np.errstate(invalid="ignore", divide="ignore"):
        if dist.kind == "pareto":
            k, s_m = dist.k, dist.s_m
            return np.where(x >= s_m, k * s_m**k * x ** (-(k + 1.0)), 0.0)
        if dist.kind == "frechet":
            k = dist.k
            return np.where(
                x > 0, k * x ** (-k - 1.0) * np.exp(-(x ** (-k))), 0.0
            )
        if dist.kind == "burr":
            k1, k2 = dist.k1, dist.k2
            return np.where(
                x > 0,
                k1 * k2 * x ** (k1 - 1.0) / (1.0 + x**k1) ** (k2 + 1.0),
                0.0,
            )
    if dist.kind == "uniform":
        return np.where((x >= 0) & (x <= 1), 1.0, 0.0)
    raise ValueError(f"{dist.kind} has no density")


def _raw_support(dist):
    return {
        "normal": (-np.inf, np.inf),
        "scaled_t": (-np.inf, np.inf),
        "pareto": (dist.s_m if dist.s_m is not None else 1.0, np.inf),
        "frechet": (0.0, np.inf),
        "burr": (0.0, np.inf),
        "uniform": (0.0, 1.0),
        "twopoint": (-1.0, 1.0),
    }[dist.kind]


def _second_moment_exists(dist):
    if dist.kind == "pareto" or dist.kind == "frechet":
        return dist.k > 2
    if dist.kind == "burr":
        return dist.k1 * dist.k2 > 2
    return True


def _quad_checked(fn, a, b, points=None):
    val, err = quad(fn, a, b, epsabs=1e-11, epsrel=1e-11, limit=400,
                    points=points)
    if not math.isfinite(val) or err > 1e-6:
        raise RuntimeError(
            f"quadrature did not converge (value={val}, abserr={err})"
        )
    return val


@lru_cache(maxsize=None)
def _raw_moments_key(kind, k, s_m, k1, k2):
    dist = ErrorDist(kind, k=k, s_m=s_m, k1=k1, k2=k2)
    if kind in ("normal", "scaled_t", "twopoint"):
        return 0.0, 1.0
    if kind == "uniform":
        return 0.5, 1.0 / 12.0
    if not _second_moment_exists(dist):
        raise ValueError(
            f"{kind} with these shape parameters has no finite variance"
        )
    lo, hi = _raw_support(dist)
    mean = _quad_checked(lambda s: s * float(_raw_pdf(dist, s)), lo, hi)
    second = _quad_checked(lambda s: s * s * float(_raw_pdf(dist, s)), lo, hi)
    return mean, second - mean * mean


def _raw_moments(dist):
    return _raw_moments_key(dist.kind, dist.k, dist.s_m, dist.k1, dist.k2)


def _affine(dist):
    """(mu, sigma) such that eta = (raw - mu) / sigma under the dist flags."""
    if dist.standardized and dist.kind in ("pareto", "frechet", "burr"):
        mean, var = _raw_moments(dist)
        return mean, math.sqrt(var)
    return 0.0, 1.0


def dist_quantile(dist, u):
    """Inverse CDF of eta (standardization applied when flagged)."""
    mu, sigma = _affine(dist)
    return (_raw_quantile(dist, u) - mu) / sigma


def dist_pdf(dist, x):
    """Density of eta (standardization applied when flagged)."""
    mu, sigma = _affine(dist)
    x = np.asarray(x, dtype=np.float64)
    return _raw_pdf(dist, mu + sigma * x) * sigma


def dist_support(dist):
    """Support interval of eta."""
    mu, sigma = _affine(dist)
    lo, hi = _raw_support(dist)
    return (lo - mu) / sigma, (hi - mu) / sigma


def dist_sample(dist, rng, size):
    """Draw ``size`` variates of eta from a numpy Generator."""
    if dist.kind == "normal":
        raw = rng.standard_normal(size)
    elif dist.kind == "scaled_t":
        z = rng.standard_normal(size)
        raw = z / np.sqrt(rng.chisquare(_T_DF, size) / _T_DF) * _T_SCALE
    elif dist.kind == "twopoint":
        raw = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    else:
        raw = _raw_quantile(dist, rng.random(size))
    mu, sigma = _affine(dist)
    return (raw - mu) / sigma


def dist_expect(dist, fn, points=()):
    """E[fn(eta)] by adaptive quadrature (or a finite sum for discrete eta).

    ``points`` lists interior break locations of fn (e.g. kinks) so the
    integrator can split there.
    """
    if dist.kind == "twopoint":
        return 0.5 * fn(-1.0) + 0.5 * fn(1.0)
    lo, hi = dist_support(dist)
    cuts = sorted(p for p in points if lo < p < hi)
    edges = [lo, *cuts, hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += _quad_checked(
            lambda s: fn(s) * float(dist_pdf(dist, s)), a, b
        )
    return total


def quantile_of_eta(dist, alpha):
    """alpha-level quantile of the noise variable."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return float(dist_quantile(dist, alpha))


def es_of_eta(dist, alpha):
    """Lower tail average alpha^-1 * int_0^alpha q_u du of the noise.

    The integrand is steep near u = 0 for heavy tails, so the integral is
    evaluated after the substitution u = alpha * t^2.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    val = _quad_checked(
        lambda t: float(dist_quantile(dist, alpha * t * t)) * t, 0.0, 1.0
    )
    return 2.0 * val


# ---------------------------------------------------------------------------
# location-scale models


def _cols(X, n):
    return (X[:, j] for j in range(n))


def _h1_c1(X):
    x1, x2, x3, x4, x5, x6, x7, x8 = _cols(X, 8)
    return (
        np.cos(2 * np.pi * x1)
        + 1.0 / (1.0 + np.exp(-x2 - x3))
        + (1.0 + x4 + x5) ** (-3.0)
        + 1.0 / (x6 + np.exp(x7 * x8))
    )


def _h2_c1(X):
    x1, x2, x3, x4, x5, x6, x7, x8 = _cols(X, 8)
    return (
        np.sin(np.pi * (x1 + x2) / 2.0)
        + np.log1p(x3**2 * x4**2 * x5**2)
        + x8 / (1.0 + np.exp(-x6 - x7))
    )


def _h1_c2(X):
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = _cols(X, 10)
    s = x7 + x8 + x9 + x10
    return (
        1.0 / (1.0 + np.exp(-x1 - x2))
        + (1.0 + x3 + x4) / (1.0 + x3 + x4) ** 2
        + np.sin(2 * np.pi * (x5 + x6))
        + s / (2.0 * (1.0 + np.exp(s)))
    )


def _h2_c2(X):
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    x9, x10 = X[:, 8], X[:, 9]
    return (
        0.1
        + np.sin(np.pi / 3.0 * (x1 + x2 + x3))
        + np.log1p((x9 * x10) ** 2)
    )


def _h1_c3(X):
    signs = np.array([1.0, -1.0] * 6)
    return np.exp(X @ signs)


def _h2_c3(X):
    signs = np.array([-1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0])
    return 0.1 + np.sin(np.pi / 12.0 * (X @ signs))


@dataclass(frozen=True)
class DgpModel:
    """A location-scale model: input dimension and the two mean/scale maps."""

    name: str
    d: int
    h1: callable
    h2: callable


MODELS = {
    "c1": DgpModel("c1", 8, _h1_c1, _h2_c1),
    "c2": DgpModel("c2", 10, _h1_c2, _h2_c2),
    "c3": DgpModel("c3", 12, _h1_c3, _h2_c3),
}


def _resolve_model(model):
    if isinstance(model, DgpModel):
        return model
    key = str(model).lower()
    if key not in MODELS:
        raise ValueError(
            f"unknown model {model!r}; choose one of {sorted(MODELS)} or "
            "pass a DgpModel"
        )
    return MODELS[key]


def eval_h(model, which, x):
    """Evaluate h1 or h2 of a model at a d-vector or an (n, d) batch."""
    m = _resolve_model(model)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m.d:
        raise ValueError(f"model {m.name} expects dimension {m.d}")
    fn = {"h1": m.h1, "h2": m.h2}.get(which)
    if fn is None:
        raise ValueError("which must be 'h1' or 'h2'")
    out = fn(x)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class DgpSpec:
    """One synthetic-experiment configuration."""

    model: object = "c1"
    error: ErrorDist = ErrorDist("normal")
    n_train: int = 4096
    n_test: int = 100_000
    seed: int = 0

    def __post_init__(self):
        _resolve_model(self.model)
        if self.n_train < 64:
            raise ValueError("n_train must be at least 64")
        if self.n_test < 1:
            raise ValueError("n_test must be positive")


@dataclass(frozen=True)
class TrueFns:
    """True conditional quantile f0 and tail average g0 at one level."""

    f0: callable
    g0: callable
    q_eta: float
    e_eta: float


@lru_cache(maxsize=None)
def _eta_constants(dist, alpha):
    return quantile_of_eta(dist, alpha), es_of_eta(dist, alpha)


def true_fns(model, dist, alpha):
    """TrueFns for a model/noise pair at level alpha (constants cached)."""
    m = _resolve_model(model)
    q_eta, e_eta = _eta_constants(dist, alpha)

    def f0(x, _m=m, _q=q_eta):
        return eval_h(_m, "h1", x) + _q * eval_h(_m, "h2", x)

    def g0(x, _m=m, _e=e_eta):
        return eval_h(_m, "h1", x) + _e * eval_h(_m, "h2", x)

    return TrueFns(f0=f0, g0=g0, q_eta=q_eta, e_eta=e_eta)


def _draw(model, dist, n, seed_seq):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    X = rng.random((n, model.d))
    eta = dist_sample(dist, rng, n)
    y = model.h1(X) + model.h2(X) * eta
    return X, y


def generate(spec, alpha=None):
    """Seeded draw of (train, test, truth) for a DgpSpec.

    Train and test use independent sub-streams of the spec seed, so the test
    set is fixed per (spec, seed) and shared across estimators.  ``truth``
    is None unless a level alpha is given.
    """
    from .nn import Dataset

    m = _resolve_model(spec.model)
    ss_train, ss_test = np.random.SeedSequence(int(spec.seed)).spawn(2)
    X_tr, y_tr = _draw(m, spec.error, spec.n_train, ss_train)
    X_te, y_te = _draw(m, spec.error, spec.n_test, ss_test)
    truth = None if alpha is None else true_fns(m, spec.error, alpha)
    return Dataset(X_tr, y_tr), Dataset(X_te, y_te), truth


# ---------------------------------------------------------------------------
# CSV import/export


def dataset_to_csv(path, data):
    """Write a dataset as RFC-4180 CSV with header x1..xd,y."""
    d = data.X.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["y"])
        for row, yi in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])


def dataset_from_csv(path, response="y"):
    """Read a dataset written by :func:`dataset_to_csv` (or any CSV with a
    numeric response column named ``y``).  Returns (Dataset, feature names).
    """
    from .nn import Dataset

    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        if response not in header:
            raise ValueError(
                f"{path}: no {response!r} column; available columns: "
                f"{', '.join(header)}"
            )
        y_col = header.index(response)
        feat_names = [h for i, h in enumerate(header) if i != y_col]
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {lineno} has {len(row)} fields, "
                    f"expected {len(header)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
            ys.append(vals[y_col])
            xs.append([v for i, v in enumerate(vals) if i != y_col])
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return Dataset(np.asarray(xs), np.asarray(ys)), feat_names


def truth_grid_to_csv(path, model, dist, alpha, n, seed=0):
    """Sample the true (f0, g0) surfaces on a random grid and write CSV."""
    m = _resolve_model(model)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    X = rng.random((n, m.d))
    t = true_fns(m, dist, alpha)
    f0, g0 = t.f0(X), t.g0(X)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(m.d)] + ["f0", "g0"])
        for row, fv, gv in zip(X, f0, g0):
            w.writerow([repr(float(v)) for v in row]
                       + [repr(float(fv)), repr(float(gv))])
