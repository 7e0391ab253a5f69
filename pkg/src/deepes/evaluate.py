"""Model evaluation: out-of-sample MSPE, permutation importance, replication
aggregation, and a population-level check of the Huber robustification bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .estimators import EsModel, build_surrogate, eval_quantile_fn
from .losses import huber_loss
from .nn import Dataset, Mlp, forward
from .simgen import dist_expect, es_of_eta, quantile_of_eta

__all__ = [
    "MspeSummary",
    "VpiReport",
    "mspe",
    "aggregate",
    "vpi",
    "huber_bias_check",
]


def mspe(pred, truth):
    """Mean squared prediction error between two aligned vectors."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("pred and truth must be nonempty 1-d of equal length")
    d = pred - truth
    return float(np.mean(d * d))


@dataclass(frozen=True)
class MspeSummary:
    """Replication summary: mean and sample sd of per-rep MSPE values."""

    estimator: str
    alpha: float
    n: int
    mean_mspe: float
    sd_mspe: float
    n_reps: int
    per_rep: tuple


def aggregate(reps, estimator="", alpha=float("nan"), n=0):
    """Mean and sd (denominator n_reps - 1) over replications.

    A single replication reports sd = 0 by convention so downstream CSV
    stays rectangular.
    """
    per_rep = tuple(float(r) for r in reps)
    if not per_rep:
        raise ValueError("need at least one replication")
    mean = float(np.mean(per_rep))
    sd = 0.0 if len(per_rep) == 1 else float(np.std(per_rep, ddof=1))
    return MspeSummary(
        estimator=estimator, alpha=alpha, n=n,
        mean_mspe=mean, sd_mspe=sd, n_reps=len(per_rep), per_rep=per_rep,
    )


@dataclass(frozen=True)
class VpiReport:
    """Per-feature permutation importance.

    relative[j][r] is permuted/base - 1 for feature j on repeat r; means[j]
    averages the repeats.  loss_kind records whether the base loss compares
    predictions with the observed response or with the estimated surrogate
    response.
    """

    loss_kind: str
    base_loss: float
    feature_names: tuple
    relative: tuple
    means: tuple


def vpi(model, data, target="response", seed=0, repeats=1,
        feature_names=None):
    """Permutation importance of each feature for a fitted model.

    target "response"  -- model is a plain network; loss is the MSE of its
                          predictions against y (mean-regression use).
    target "surrogate" -- model is an EsModel; loss is the MSE of
                          alpha * g(x) against the estimated surrogate
                          response built from the model's quantile stage.

    One seeded permutation per feature and repeat; the base loss and the
    comparison targets are computed once on the unpermuted data, so a
    feature the model ignores scores exactly 0.
    """
    if data.n < 2:
        raise ValueError("need at least 2 rows for permutation importance")
    X, y = data.X, data.y
    if target == "response":
        if not isinstance(model, Mlp):
            raise TypeError("target='response' expects a plain network")

        def predict(xs):
            return forward(model, xs)

        ref = y
    elif target == "surrogate":
        if not isinstance(model, EsModel):
            raise TypeError("target='surrogate' expects an EsModel")
        y_eff = -y if model.tail == "upper" else y
        ref = build_surrogate(Dataset(X, y_eff), model.quantile_net,
                              model.alpha)

        def predict(xs):
            return model.alpha * forward(model.es_net, xs)

    else:
        raise ValueError("target must be 'response' or 'surrogate'")

    base_pred = predict(X)
    base_loss = float(np.mean((ref - base_pred) ** 2))
    if not base_loss > 0:
        raise ValueError("base loss is zero; relative increase is undefined")

    d = X.shape[1]
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{j + 1}" for j in range(d)
    )
    if len(names) != d:
        raise ValueError("feature_names length must match the data dimension")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    rel = [[] for _ in range(d)]
    for _ in range(int(repeats)):
        for j in range(d):
            perm = rng.permutation(data.n)
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            loss = float(np.mean((ref - predict(Xp)) ** 2))
            rel[j].append(loss / base_loss - 1.0)
    return VpiReport(
        loss_kind=target,
        base_loss=base_loss,
        feature_names=names,
        relative=tuple(tuple(r) for r in rel),
        means=tuple(float(np.mean(r)) for r in rel),
    )


def huber_bias_check(dist, alpha, tau_grid, p):
    """Deviation of the population Huber minimizer from the true tail mean.

    Covariate-free location problem: with eta ~ dist, q its alpha-quantile
    and g0 its alpha tail average, the surrogate Z = min(eta - q, 0) +
    alpha*q has mean alpha*g0.  For each tau the minimizer a_tau of
    E huber_tau(Z - alpha*a) is found by quadrature plus one-dimensional
    convex minimization, and compared against the bound

        alpha * |a_tau - g0| <= 2 * nu_p * tau^(1-p),

    where nu_p = E|Z - E Z|^p.  Every tau must satisfy the validity floor
    (4*nu_p)^(1/p) for 1 < p < 2, or (4*nu_2)^(1/2) for p >= 2.  Returns one
    row per tau: {tau, a_tau, deviation, alpha_deviation, bound, ok}.
    """
    if not p > 1:
        raise ValueError("need moment order p > 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    tau_grid = [float(t) for t in tau_grid]
    if not tau_grid or any(not t > 0 for t in tau_grid):
        raise ValueError("tau_grid must be nonempty and positive")

    q = quantile_of_eta(dist, alpha)
    g0 = es_of_eta(dist, alpha)
    mean_neg = alpha * (g0 - q)  # E min(eta - q, 0)

    def omega(s):
        return min(s - q, 0.0) - mean_neg

    nu_p = dist_expect(dist, lambda s: abs(omega(s)) ** p,
                       points=(q, q + mean_neg))
    if not math.isfinite(nu_p):
        raise ValueError(f"nu_p is not finite for p = {p}")
    if p >= 2:
        nu_2 = dist_expect(dist, lambda s: omega(s) ** 2,
                           points=(q, q + mean_neg))
        floor = math.sqrt(4.0 * nu_2)
    else:
        floor = (4.0 * nu_p) ** (1.0 / p)
    bad = [t for t in tau_grid if t < floor]
    if bad:
        raise ValueError(
            f"tau values {bad} below the validity floor {floor:.6g}"
        )

    def risk(a, tau):
        shift = alpha * (q - a)
        kinks = (q, q - shift + tau, q - shift - tau)
        return dist_expect(
            dist,
            lambda s: float(huber_loss(min(s - q, 0.0) + shift, tau)),
            points=kinks,
        )

    rows = []
    for tau in tau_grid:
        res = minimize_scalar(
            lambda a: risk(a, tau),
            bracket=(g0 - 1.0, g0, g0 + 1.0),
            method="brent",
            options={"xtol": 1e-12},
        )
        a_tau = float(res.x)
        dev = abs(a_tau - g0)
        bound = 2.0 * nu_p * tau ** (1.0 - p)
        rows.append({
            "tau": tau,
            "a_tau": a_tau,
            "deviation": dev,
            "alpha_deviation": alpha * dev,
            "bound": bound,
            "ok": alpha * dev <= bound + 1e-12,
        })
    return rows
