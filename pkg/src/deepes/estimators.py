"""The two-step tail-average pipeline.

Stage one fits a quantile network by pinball-loss regression.  Stage two
turns the fitted quantile f into the surrogate response

    Z_i = min(y_i - f(x_i), 0) + alpha * f(x_i),

whose conditional mean is alpha times the true tail average, and fits a
second network g by minimizing mean Huber loss of Z_i - alpha * g(x_i).
A finite Huber threshold tau gives the robust estimator; tau = inf is the
least-squares variant.  Passing the true quantile function (any callable)
instead of a fitted network yields the oracle variants used by the
simulation harness.  Upper-tail models are fitted on negated responses and
negate their predictions on the way out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .losses import LossSpec
from .nn import Dataset, Mlp, derive_seed, fit, forward

__all__ = [
    "EsModel",
    "eval_quantile_fn",
    "default_truncation",
    "build_surrogate",
    "fit_dqr",
    "fit_es",
    "fit_upper",
    "fit_two_step",
    "predict_es",
]

# sub-seed tag separating the second-stage RNG stream from the first stage
ES_STAGE = 1


@dataclass(frozen=True)
class EsModel:
    """Fitted quantile/tail-average pair at one level.

    quantile_net is either a fitted Mlp or, in oracle mode, any callable
    mapping an (n, d) array to n quantile values.  tau_used is the Huber
    threshold exactly as used in training (inf for least squares).  For
    tail == "upper" the stored networks act on negated responses and all
    predictions are negated by :func:`predict_es`.
    """

    alpha: float
    quantile_net: object
    es_net: Mlp
    tau_used: float
    tail: str = "lower"
    qr_report: object = None
    es_report: object = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.tail not in ("lower", "upper"):
            raise ValueError("tail must be 'lower' or 'upper'")
        if not self.tau_used > 0:
            raise ValueError("tau_used must be positive (inf allowed)")
        if isinstance(self.quantile_net, Mlp):
            if self.quantile_net.input_dim != self.es_net.input_dim:
                raise ValueError("quantile and tail nets disagree on d")

    def predict(self, x):
        return predict_es(self, x)


def eval_quantile_fn(f, X):
    """Evaluate a quantile function (Mlp or callable) on an (n, d) batch."""
    if isinstance(f, Mlp):
        out = forward(f, X)
    else:
        out = np.asarray(f(X), dtype=np.float64)
    out = np.atleast_1d(np.asarray(out, dtype=np.float64))
    if out.shape != (X.shape[0],):
        raise ValueError(
            f"quantile function returned shape {out.shape}, "
            f"expected ({X.shape[0]},)"
        )
    if not np.all(np.isfinite(out)):
        raise ValueError("quantile function produced non-finite values")
    return out


def default_truncation(y):
    """Output bound for the network class: twice the response range.

    Generous enough never to bind on a reasonable fit while keeping the
    hypothesis class uniformly bounded; falls back to 1.0 for y identically
    zero (a bound of zero would pin every prediction).
    """
    m = 2.0 * float(np.max(np.abs(y)))
    return m if m > 0 else 1.0


def _resolve_trunc(truncation, y):
    if truncation == "auto":
        return default_truncation(y)
    if truncation is None:
        return None
    t = float(truncation)
    if not t > 0:
        raise ValueError("truncation must be positive, None or 'auto'")
    return t


def build_surrogate(data, f, alpha):
    """Surrogate responses Z_i = min(y_i - f(x_i), 0) + alpha * f(x_i)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    fx = eval_quantile_fn(f, data.X)
    return np.minimum(data.y - fx, 0.0) + alpha * fx


def fit_dqr(data, alpha, cfg, truncation="auto", with_report=False):
    """Stage one: quantile network minimizing the mean pinball loss."""
    trunc = _resolve_trunc(truncation, data.y)
    net, report = fit(data, LossSpec.check(alpha), cfg, truncation=trunc)
    return (net, report) if with_report else net


def _resolve_tau(tau, data, f):
    if isinstance(tau, (int, float, np.floating)):
        t = float(tau)
        if not t > 0:
            raise ValueError("tau must be positive (inf allowed)")
        return t
    return float(tau.resolve(data, f))


def fit_es(data, f, alpha, tau, cfg, truncation="auto", with_report=None):
    """Stage two: tail-average network from surrogate responses.

    tau may be a positive float (inf for the least-squares variant) or any
    object with a ``resolve(data, f)`` method (see tuning.TauRule).  The
    second stage draws its RNG stream from a sub-seed of cfg.seed so that
    refitting with a frozen quantile network is bit-reproducible.
    """
    tau_val = _resolve_tau(tau, data, f)
    z = build_surrogate(data, f, alpha)
    trunc = _resolve_trunc(truncation, data.y)
    es_cfg = replace(cfg, seed=derive_seed(cfg.seed, ES_STAGE))
    es_net, es_report = fit(
        Dataset(data.X, z), LossSpec.huber(tau_val), es_cfg,
        pred_scale=alpha, truncation=trunc,
    )
    qr_report = with_report if with_report is not None else None
    return EsModel(
        alpha=alpha, quantile_net=f, es_net=es_net, tau_used=tau_val,
        tail="lower", qr_report=qr_report, es_report=es_report,
    )


def fit_upper(data, alpha, tau, cfg, truncation="auto"):
    """Upper-tail model: fit the lower-tail pipeline on -y, negate outputs.

    The returned model predicts the conditional average of y above its
    (1 - alpha)-level quantile.
    """
    neg = Dataset(data.X, -data.y)
    model = fit_two_step(neg, alpha, tau, cfg, truncation=truncation)
    return replace(model, tail="upper")


def fit_two_step(data, alpha, tau, cfg, truncation="auto", tail="lower"):
    """Convenience wrapper: stage one, then stage two on the same data."""
    if tail == "upper":
        return fit_upper(data, alpha, tau, cfg, truncation=truncation)
    qnet, qr_report = fit_dqr(data, alpha, cfg, truncation=truncation,
                              with_report=True)
    model = fit_es(data, qnet, alpha, tau, cfg, truncation=truncation)
    return replace(model, qr_report=qr_report)


def predict_es(model, x):
    """Predicted (quantile, tail average) at x.

    Accepts a single d-vector (returns two floats) or an (n, d) batch
    (returns two (n,) arrays).  Upper-tail models negate both outputs.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.es_net.input_dim:
        raise ValueError(
            f"input has {X.shape[-1]} features, model expects "
            f"{model.es_net.input_dim}"
        )
    q = eval_quantile_fn(model.quantile_net, X)
    e = forward(model.es_net, X)
    if model.tail == "upper":
        q, e = -q, -e
    if single:
        return float(q[0]), float(e[0])
    return q, e
