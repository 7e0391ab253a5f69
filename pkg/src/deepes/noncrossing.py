"""Joint multi-level estimation with structurally non-crossing curves.

K levels alpha_1 < ... < alpha_K are fitted together.  A stack holds a mean
network v and K gap networks w_1..w_K; the level-k curve is

    f_k = v - wbar + sum_{j<=k} iota(w_j),
    wbar = K^-1 * sum_k (K + 1 - k) * iota(w_k),

where iota is a continuous, strictly positive gap activation, so that
f_{k+1} - f_k = iota(w_{k+1}) > 0 at every point by construction.  Quantile
stacks train on the averaged multi-level pinball loss; tail-average stacks
train on per-level Huber losses of the level-k surrogate responses, and
predictions clamp each tail curve at its quantile curve.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .estimators import default_truncation, _resolve_trunc, ES_STAGE
from .nn import Dataset, FitConfig, Mlp, TrainReport, derive_seed
from .nn.mlp import init_params, param_layout
from .nn.train import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, NumericError
from .tuning import nu2_hat, tau_hat

__all__ = [
    "NcStack",
    "NcEsModel",
    "gap_activation",
    "stack_eval",
    "fit_nc_dqr",
    "fit_nc_dres",
    "per_level_taus",
    "nc_predict",
]

CHECK, HUBER = 0, 1


def gap_activation(u):
    """Positive gap map: u + 1 for u >= 0, exp(u) for u < 0.

    Continuous, strictly increasing, range (0, inf); the value at 0 is 1.
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.where(u >= 0.0, u + 1.0, np.exp(np.minimum(u, 0.0)))
    return float(out) if out.ndim == 0 else out


def _gap_deriv(u):
    return np.where(u >= 0.0, 1.0, np.exp(np.minimum(u, 0.0)))


@dataclass(frozen=True)
class NcStack:
    """Mean network plus K gap networks evaluated jointly at K levels."""

    levels: tuple
    mean_net: Mlp
    gap_nets: tuple
    kind: str = "quantile"

    def __post_init__(self):
        levels = tuple(float(a) for a in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "gap_nets", tuple(self.gap_nets))
        if len(levels) < 1:
            raise ValueError("need at least one level")
        if any(not 0.0 < a < 1.0 for a in levels):
            raise ValueError("levels must lie in (0, 1)")
        if any(a >= b for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if len(self.gap_nets) != len(levels):
            raise ValueError("one gap network per level required")
        if self.kind not in ("quantile", "es"):
            raise ValueError("kind must be 'quantile' or 'es'")
        d = self.mean_net.input_dim
        if any(g.input_dim != d for g in self.gap_nets):
            raise ValueError("all stack networks must share input dimension")

    @property
    def K(self):
        return len(self.levels)

    @property
    def input_dim(self):
        return self.mean_net.input_dim

    def __call__(self, x):
        return stack_eval(self, x)


def _combine(v_out, gap_outs):
    """Stack curves from component outputs: v (n,), gaps (n, K)."""
    K = gap_outs.shape[1]
    iota = gap_activation(gap_outs)
    coef = np.arange(K, 0, -1, dtype=np.float64)
    wbar = iota @ coef / K
    return v_out[:, None] - wbar[:, None] + np.cumsum(iota, axis=1)


def stack_eval(stack, x):
    """Evaluate all K curves; d-vector -> (K,), (n, d) batch -> (n, K)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != stack.input_dim:
        raise ValueError(
            f"input has {X.shape[-1]} features, stack expects {stack.input_dim}"
        )
    v_out = stack.mean_net(X)
    gap_outs = np.column_stack([g(X) for g in stack.gap_nets])
    out = _combine(v_out, gap_outs)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# joint training


def _net_forward(params, slices, X, trunc):
    zs = []
    a = X
    last = len(slices) - 1
    for l, (w0, b0, d_in, d_out) in enumerate(slices):
        w = params[w0:b0].reshape(d_in, d_out)
        b = params[b0:b0 + d_out]
        z = a @ w + b
        zs.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
    raw = zs[-1][:, 0]
    out = raw if math.isinf(trunc) else np.clip(raw, -trunc, trunc)
    return out, raw, zs


def _net_backward(params, slices, X, zs, d_out_vec, grad):
    dz = d_out_vec[:, None]
    acts = [X] + [np.maximum(z, 0.0) for z in zs[:-1]]
    for l in range(len(slices) - 1, -1, -1):
        w0, b0, d_in, d_outw = slices[l]
        w = params[w0:b0].reshape(d_in, d_outw)
        grad[w0:b0] += (acts[l].T @ dz).ravel()
        grad[b0:b0 + d_outw] += dz.sum(axis=0)
        if l > 0:
            dz = (dz @ w.T) * (zs[l - 1] > 0.0)


def _loss_value_mat(u, kind, pvec):
    if kind == CHECK:
        return (pvec[None, :] - (u < 0.0)) * u
    with np.errstate(invalid="ignore"):
        au = np.abs(u)
        out = np.where(
            au <= pvec[None, :],
            0.5 * u * u,
            pvec[None, :] * au - 0.5 * pvec[None, :] ** 2,
        )
    return out


def _loss_score_mat(u, kind, pvec):
    if kind == CHECK:
        return pvec[None, :] - (u < 0.0)
    return np.clip(u, -pvec[None, :], pvec[None, :])


class _JointNets:
    """Flat parameter vector spanning the mean net and K gap nets."""

    def __init__(self, d, hidden_plan, K, rng, trunc):
        widths = (d, *hidden_plan, 1)
        size, slices = param_layout(widths)
        self.widths = widths
        self.trunc = trunc
        self.offsets = [i * size for i in range(K + 1)]
        self.size = size
        self.theta = np.concatenate(
            [init_params(widths, rng) for _ in range(K + 1)]
        )
        self.slices = slices

    def net_slices(self, i):
        off = self.offsets[i]
        return [(w0 + off, b0 + off, di, do) for w0, b0, di, do in self.slices]

    def forward_all(self, X):
        outs, raws, caches = [], [], []
        for i in range(len(self.offsets)):
            out, raw, zs = _net_forward(
                self.theta, self.net_slices(i), X, self.trunc
            )
            outs.append(out)
            raws.append(raw)
            caches.append(zs)
        return outs, raws, caches

    def to_mlps(self, theta):
        nets = []
        for i in range(len(self.offsets)):
            off = self.offsets[i]
            piece = theta[off:off + self.size]
            trunc = None if math.isinf(self.trunc) else self.trunc
            nets.append(Mlp(self.widths, piece, truncation_bound=trunc))
        return nets


def _joint_loss_grad(nets, X, targets, kind, pvec, svec):
    K = targets.shape[1]
    n = X.shape[0]
    outs, raws, caches = nets.forward_all(X)
    v_out = outs[0]
    gap_outs = np.column_stack(outs[1:])
    iota = gap_activation(gap_outs)
    coef = np.arange(K, 0, -1, dtype=np.float64)
    wbar = iota @ coef / K
    f = v_out[:, None] - wbar[:, None] + np.cumsum(iota, axis=1)
    u = targets - f * svec[None, :]
    loss = float(np.mean(_loss_value_mat(u, kind, pvec)))

    df = (-svec[None, :] / (n * K)) * _loss_score_mat(u, kind, pvec)
    d_v = df.sum(axis=1)
    revcum = np.cumsum(df[:, ::-1], axis=1)[:, ::-1]
    d_iota = revcum - (coef / K)[None, :] * df.sum(axis=1, keepdims=True)
    d_gap_out = d_iota * _gap_deriv(gap_outs)

    grad = np.zeros_like(nets.theta)
    trunc = nets.trunc
    for i, d_out in enumerate([d_v] + list(d_gap_out.T)):
        if not math.isinf(trunc):
            d_out = d_out * (np.abs(raws[i]) <= trunc)
        _net_backward(nets.theta, nets.net_slices(i), X, caches[i],
                      d_out, grad)
    return loss, grad


def _joint_eval_loss(nets, X, targets, kind, pvec, svec):
    outs, _, _ = nets.forward_all(X)
    f = _combine(outs[0], np.column_stack(outs[1:]))
    u = targets - f * svec[None, :]
    return float(np.mean(_loss_value_mat(u, kind, pvec)))


def _fit_joint(data, levels, targets, kind, pvec, svec, cfg, trunc):
    """Adam training of the joint objective; mirrors nn.train.fit."""
    if data.n < 5:
        raise ValueError(f"need at least 5 rows to fit, got {data.n}")
    K = len(levels)
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)))
    n = data.n
    n_val = int(math.ceil(cfg.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    split = rng.permutation(n)
    val_idx, tr_idx = split[:n_val], split[n_val:]
    X_tr, T_tr = data.X[tr_idx], targets[tr_idx]
    X_val, T_val = data.X[val_idx], targets[val_idx]
    n_tr = X_tr.shape[0]
    batch = min(cfg.batch_size, n_tr)

    trunc_val = math.inf if trunc is None else float(trunc)
    nets = _JointNets(data.d, cfg.hidden_plan, K, rng, trunc_val)
    m = np.zeros_like(nets.theta)
    v = np.zeros_like(nets.theta)
    t = 0

    train_losses, val_losses = [], []
    best_val = math.inf
    best_theta = nets.theta.copy()
    best_epoch = -1
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n_tr)
        total = 0.0
        for start in range(0, n_tr, batch):
            idx = perm[start:start + batch]
            loss, grad = _joint_loss_grad(
                nets, X_tr[idx], T_tr[idx], kind, pvec, svec
            )
            t += 1
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * grad * grad
            mhat = m / (1.0 - ADAM_BETA1 ** t)
            vhat = v / (1.0 - ADAM_BETA2 ** t)
            nets.theta -= cfg.learning_rate * mhat / (np.sqrt(vhat) + ADAM_EPS)
            total += loss * idx.shape[0]
        ep_loss = total / n_tr
        val_loss = _joint_eval_loss(nets, X_val, T_val, kind, pvec, svec)
        if not (math.isfinite(ep_loss) and math.isfinite(val_loss)):
            raise NumericError(
                f"non-finite loss at epoch {epoch} "
                f"(train={ep_loss}, val={val_loss})"
            )
        train_losses.append(ep_loss)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_theta = nets.theta.copy()
            best_epoch = epoch

    mlps = nets.to_mlps(best_theta)
    report = TrainReport(
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        selected_epoch=best_epoch,
        snapshot_id=hashlib.sha256(best_theta.tobytes()).hexdigest()[:16],
    )
    return mlps, report


def fit_nc_dqr(data, levels, cfg, truncation="auto", with_report=False):
    """Jointly fit K non-crossing quantile curves.

    Minimizes the level-averaged pinball loss (1/nK) sum_i sum_k
    rho_{alpha_k}(y_i - f_k(x_i)) over the stack construction by Adam.
    """
    levels = tuple(float(a) for a in levels)
    _validate_levels(levels)
    trunc = _resolve_trunc(truncation, data.y)
    targets = np.tile(data.y[:, None], (1, len(levels)))
    pvec = np.asarray(levels, dtype=np.float64)
    svec = np.ones(len(levels))
    mlps, report = _fit_joint(
        data, levels, targets, CHECK, pvec, svec, cfg, trunc
    )
    stack = NcStack(levels, mlps[0], tuple(mlps[1:]), kind="quantile")
    return (stack, report) if with_report else stack


def per_level_taus(data, qstack, tau_const=1.0):
    """Rule-based Huber thresholds from the level-k quantile residuals."""
    f_all = stack_eval(qstack, data.X)
    taus = []
    for k in range(qstack.K):
        resid_neg = np.minimum(data.y - f_all[:, k], 0.0)
        nu2 = float(np.var(resid_neg, ddof=1))
        taus.append(tau_hat(nu2, data.n, tau_const))
    return tuple(taus)


def fit_nc_dres(data, qstack, taus, cfg, truncation="auto",
                with_report=False):
    """Jointly fit K non-crossing tail-average curves above a quantile stack.

    Builds the level-k surrogate Z_ik = min(y_i - f_k(x_i), 0) +
    alpha_k f_k(x_i) from the quantile stack and minimizes the averaged
    per-level Huber losses of Z_ik - alpha_k g_k(x_i).  Predictions clamp
    g_k at f_k (see :func:`nc_predict`).
    """
    levels = qstack.levels
    taus = tuple(float(t) for t in taus)
    if len(taus) != len(levels):
        raise ValueError("need one tau per level")
    if any(not t > 0 for t in taus):
        raise ValueError("taus must be positive")
    alpha_vec = np.asarray(levels, dtype=np.float64)
    f_all = stack_eval(qstack, data.X)
    Z = np.minimum(data.y[:, None] - f_all, 0.0) + alpha_vec[None, :] * f_all

    trunc = _resolve_trunc(truncation, data.y)
    es_cfg = replace(cfg, seed=derive_seed(cfg.seed, ES_STAGE))
    mlps, report = _fit_joint(
        data, levels, Z, HUBER, np.asarray(taus), alpha_vec, es_cfg, trunc
    )
    es_stack = NcStack(levels, mlps[0], tuple(mlps[1:]), kind="es")
    model = NcEsModel(quantile_stack=qstack, es_stack=es_stack, taus=taus)
    return (model, report) if with_report else model


def _validate_levels(levels):
    if len(levels) < 1:
        raise ValueError("need at least one level")
    if any(not 0.0 < a < 1.0 for a in levels):
        raise ValueError("levels must lie in (0, 1)")
    if any(a >= b for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")


@dataclass(frozen=True)
class NcEsModel:
    """Joint quantile and tail-average stacks with per-level thresholds."""

    quantile_stack: NcStack
    es_stack: NcStack
    taus: tuple
    clamped: bool = True

    def __post_init__(self):
        if self.quantile_stack.levels != self.es_stack.levels:
            raise ValueError("stacks fitted at different level sets")
        if len(self.taus) != self.quantile_stack.K:
            raise ValueError("need one tau per level")
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))

    @property
    def levels(self):
        return self.quantile_stack.levels

    def predict(self, x):
        return nc_predict(self, x)


def nc_predict(model, x):
    """Per-level (quantile, tail average) pairs ordered by level.

    Returns (f, g) with shape (K,) each for a single point or (n, K) for a
    batch; g is clamped at f pointwise unless model.clamped is False.
    """
    f = stack_eval(model.quantile_stack, x)
    g = stack_eval(model.es_stack, x)
    if model.clamped:
        g = np.minimum(g, f)
    return f, g
