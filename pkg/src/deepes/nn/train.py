"""Mini-batch Adam training with seeded validation split and model selection.

One ``fit`` call is fully deterministic given (data, loss, config, seed):
the validation split, the He initialization and the per-epoch shuffles are
all drawn in a fixed order from one seeded generator.  After every epoch the
validation loss is evaluated and the parameter vector achieving the smallest
value is the one returned.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..losses import LossSpec
from . import backend, _numpy_backend
from ._numpy_backend import CHECK, HUBER, NumericError
from .mlp import Mlp, init_params

__all__ = [
    "FitConfig",
    "TrainReport",
    "Dataset",
    "fit",
    "grad",
    "derive_seed",
    "NumericError",
]

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix X (n, d) and response vector y (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array (n, d)")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be 1-d with one entry per row of X")
        if X.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class FitConfig:
    """Optimizer and training hyperparameters.

    hidden_plan lists the hidden-layer widths; the default is the
    (h, 2h, 2h, h) profile with h = 64.
    """

    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    validation_fraction: float = 0.2
    seed: int = 0
    hidden_plan: tuple = (64, 128, 128, 64)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be a positive integer")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if not 0 <= int(self.seed) <= _SEED_MASK:
            raise ValueError("seed must fit in 64 unsigned bits")
        plan = tuple(int(w) for w in self.hidden_plan)
        if any(w <= 0 for w in plan):
            raise ValueError("hidden widths must be positive")
        object.__setattr__(self, "hidden_plan", plan)


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch losses and the index of the selected (best) epoch."""

    train_losses: tuple
    val_losses: tuple
    selected_epoch: int
    snapshot_id: str


def derive_seed(base_seed, *tags):
    """Stable 64-bit sub-seed from a base seed and integer tags."""
    ss = np.random.SeedSequence([int(base_seed) & _SEED_MASK]
                                + [int(t) & _SEED_MASK for t in tags])
    return int(ss.generate_state(1, np.uint64)[0])


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _loss_codes(loss):
    if loss.kind == "check":
        return CHECK, float(loss.alpha)
    if loss.kind == "huber":
        return HUBER, float(loss.tau)
    return HUBER, math.inf


def fit(data, loss, cfg, pred_scale=1.0, truncation=None):
    """Train a network on ``data`` and return (Mlp, TrainReport).

    data       -- Dataset with n >= 5 rows
    loss       -- LossSpec; residuals are u = y - pred_scale * f(x)
    cfg        -- FitConfig; cfg.batch_size is clamped to the training-set
                  size after the validation split
    truncation -- positive output bound M, or None for an unclipped network

    Adam runs with beta1 = 0.9, beta2 = 0.999, eps = 1e-8, optimizer state
    reset at every call.  The returned parameters are the snapshot with the
    smallest validation loss (earliest epoch on ties).
    """
    if not isinstance(data, Dataset):
        data = Dataset(data[0], data[1])
    if data.n < 5:
        raise ValueError(f"need at least 5 rows to fit, got {data.n}")
    if not isinstance(loss, LossSpec):
        raise TypeError("loss must be a LossSpec")
    kind, p = _loss_codes(loss)
    trunc = math.inf if truncation is None else float(truncation)
    if not trunc > 0:
        raise ValueError("truncation must be positive or None")

    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)))
    n = data.n
    n_val = int(math.ceil(cfg.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    split = rng.permutation(n)
    val_idx, tr_idx = split[:n_val], split[n_val:]
    X_tr = np.ascontiguousarray(data.X[tr_idx])
    y_tr = np.ascontiguousarray(data.y[tr_idx])
    X_val = np.ascontiguousarray(data.X[val_idx])
    y_val = np.ascontiguousarray(data.y[val_idx])
    n_tr = X_tr.shape[0]
    batch = min(cfg.batch_size, n_tr)

    widths = (data.d, *cfg.hidden_plan, 1)
    params = init_params(widths, rng)
    widths_arr = np.asarray(widths, dtype=np.int64)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    t = 0
    s = float(pred_scale)

    train_losses = []
    val_losses = []
    best_val = math.inf
    best_params = params.copy()
    best_epoch = -1
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n_tr)
        ep_loss, t = backend.run_epoch(
            params, m, v, t, widths_arr, X_tr, y_tr, perm, batch,
            kind, p, s, trunc,
            cfg.learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
        )
        val_loss = backend.eval_loss(params, widths_arr, X_val, y_val,
                                     kind, p, s, trunc)
        if not (math.isfinite(ep_loss) and math.isfinite(val_loss)):
            raise NumericError(
                f"non-finite loss at epoch {epoch} "
                f"(train={ep_loss}, val={val_loss})"
            )
        train_losses.append(ep_loss)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch

    net = Mlp(widths, best_params, truncation_bound=truncation)
    report = TrainReport(
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        selected_epoch=best_epoch,
        snapshot_id=hashlib.sha256(best_params.tobytes()).hexdigest()[:16],
    )
    return net, report


def grad(net, X, y, loss, pred_scale=1.0):
    """Gradient of the mean batch loss with respect to the flat parameters.

    Always evaluated with the numpy kernels (with per-layer finiteness
    checks); raises NumericError naming the offending layer otherwise.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError("batch dimension mismatch with network input")
    if y.shape != (X.shape[0],) or X.shape[0] == 0:
        raise ValueError("batch must be non-empty with matching y")
    kind, p = _loss_codes(loss)
    trunc = math.inf if net.truncation_bound is None else net.truncation_bound
    _, g = _numpy_backend.loss_grad(
        net.params, net.layer_widths, X, y, kind, p, float(pred_scale), trunc,
        check_finite=True,
    )
    return g


def batch_loss(net, X, y, loss, pred_scale=1.0):
    """Mean loss of ``net`` on a batch (same conventions as :func:`grad`)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    kind, p = _loss_codes(loss)
    trunc = math.inf if net.truncation_bound is None else net.truncation_bound
    return _numpy_backend.eval_loss(
        net.params, net.layer_widths, X, y, kind, p, float(pred_scale), trunc
    )
