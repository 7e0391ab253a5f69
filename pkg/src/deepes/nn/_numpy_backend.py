"""Pure-numpy training kernels: batched forward/backward, Adam, epoch loop.

This is the fallback twin of the compiled module ``_fastpath``; both expose
the same three entry points with identical semantics:

    loss_grad(params, widths, X, y, kind, p, s, M) -> (loss, grad)
    eval_loss(params, widths, X, y, kind, p, s, M) -> loss
    run_epoch(params, m, v, t, widths, X, y, perm, bs, kind, p, s, M,
              lr, b1, b2, eps) -> (epoch_loss, t)

Residuals are u_i = y_i - s * f(x_i) with prediction scale ``s`` (the
second-stage objective scales the network output by the tail level), and
``M`` is the output truncation bound (np.inf disables it).  Loss kinds:
0 = check with parameter p = alpha, 1 = huber with parameter p = tau
(p = inf gives the squared loss).  Fixed kink conventions: ReLU'(0) = 0,
truncation derivative 1 on |raw| <= M, check score alpha at u = 0.
"""

from __future__ import annotations

import math

import numpy as np

from .mlp import param_layout

CHECK, HUBER = 0, 1


class NumericError(RuntimeError):
    """Non-finite value produced during a forward/backward pass."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


def _loss_value(u, kind, p):
    if kind == CHECK:
        return (p - (u < 0.0)) * u
    if math.isinf(p):
        return 0.5 * u * u
    au = np.abs(u)
    return np.where(au <= p, 0.5 * u * u, p * au - 0.5 * p * p)


def _loss_score(u, kind, p):
    if kind == CHECK:
        return p - (u < 0.0)
    if math.isinf(p):
        return u
    return np.clip(u, -p, p)


def _forward_cached(params, slices, X):
    """Forward pass keeping pre-activations and activations for backprop.

    Overflow is not trapped here; non-finite values are surfaced by the
    explicit checks in :func:`loss_grad`.
    """
    acts = [X]
    zs = []
    a = X
    last = len(slices) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for l, (w0, b0, d_in, d_out) in enumerate(slices):
            w = params[w0:b0].reshape(d_in, d_out)
            b = params[b0:b0 + d_out]
            z = a @ w + b
            zs.append(z)
            if l < last:
                a = np.maximum(z, 0.0)
                acts.append(a)
    return zs, acts


def loss_grad(params, widths, X, y, kind, p, s, M, check_finite=False):
    """Mean batch loss and its flat-parameter gradient."""
    total, slices = param_layout(widths)
    n = X.shape[0]
    zs, acts = _forward_cached(params, slices, X)
    if check_finite:
        for l, z in enumerate(zs):
            if not np.all(np.isfinite(z)):
                raise NumericError(
                    f"non-finite pre-activation in layer {l}", layer=l
                )
    raw = zs[-1][:, 0]
    yhat = raw if math.isinf(M) else np.clip(raw, -M, M)
    u = y - s * yhat
    loss = float(np.mean(_loss_value(u, kind, p)))

    d_yhat = (-s / n) * _loss_score(u, kind, p)
    if not math.isinf(M):
        d_yhat = d_yhat * (np.abs(raw) <= M)

    grad = np.zeros(total, dtype=np.float64)
    dz = d_yhat[:, None]
    for l in range(len(slices) - 1, -1, -1):
        w0, b0, d_in, d_out = slices[l]
        w = params[w0:b0].reshape(d_in, d_out)
        grad[w0:b0] = (acts[l].T @ dz).ravel()
        grad[b0:b0 + d_out] = dz.sum(axis=0)
        if l > 0:
            dz = (dz @ w.T) * (zs[l - 1] > 0.0)
    return loss, grad


def eval_loss(params, widths, X, y, kind, p, s, M):
    """Mean loss of the current parameters on (X, y)."""
    _, slices = param_layout(widths)
    a = X
    last = len(slices) - 1
    for l, (w0, b0, d_in, d_out) in enumerate(slices):
        w = params[w0:b0].reshape(d_in, d_out)
        b = params[b0:b0 + d_out]
        z = a @ w + b
        a = z if l == last else np.maximum(z, 0.0)
    raw = a[:, 0]
    yhat = raw if math.isinf(M) else np.clip(raw, -M, M)
    u = y - s * yhat
    return float(np.mean(_loss_value(u, kind, p)))


def run_epoch(params, m, v, t, widths, X, y, perm, batch_size,
              kind, p, s, M, lr, beta1, beta2, eps):
    """One pass over ``perm`` in mini-batches with Adam updates in place.

    Returns (sample-weighted mean training loss over the epoch, new step
    count).  The final short batch is kept.
    """
    n = perm.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        loss, grad = loss_grad(params, widths, X[idx], y[idx], kind, p, s, M)
        t += 1
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        params -= lr * mhat / (np.sqrt(vhat) + eps)
        total += loss * idx.shape[0]
    return total / n, t
