"""Fully-connected ReLU networks with optional output truncation.

Parameters live in one flat float64 vector (weights row-major, then bias,
layer by layer), which keeps the optimizer state trivial and makes
serialization and gradient checking straightforward.  The truncation bound
``M`` clips the scalar output to [-M, M]; ``None`` means no truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Mlp", "param_layout", "init_params", "forward"]


def param_layout(widths):
    """Byte layout of the flat parameter vector for the given layer widths.

    Returns (total_size, slices) where slices[l] = (w_start, b_start, d_in,
    d_out) for layer l; the weight block is d_in*d_out long, row-major.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    if any(w <= 0 for w in widths):
        raise ValueError(f"layer widths must be positive, got {widths}")
    slices = []
    off = 0
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        slices.append((off, off + d_in * d_out, d_in, d_out))
        off += d_in * d_out + d_out
    return off, slices


def init_params(widths, rng):
    """He-style scaled-uniform weights, zero biases, drawn from ``rng``.

    Weight entries are uniform on +-sqrt(6 / fan_in), the usual choice for
    ReLU layers; draws are consumed layer by layer so the stream is stable.
    """
    total, slices = param_layout(widths)
    params = np.zeros(total, dtype=np.float64)
    for w_start, b_start, d_in, d_out in slices:
        bound = np.sqrt(6.0 / d_in)
        params[w_start:b_start] = rng.uniform(-bound, bound, d_in * d_out)
    return params


@dataclass(frozen=True)
class Mlp:
    """A trained (or hand-built) network: widths, flat parameters, truncation.

    layer_widths     -- (d, N_1, ..., N_L, 1); no hidden layer is allowed
    params           -- flat float64 vector, see :func:`param_layout`
    truncation_bound -- positive M clipping the output to [-M, M], or None
    """

    layer_widths: tuple
    params: np.ndarray
    truncation_bound: float | None = None
    _slices: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        total, slices = param_layout(widths)
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (total,):
            raise ValueError(
                f"params has shape {params.shape}, expected ({total},) "
                f"for widths {widths}"
            )
        if not np.all(np.isfinite(params)):
            raise ValueError("network parameters must be finite")
        if self.truncation_bound is not None and not self.truncation_bound > 0:
            raise ValueError("truncation_bound must be positive or None")
        params = params.copy()
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_slices", slices)

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def n_params(self):
        return self.params.size

    @property
    def weights(self):
        """Per-layer weight matrices (read-only views, shape d_in x d_out)."""
        return [
            self.params[w0:b0].reshape(d_in, d_out)
            for w0, b0, d_in, d_out in self._slices
        ]

    @property
    def biases(self):
        """Per-layer bias vectors (read-only views)."""
        return [
            self.params[b0:b0 + d_out]
            for _, b0, _, d_out in self._slices
        ]

    def forward(self, x):
        """Evaluate the network; accepts a single d-vector or an (n, d) batch."""
        return forward(self, x)

    __call__ = forward


def forward_flat(params, widths, X, trunc):
    """Batch forward pass on the flat parameter vector.

    X is (n, d); trunc is a float bound (np.inf for no truncation).
    Returns the (n,) truncated outputs.
    """
    _, slices = param_layout(widths)
    a = X
    last = len(slices) - 1
    for l, (w0, b0, d_in, d_out) in enumerate(slices):
        w = params[w0:b0].reshape(d_in, d_out)
        b = params[b0:b0 + d_out]
        z = a @ w + b
        a = z if l == last else np.maximum(z, 0.0)
    raw = a[:, 0]
    if np.isinf(trunc):
        return raw
    return np.clip(raw, -trunc, trunc)


def forward(net, x):
    """Evaluate ``net`` at ``x`` (d-vector -> float, (n, d) batch -> (n,))."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(
            f"input has {x.shape[-1] if x.ndim else 0} features, "
            f"network expects {net.input_dim}"
        )
    trunc = np.inf if net.truncation_bound is None else net.truncation_bound
    out = forward_flat(net.params, net.layer_widths, x, trunc)
    return float(out[0]) if single else out
