"""Pointwise losses shared by all estimators: check (pinball), Huber, squared.

All functions accept scalars or numpy arrays and return the same shape.
The Huber robustification parameter ``tau`` may be ``math.inf``, in which
case the Huber loss is exactly ``u**2 / 2``: the least-squares objective is
literally the Huber objective with an infinite threshold, so the two code
paths agree to the last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossSpec",
    "check_loss",
    "check_score",
    "huber_loss",
    "huber_score",
    "squared_loss",
]


def _as_array(u):
    a = np.asarray(u, dtype=np.float64)
    return a, (a.ndim == 0)


def check_loss(u, alpha):
    """Pinball loss {alpha - 1(u < 0)} * u; nonnegative for alpha in (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    a, scalar = _as_array(u)
    out = (alpha - (a < 0.0)) * a
    return float(out) if scalar else out


def check_score(u, alpha):
    """Derivative of the pinball loss in u.

    At u == 0 the subgradient is fixed to alpha (u == 0 treated as u > 0).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    a, scalar = _as_array(u)
    out = alpha - (a < 0.0).astype(np.float64)
    return float(out) if scalar else out


def huber_loss(u, tau):
    """Huber loss: u**2/2 for |u| <= tau, tau*|u| - tau**2/2 beyond.

    tau = inf reduces bitwise to the squared loss u**2/2.
    """
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    a, scalar = _as_array(u)
    if math.isinf(tau):
        out = 0.5 * a * a
    else:
        aa = np.abs(a)
        out = np.where(aa <= tau, 0.5 * a * a, tau * aa - 0.5 * tau * tau)
    return float(out) if scalar else out


def huber_score(u, tau):
    """Derivative of the Huber loss: clamp(u, -tau, tau). Lipschitz-1."""
    if not tau > 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    a, scalar = _as_array(u)
    out = a if math.isinf(tau) else np.clip(a, -tau, tau)
    out = np.asarray(out, dtype=np.float64)
    return float(out) if scalar else out


def squared_loss(u):
    """Squared-error loss u**2/2 (the tau = inf Huber loss)."""
    return huber_loss(u, math.inf)


@dataclass(frozen=True)
class LossSpec:
    """Selects one of the supported losses and carries its parameter.

    kind   -- "check", "huber" or "squared"
    alpha  -- quantile level in (0, 1), check loss only
    tau    -- positive threshold (inf allowed), huber loss only
    """

    kind: str
    alpha: float | None = None
    tau: float | None = None

    def __post_init__(self):
        if self.kind == "check":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError("check loss needs alpha in (0, 1)")
        elif self.kind == "huber":
            if self.tau is None or not self.tau > 0.0:
                raise ValueError("huber loss needs tau > 0 (inf allowed)")
        elif self.kind == "squared":
            pass
        else:
            raise ValueError(f"unknown loss kind {self.kind!r}")

    @classmethod
    def check(cls, alpha):
        return cls("check", alpha=alpha)

    @classmethod
    def huber(cls, tau):
        return cls("huber", tau=tau)

    @classmethod
    def squared(cls):
        return cls("squared")

    def value(self, u):
        """Pointwise loss value for residual(s) u."""
        if self.kind == "check":
            return check_loss(u, self.alpha)
        if self.kind == "huber":
            return huber_loss(u, self.tau)
        return squared_loss(u)

    def score(self, u):
        """Pointwise derivative of the loss in u (fixed kink conventions)."""
        if self.kind == "check":
            return check_score(u, self.alpha)
        if self.kind == "huber":
            return huber_score(u, self.tau)
        return huber_score(u, math.inf)
