"""Growth weights and the Lyapunov potentials built from them.

A weight is a function

    f(t) = m0 * exp(c0 * int_1^t s^(-gamma) ds),    t >= 1,

with gamma in [1/2, 1], m0 > 0 and c0 >= 1.  The exponent integral has the
closed form (t^(1-gamma) - 1)/(1-gamma) for gamma < 1 and log(t) for
gamma = 1, so in particular f(t) = m0 * t^c0 when gamma = 1 and
f(t) = m0 * exp(2 c0 (sqrt(t) - 1)) when gamma = 1/2.

The associated potential is V(x) = f(1 + |x|^2).  Because f' = c0 f / t^gamma
and |x| <= (1 + |x|^2)^gamma for gamma >= 1/2, the gradient satisfies
|grad V(x)| <= 2 c0 V(x), which is what makes V usable as a Feynman-Kac
discount rate dominating the coefficient growth it is calibrated against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightSpec:
    """Parameters (gamma, m0, c0) of one growth weight.

    gamma : exponent in [1/2, 1] of the decay s^(-gamma) inside the rate
        integral.
    m0 : multiplicative level, > 0.
    c0 : rate constant, >= 1.
    """

    gamma: float
    m0: float = 1.0
    c0: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma) and 0.5 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in [1/2, 1], got {self.gamma!r}")
        if not (math.isfinite(self.m0) and self.m0 > 0.0):
            raise ValueError(f"m0 must be positive and finite, got {self.m0!r}")
        if not (math.isfinite(self.c0) and self.c0 >= 1.0):
            raise ValueError(f"c0 must be >= 1 and finite, got {self.c0!r}")

    def exponent_integral(self, t):
        """int_1^t s^(-gamma) ds, in closed form, for t >= 1."""
        t = _require_ge_one(t)
        if self.gamma == 1.0:
            return np.log(t)
        p = 1.0 - self.gamma
        # expm1 form avoids cancellation in t^p - 1 for p or t - 1 small
        return np.expm1(p * np.log(t)) / p

    def f(self, t):
        """Weight value f(t) for t >= 1 (vectorized)."""
        return self.m0 * np.exp(self.c0 * self.exponent_integral(t))

    def f_prime(self, t):
        """f'(t) = c0 f(t) / t^gamma for t >= 1."""
        t = _require_ge_one(t)
        return self.c0 * self.f(t) * np.power(t, -self.gamma)

    def power(self, p: float) -> "WeightSpec":
        """Parameters of f^p, again of weight form: c0 -> p c0, m0 -> m0^p."""
        if p * self.c0 < 1.0:
            raise ValueError("power would take c0 below 1")
        return WeightSpec(self.gamma, self.m0**p, p * self.c0)

    # -- potential -----------------------------------------------------

    def v_from_sq(self, sq):
        """V as a function of |x|^2 (callers pass the squared norm)."""
        return self.f(np.asarray(sq, dtype=float) + 1.0)

    def v(self, x):
        """Potential V(x) = f(1 + |x|^2); x has coordinates on the last axis."""
        x = _as_points(x)
        return self.v_from_sq(np.sum(x * x, axis=-1))

    def grad_v(self, x):
        """Gradient 2 f'(1 + |x|^2) x, same shape as x."""
        x = _as_points(x)
        sq = np.sum(x * x, axis=-1)
        return 2.0 * self.f_prime(sq + 1.0)[..., None] * x


def _require_ge_one(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 1.0):
        raise ValueError("weight argument must satisfy t >= 1")
    return t


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


def weight_f(spec: WeightSpec, t):
    """Module-level alias for spec.f(t)."""
    return spec.f(t)


def lyapunov_v(spec: WeightSpec, x):
    """Module-level alias for spec.v(x)."""
    return spec.v(x)


def grad_lyapunov_v(spec: WeightSpec, x):
    """Module-level alias for spec.grad_v(x)."""
    return spec.grad_v(x)
