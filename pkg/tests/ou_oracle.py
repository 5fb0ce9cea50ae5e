"""Closed-form reference values for the Ornstein-Uhlenbeck fixture.

For dX = -X dt + dW started at x, the time-t law is Gaussian with mean
x e^{-t} and variance v(t) = (1 - e^{-2t}) / 2, so for phi = cos(lam .):

    P_t phi(x)  = cos(lam x e^{-t}) exp(-lam^2 v(t) / 2)
    d/dx P_t phi = -lam e^{-t} sin(lam x e^{-t}) exp(-lam^2 v(t) / 2)

The same formulas with e^{-t} -> 1 and v -> t serve Brownian motion.
"""
import math


def ou_variance(t: float) -> float:
    return (1.0 - math.exp(-2.0 * t)) / 2.0


def ou_p_cos(t: float, x: float, lam: float = 1.0) -> float:
    return math.cos(lam * x * math.exp(-t)) * math.exp(-lam * lam * ou_variance(t) / 2.0)


def ou_dp_cos(t: float, x: float, lam: float = 1.0) -> float:
    decay = math.exp(-t)
    return -lam * decay * math.sin(lam * x * decay) * math.exp(
        -lam * lam * ou_variance(t) / 2.0)


def bm_p_cos(t: float, x: float, lam: float = 1.0) -> float:
    return math.cos(lam * x) * math.exp(-lam * lam * t / 2.0)


def bm_dp_cos(t: float, x: float, lam: float = 1.0) -> float:
    return -lam * math.sin(lam * x) * math.exp(-lam * lam * t / 2.0)
