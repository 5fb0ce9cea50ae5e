"""Named example models used by the CLI and the test suite."""
from __future__ import annotations

import numpy as np

from .models import SdeModel, scalar_model
from .weights import WeightSpec


def brownian(dim: int = 1) -> SdeModel:
    """Zero drift, identity diffusion."""
    eye = np.eye(dim)

    def drift(x):
        return np.zeros_like(x)

    def diffusion(x):
        return np.broadcast_to(eye, x.shape[:-1] + (dim, dim)).copy()

    def drift_jacobian(x):
        return np.zeros(x.shape[:-1] + (dim, dim))

    return SdeModel(
        dim=dim,
        nu=1.0,
        drift=drift,
        diffusion=diffusion,
        weight=WeightSpec(gamma=1.0, m0=1.0, c0=1.0),
        lyapunov_l=float(dim + 8),
        drift_jacobian=drift_jacobian,
        constant_diffusion=True,
        name="bm",
    )


def ornstein_uhlenbeck(dim: int = 1) -> SdeModel:
    """Linear restoring drift b(x) = -x, identity diffusion."""
    eye = np.eye(dim)

    def drift(x):
        return -x

    def diffusion(x):
        return np.broadcast_to(eye, x.shape[:-1] + (dim, dim)).copy()

    def drift_jacobian(x):
        return np.broadcast_to(-eye, x.shape[:-1] + (dim, dim)).copy()

    return SdeModel(
        dim=dim,
        nu=1.0,
        drift=drift,
        diffusion=diffusion,
        weight=WeightSpec(gamma=1.0, m0=2.0, c0=1.0),
        lyapunov_l=float(dim + 8),
        drift_jacobian=drift_jacobian,
        constant_diffusion=True,
        name="ou",
    )


def sine_square() -> SdeModel:
    """1-d model with drift x sin(x^2) and diffusion sqrt(2).

    The drift derivative sin(x^2) + 2 x^2 cos(x^2) reaches 1 + 2x^2 in
    magnitude, so the weight level m0 = 4 (V(x) = 4(1 + x^2)) is the smallest
    integer level for which 2|b'| <= V holds everywhere; see the H2 audit
    tests for the level-2 failure point.
    """
    return scalar_model(
        b=lambda x: x * np.sin(x * x),
        sigma=lambda x: np.full_like(np.asarray(x, dtype=float), np.sqrt(2.0)),
        db=lambda x: np.sin(x * x) + 2.0 * x * x * np.cos(x * x),
        weight=WeightSpec(gamma=1.0, m0=4.0, c0=1.0),
        lyapunov_l=18.0,
        nu=2.0,
        name="sinsq",
        constant_diffusion=True,
    )


def ou_multiplicative() -> SdeModel:
    """1-d restoring drift with state-dependent diffusion 1 + sin(x)/4.

    Exercises nonzero diffusion Jacobians and state-dependent sigma^{-1};
    a(x) >= 0.5625 so nu = 0.5 with margin.
    """
    return scalar_model(
        b=lambda x: -x,
        sigma=lambda x: 1.0 + 0.25 * np.sin(x),
        db=lambda x: -np.ones_like(np.asarray(x, dtype=float)),
        dsigma=lambda x: 0.25 * np.cos(x),
        weight=WeightSpec(gamma=1.0, m0=2.1, c0=1.0),
        lyapunov_l=15.0,
        nu=0.5,
        name="oumult",
    )


def counterexample_model(theta: float = 0.9) -> SdeModel:
    """The 1-d sublinear-drift model whose unweighted gradient bound fails."""
    from .counterexample import Counterexample

    return Counterexample(theta=theta).as_sde_model()


FIXTURE_BUILDERS = {
    "bm": brownian,
    "ou": ornstein_uhlenbeck,
    "sinsq": sine_square,
    "oumult": ou_multiplicative,
    "counterexample": counterexample_model,
}


def get_fixture(name: str, **kwargs) -> SdeModel:
    try:
        builder = FIXTURE_BUILDERS[name]
    except KeyError:
        known = ", ".join(sorted(FIXTURE_BUILDERS))
        raise KeyError(f"unknown fixture {name!r}; known fixtures: {known}") from None
    return builder(**kwargs)
