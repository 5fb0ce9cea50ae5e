"""SDE models with C^1 coefficients and grid audits of the standing hypotheses.

A model is dX = b(X) dt + sigma(X) dW on R^d together with a growth weight
whose potential V(x) = f(1 + |x|^2) is supposed to dominate the coefficient
derivatives.  The three conditions audited here, for a = sigma sigma^T:

  H1 (Lyapunov drift):  2 <b(x), x> + tr a(x)
                          + 8 c0 <a(x) x, x> / (1 + |x|^2)^gamma
                          <= L (1 + |x|^2)^gamma
  H2 (derivative growth): 2 |Db(x) h| + sum_i |D sigma_i(x) h|^2 <= V(x)
                          for unit h (sigma_i = i-th column of sigma)
  H3 (ellipticity):       <a(x) h, h> >= nu |h|^2

None of these can be certified pointwise everywhere by sampling; the audit
reports worst residuals over a supplied or default point set so violations
are found and certificates are explicit about their grids.

Conventions: all coefficient callables are vectorized over a leading batch
axis.  drift maps (m, d) -> (m, d); diffusion maps (m, d) -> (m, d, d);
drift_jacobian maps (m, d) -> (m, d, d) with [p, j, k] = d b_j / d x_k;
diffusion_jacobians maps (m, d) -> (m, d, d, d) with [p, i, j, k] =
d sigma_{j i} / d x_k (the Jacobian of column i).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .weights import WeightSpec

FD_STEP_SCALE = 1e-5
DIRECTION_SEED = 90210


@dataclass(frozen=True)
class SdeModel:
    dim: int
    nu: float
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    weight: WeightSpec
    lyapunov_l: float
    drift_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_jacobians: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constant_diffusion: bool = False
    name: str = "model"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.nu > 0.0:
            raise ValueError("nu must be positive")
        if not self.lyapunov_l > 0.0:
            raise ValueError("lyapunov_l must be positive")

    # potential interface shared with the regularized variant
    def potential(self, x: np.ndarray) -> np.ndarray:
        return self.weight.v(x)

    def potential_grad(self, x: np.ndarray) -> np.ndarray:
        return self.weight.grad_v(x)

    def drift_jac(self) -> Callable[[np.ndarray], np.ndarray]:
        """Analytic drift Jacobian, or a central finite-difference fallback."""
        if self.drift_jacobian is not None:
            return self.drift_jacobian
        return fd_jacobian(self.drift, self.dim)

    def diffusion_jacs(self) -> Callable[[np.ndarray], np.ndarray]:
        """Per-column diffusion Jacobians; zeros if diffusion is constant."""
        if self.constant_diffusion:
            d = self.dim
            return lambda x: np.zeros(x.shape[:-1] + (d, d, d))
        if self.diffusion_jacobians is not None:
            return self.diffusion_jacobians
        return fd_column_jacobians(self.diffusion, self.dim)


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], dim: int):
    """Central-difference Jacobian of a (m, d) -> (m, d) map.

    Step 1e-5 * (1 + |x|) per point, one coordinate at a time.
    """

    def jac(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = x.shape[0]
        step = FD_STEP_SCALE * (1.0 + np.linalg.norm(x, axis=-1))
        out = np.empty((m, dim, dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = 1.0
            hk = step[:, None] * e
            out[:, :, k] = (fn(x + hk) - fn(x - hk)) / (2.0 * step[:, None])
        return out

    return jac


def fd_column_jacobians(fn: Callable[[np.ndarray], np.ndarray], dim: int):
    """Central-difference Jacobians of each diffusion column."""

    def jacs(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = x.shape[0]
        step = FD_STEP_SCALE * (1.0 + np.linalg.norm(x, axis=-1))
        out = np.empty((m, dim, dim, dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = 1.0
            hk = step[:, None] * e
            dcol = (fn(x + hk) - fn(x - hk)) / (2.0 * step[:, None, None])
            # dcol[p, j, i] = d sigma_{j i} / d x_k; reorder to [p, i, j, k]
            out[:, :, :, k] = np.swapaxes(dcol, 1, 2)
        return out

    return jacs


def unit_directions(dim: int, seed: int = DIRECTION_SEED) -> np.ndarray:
    """Fixed direction set of size 2*dim + 16: axes, diagonals, then
    pseudo-random unit vectors from a pinned counter-based stream."""
    count = 2 * dim + 16
    dirs = [np.eye(dim)[k] for k in range(dim)]
    diag = np.ones(dim) / np.sqrt(dim)
    dirs.append(diag)
    if dim > 1:
        alt = np.array([(-1.0) ** k for k in range(dim)]) / np.sqrt(dim)
        dirs.append(alt)
    rng = np.random.Generator(np.random.Philox(key=[seed, dim]))
    while len(dirs) < count:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
        if n > 1e-12:
            dirs.append(v / n)
    return np.array(dirs[:count])


def default_audit_points(dim: int, radius: float = 8.0, n_points: int = 256,
                         seed: int = DIRECTION_SEED + 1) -> np.ndarray:
    """Deterministic audit sample: origin, axis rays, and scattered points
    filling a ball of the given radius."""
    pts = [np.zeros(dim)]
    radii = np.array([0.25, 0.5, 1.0, 2.0, 4.0, radius * 0.75, radius])
    for r in radii:
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = 1.0
            pts.append(r * e)
            pts.append(-r * e)
    rng = np.random.Generator(np.random.Philox(key=[seed, dim]))
    while len(pts) < n_points:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
        if n > 1e-12:
            u = rng.uniform() ** (1.0 / dim)
            pts.append(radius * u * v / n)
    return np.array(pts[:n_points])


@dataclass(frozen=True)
class HypothesisReport:
    h1_max_residual: float
    h2_max_residual: float
    h3_min_eigenvalue: float
    n_points: int
    worst_point: np.ndarray
    tol: float = 1e-9
    details: dict = field(default_factory=dict)

    @property
    def h1_ok(self) -> bool:
        return self.h1_max_residual <= self.tol

    @property
    def h2_ok(self) -> bool:
        return self.h2_max_residual <= self.tol

    @property
    def h3_ok(self) -> bool:
        # reported value is min over the sample of lambda_min(a) - nu
        return self.h3_min_eigenvalue >= -self.tol

    @property
    def passed(self) -> bool:
        return self.h1_ok and self.h2_ok and self.h3_ok

    def summary(self) -> str:
        flag = lambda ok: "ok" if ok else "VIOLATED"
        return (
            f"H1 max residual {self.h1_max_residual:.6g} [{flag(self.h1_ok)}]  "
            f"H2 max residual {self.h2_max_residual:.6g} [{flag(self.h2_ok)}]  "
            f"H3 min eig - nu {self.h3_min_eigenvalue:.6g} [{flag(self.h3_ok)}]  "
            f"({self.n_points} points)"
        )


def check_hypotheses(model: SdeModel, points: Optional[np.ndarray] = None,
                     radius: float = 8.0, n_points: int = 256,
                     tol: float = 1e-9) -> HypothesisReport:
    """Audit H1-H3 on a point sample and report worst residuals.

    H2 is evaluated against the fixed unit-direction set (axes, diagonals,
    and pinned pseudo-random directions, 2*dim + 16 in total).
    """
    if points is None:
        points = default_audit_points(model.dim, radius=radius, n_points=n_points)
    x = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = x.shape
    if d != model.dim:
        raise ValueError(f"points have dim {d}, model has dim {model.dim}")
    w = model.weight

    b = model.drift(x)
    sig = model.diffusion(x)
    a = sig @ np.swapaxes(sig, -1, -2)
    sq = np.sum(x * x, axis=-1)
    pow_gamma = np.power(1.0 + sq, w.gamma)

    # H1
    lhs1 = (
        2.0 * np.sum(b * x, axis=-1)
        + np.trace(a, axis1=-2, axis2=-1)
        + 8.0 * w.c0 * np.einsum("pij,pj,pi->p", a, x, x) / pow_gamma
    )
    res1 = lhs1 - model.lyapunov_l * pow_gamma

    # H2 over the direction set
    dirs = unit_directions(model.dim)
    jb = model.drift_jac()(x)
    js = model.diffusion_jacs()(x)
    v = w.v_from_sq(sq)
    db_h = np.einsum("pjk,hk->phj", jb, dirs)
    ds_h = np.einsum("pijk,hk->phij", js, dirs)
    lhs2 = 2.0 * np.linalg.norm(db_h, axis=-1) + np.sum(ds_h * ds_h, axis=(-1, -2))
    res2 = np.max(lhs2, axis=1) - v

    # H3
    eigs = np.linalg.eigvalsh(a)
    res3 = eigs[:, 0] - model.nu

    i1 = int(np.argmax(res1))
    i2 = int(np.argmax(res2))
    i3 = int(np.argmin(res3))
    scores = np.array([res1[i1], res2[i2], -res3[i3]])
    worst = x[[i1, i2, i3][int(np.argmax(scores))]]
    return HypothesisReport(
        h1_max_residual=float(res1[i1]),
        h2_max_residual=float(res2[i2]),
        h3_min_eigenvalue=float(np.min(res3)),
        n_points=m,
        worst_point=worst,
        tol=tol,
        details={
            "h1_argmax": x[i1].copy(),
            "h2_argmax": x[i2].copy(),
            "h3_argmin": x[i3].copy(),
        },
    )


def scalar_model(b, sigma, db=None, dsigma=None, *, weight: WeightSpec,
                 lyapunov_l: float, nu: float, name: str,
                 constant_diffusion: bool = False) -> SdeModel:
    """Build a 1-d model from scalar vectorized callables."""

    def drift(x):
        return np.asarray(b(x[..., 0]))[..., None]

    def diffusion(x):
        return np.asarray(sigma(x[..., 0]))[..., None, None]

    drift_jacobian = None
    if db is not None:
        def drift_jacobian(x):
            return np.asarray(db(x[..., 0]))[..., None, None]

    diffusion_jacobians = None
    if dsigma is not None:
        def diffusion_jacobians(x):
            return np.asarray(dsigma(x[..., 0]))[..., None, None, None]

    return SdeModel(
        dim=1,
        nu=nu,
        drift=drift,
        diffusion=diffusion,
        weight=weight,
        lyapunov_l=lyapunov_l,
        drift_jacobian=drift_jacobian,
        diffusion_jacobians=diffusion_jacobians,
        constant_diffusion=constant_diffusion,
        name=name,
    )
