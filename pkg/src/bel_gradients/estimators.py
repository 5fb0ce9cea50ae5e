"""Monte Carlo estimators for semigroup values, gradients, and moment bounds.

Most quantities here are expectations over the path ensembles produced by
the simulate module:

  * P_t phi(x) = E[phi(X_t)], the plain semigroup;
  * S_t phi(x) = E[phi(X_t) e^{-beta(t)}] with beta(t) = int_0^t V(X(s)) ds,
    the discounted semigroup;
  * directional gradients of both, estimated three independent ways:
    a closed martingale representation for D_h S_t, common-random-number
    finite differences, and a variation-of-constants composition that
    rebuilds D_h P_t from discounted pieces.

The martingale representation of the discounted gradient is

  D_h S_t phi(x) = E[ phi(X_t) e^{-beta(t)}
                      ( (1/t) int_0^t <sigma^{-1}(X_s) eta_s, dW_s>
                        - int_0^t (1 - s/t) <grad V(X_s), eta_s> ds ) ]

with eta the tangent process started at h.  Both path integrals are
accumulated by the simulator; this module only reweights endpoints.

The variation-of-constants route uses

  P_t phi = S_t phi + int_0^t S_{t-s}( V . P_s phi ) ds,

differentiated in x through the S factors.  The integrand has an
integrable 1/sqrt(t-s) endpoint, removed by substituting s = t(1 - u^2)
and applying the midpoint rule in u; each node needs inner simulations
for P_s phi at the outer endpoints, estimated with per-path independent
streams so node standard errors stay valid.

Every estimator reduces samples with math.fsum, so results do not depend
on summation order or worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .models import SdeModel, default_audit_points
from .simulate import (
    SimConfig,
    SimulationError,
    simulate_ensemble,
    simulate_independent_starts,
    simulate_many_starts,
)

H1_ESTIMATE_PAD = 1.1
DEFAULT_FD_EPS = 1e-3


def _stage_seed(master_seed: int, *tags: int) -> int:
    """Deterministic sub-seed for an estimation stage that must be
    independent of the caller's stream."""
    ss = np.random.SeedSequence([int(master_seed), *[int(t) for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo mean with its standard error."""

    value: float
    stderr: float
    n_paths: int

    def interval(self, z: float = 3.0) -> tuple[float, float]:
        return (self.value - z * self.stderr, self.value + z * self.stderr)

    def agrees_with(self, other: "Estimate", z: float = 3.0) -> bool:
        """|difference| within z combined standard errors."""
        gap = abs(self.value - other.value)
        return gap <= z * math.hypot(self.stderr, other.stderr)


def estimate_from_samples(samples: np.ndarray) -> Estimate:
    arr = np.asarray(samples, dtype=float).ravel()
    n = arr.size
    if n < 2:
        raise ValueError("need at least two samples")
    mean = math.fsum(arr.tolist()) / n
    dev = arr - mean
    var = math.fsum((dev * dev).tolist()) / (n - 1)
    return Estimate(value=mean, stderr=math.sqrt(var / n), n_paths=n)


# -- test functions -----------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A bounded observable with a recorded sup bound.

    The profile acts on the first coordinate so the same observable works
    in any dimension.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    sup_norm: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(np.asarray(x, dtype=float))))


def cosine(lam: float = 1.0) -> TestFunction:
    return TestFunction(f"cos{lam:g}", lambda x: np.cos(lam * x[..., 0]), 1.0)


def sine_pi() -> TestFunction:
    return TestFunction("sinpi", lambda x: np.sin(np.pi * x[..., 0]), 1.0)


def tanh_profile() -> TestFunction:
    return TestFunction("tanh", lambda x: np.tanh(x[..., 0]), 1.0)


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction(f"const{c:g}", lambda x: np.full(x.shape[:-1], float(c)),
                        abs(float(c)))


def standard_test_functions() -> tuple[TestFunction, ...]:
    """The three bounded observables used by the ratio sweeps."""
    return (cosine(1.0), sine_pi(), tanh_profile())


def get_test_function(name: str, param: Optional[float] = None) -> TestFunction:
    if name == "cos":
        return cosine(1.0 if param is None else param)
    if name == "sin-pi":
        return sine_pi()
    if name == "tanh":
        return tanh_profile()
    if name == "const":
        return constant(1.0 if param is None else param)
    raise KeyError(f"unknown test function {name!r}; "
                   "known: cos, sin-pi, tanh, const")


# -- semigroup values ---------------------------------------------------------


def estimate_p(model, x0, phi: TestFunction, cfg: SimConfig, *,
               workers: Optional[int] = None) -> Estimate:
    """E[phi(X_t)] at t = cfg.t_final."""
    ens = simulate_ensemble(model, x0, cfg, with_tangent=False, workers=workers)
    ens.require_clean()
    return estimate_from_samples(phi(ens.x_final))


def estimate_s(model, x0, phi: TestFunction, cfg: SimConfig, *,
               workers: Optional[int] = None) -> Estimate:
    """E[phi(X_t) e^{-beta}] at t = cfg.t_final."""
    ens = simulate_ensemble(model, x0, cfg, with_tangent=False, workers=workers)
    ens.require_clean()
    return estimate_from_samples(phi(ens.x_final) * np.exp(-ens.beta_final))


def tangent_weight_statistic(model, x0, h, cfg: SimConfig, *,
                             workers: Optional[int] = None) -> Estimate:
    """Sample mean of e^{-beta} |eta|^2, which should not exceed |h|^2."""
    ens = simulate_ensemble(model, x0, cfg, h=h, with_tangent=True,
                            workers=workers)
    ens.require_clean()
    stat = np.exp(-ens.beta_final) * np.sum(ens.eta_final ** 2, axis=-1)
    return estimate_from_samples(stat)


# -- gradients ----------------------------------------------------------------


@dataclass(frozen=True)
class BelGradient:
    """Martingale-representation estimate of D_h S_t phi, with its two parts."""

    total: Estimate
    martingale_term: Estimate
    potential_term: Estimate


def bel_gradient_s(model, x0, h, phi: TestFunction, cfg: SimConfig, *,
                   workers: Optional[int] = None) -> BelGradient:
    ens = simulate_ensemble(model, x0, cfg, h=h, with_tangent=True,
                            workers=workers)
    ens.require_clean()
    t = cfg.t_final
    base = phi(ens.x_final) * np.exp(-ens.beta_final)
    part1 = base * ens.bel_integral / t
    part2 = -base * ens.i2_integral
    return BelGradient(
        total=estimate_from_samples(part1 + part2),
        martingale_term=estimate_from_samples(part1),
        potential_term=estimate_from_samples(part2),
    )


def _fd_endpoints(model, x0, h, cfg: SimConfig, eps: float,
                  workers: Optional[int]):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    h = np.asarray(h, dtype=float).reshape(-1)
    starts = np.stack([x0 - eps * h, x0 + eps * h])
    xf, beta, exploded = simulate_many_starts(model, starts, cfg,
                                              workers=workers)
    if exploded.any():
        raise SimulationError(
            f"{int(exploded.sum())} paths exploded during finite differencing"
        )
    return xf, beta


def fd_gradient_p(model, x0, h, phi: TestFunction, cfg: SimConfig, *,
                  eps: float = DEFAULT_FD_EPS,
                  workers: Optional[int] = None) -> Estimate:
    """Central difference of P_t phi along h under common random numbers."""
    xf, _ = _fd_endpoints(model, x0, h, cfg, eps, workers)
    diffs = (phi(xf[1]) - phi(xf[0])) / (2.0 * eps)
    return estimate_from_samples(diffs)


def fd_gradient_s(model, x0, h, phi: TestFunction, cfg: SimConfig, *,
                  eps: float = DEFAULT_FD_EPS,
                  workers: Optional[int] = None) -> Estimate:
    """Central difference of S_t phi along h under common random numbers."""
    xf, beta = _fd_endpoints(model, x0, h, cfg, eps, workers)
    diffs = (phi(xf[1]) * np.exp(-beta[1]) - phi(xf[0]) * np.exp(-beta[0]))
    return estimate_from_samples(diffs / (2.0 * eps))


@dataclass(frozen=True)
class DuhamelNode:
    s: float
    tau: float
    quad_weight: float
    estimate: Estimate


@dataclass(frozen=True)
class DuhamelGradient:
    """D_h P_t phi rebuilt from discounted pieces.

    total = s_part.total + sum_j quad_weight_j * node_j; the node standard
    errors enter the total in quadrature.  The quadrature discretization
    itself is a bias not covered by stderr; callers choose n_nodes.
    """

    total: Estimate
    s_part: BelGradient
    nodes: tuple[DuhamelNode, ...]


def duhamel_gradient_p(model, x0, h, phi: TestFunction, cfg: SimConfig, *,
                       n_nodes: int = 8,
                       inner_paths: int = 128,
                       inner_dt: Optional[float] = None,
                       outer_paths: Optional[int] = None,
                       workers: Optional[int] = None) -> DuhamelGradient:
    """Estimate D_h P_t phi via the variation-of-constants identity.

    Each midpoint node u_j in (0,1) contributes the gradient of the
    discounted semigroup at horizon tau_j = t u_j^2 applied to the function
    y -> V(y) P_{s_j} phi(y), s_j = t - tau_j, whose values at the outer
    endpoints are themselves estimated by inner simulations with
    per-path independent streams.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if inner_paths < 2:
        raise ValueError("inner_paths must be >= 2")
    t = cfg.t_final

    s_cfg = replace(cfg, master_seed=_stage_seed(cfg.master_seed, 101))
    s_part = bel_gradient_s(model, x0, h, phi, s_cfg, workers=workers)

    n_out = cfg.n_paths if outer_paths is None else int(outer_paths)
    nodes = []
    total_value = s_part.total.value
    total_var = s_part.total.stderr ** 2
    for j in range(n_nodes):
        u = (j + 0.5) / n_nodes
        tau = t * u * u
        s_j = t - tau
        quad_w = 2.0 * t * u / n_nodes

        outer_cfg = replace(
            cfg,
            t_final=tau,
            dt=min(cfg.dt, tau),
            n_paths=n_out,
            master_seed=_stage_seed(cfg.master_seed, 211, j),
        )
        outer = simulate_ensemble(model, x0, outer_cfg, h=h,
                                  with_tangent=True, workers=workers)
        outer.require_clean()

        dt_in = cfg.dt if inner_dt is None else float(inner_dt)
        inner_cfg = replace(
            cfg,
            t_final=s_j,
            dt=min(dt_in, s_j),
            n_paths=n_out * inner_paths,
            master_seed=_stage_seed(cfg.master_seed, 307, j),
        )
        inner_starts = np.repeat(outer.x_final, inner_paths, axis=0)
        inner_xf, _, inner_exploded = simulate_independent_starts(
            model, inner_starts, inner_cfg, workers=workers)
        if inner_exploded.any():
            raise SimulationError("inner paths exploded in the Duhamel stage")
        psi = phi(inner_xf).reshape(n_out, inner_paths).mean(axis=1)

        g = model.potential(outer.x_final) * psi
        weight = np.exp(-outer.beta_final) * (
            outer.bel_integral / tau - outer.i2_integral)
        node_est = estimate_from_samples(g * weight)
        nodes.append(DuhamelNode(s=s_j, tau=tau, quad_weight=quad_w,
                                 estimate=node_est))
        total_value += quad_w * node_est.value
        total_var += (quad_w * node_est.stderr) ** 2

    total = Estimate(value=total_value, stderr=math.sqrt(total_var),
                     n_paths=s_part.total.n_paths)
    return DuhamelGradient(total=total, s_part=s_part, nodes=tuple(nodes))


# -- moment audits ------------------------------------------------------------


def h1_grid_constant(model, *, radius: Optional[float] = None,
                     n_points: int = 257) -> float:
    """Grid estimate of the drift-condition constant: the padded sup of

        [2 <b, x> + tr a + 8 c0 <a x, x> / (1+|x|^2)^gamma] / (1+|x|^2)^gamma.

    Used for models that do not declare a certified constant (the clipped
    variants); deterministic given the model and radius.
    """
    if radius is None:
        radius = max(8.0, 2.5 * getattr(model, "n", 0.0))
    pts = default_audit_points(model.dim, radius=radius, n_points=n_points)
    b = model.drift(pts)
    sig = model.diffusion(pts)
    a = sig @ np.swapaxes(sig, -1, -2)
    w = model.weight
    sq = np.sum(pts * pts, axis=-1)
    pow_gamma = (1.0 + sq) ** w.gamma
    lhs = (2.0 * np.sum(b * pts, axis=-1)
           + np.trace(a, axis1=-2, axis2=-1)
           + 8.0 * w.c0 * np.einsum("pij,pj,pi->p", a, pts, pts) / pow_gamma)
    return H1_ESTIMATE_PAD * max(float(np.max(lhs / pow_gamma)), 1e-9)


@dataclass(frozen=True)
class MomentAuditRow:
    label: str
    observed: float
    stderr: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class MomentAudit:
    model_name: str
    x0: np.ndarray
    t: float
    lyapunov_l: float
    rows: tuple[MomentAuditRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    def summary(self) -> str:
        lines = [
            f"moment audit: {self.model_name} at t={self.t:g}, "
            f"|x|={float(np.linalg.norm(self.x0)):g}, L={self.lyapunov_l:g}"
        ]
        for r in self.rows:
            flag = "ok" if r.ok else "VIOLATED"
            lines.append(
                f"  {r.label}: {r.observed:.6g} (stderr {r.stderr:.2g}) "
                f"<= {r.bound:.6g} [{flag}]"
            )
        return "\n".join(lines)


def moment_audit(model, x0, cfg: SimConfig, *,
                 lyapunov_l: Optional[float] = None,
                 workers: Optional[int] = None) -> MomentAudit:
    """Check the exponential moment bounds on the path potential.

    With V the model's potential (the clipped level-c1 variant for clipped
    models) and L the drift-condition constant, the audited bounds are

      E[V(X_t)]   <=  c1   e^{c0 L t} V_base(x)
      E[V^4(X_t)] <=  c1^4 e^{4 c0 L t} V_base^4(x)

    where c1 = 1 and V = V_base for plain models.  A row passes when the
    sample mean does not exceed its bound by more than three stderr.
    """
    if lyapunov_l is None:
        declared = getattr(model, "lyapunov_l", None)
        lyap = float(declared) if declared is not None else h1_grid_constant(model)
    else:
        lyap = float(lyapunov_l)

    x0 = np.asarray(x0, dtype=float).reshape(-1)
    ens = simulate_ensemble(model, x0, cfg, with_tangent=False, workers=workers)
    ens.require_clean()
    v_t = model.potential(ens.x_final)

    w = model.weight
    c0 = w.c0
    c1 = float(getattr(model, "c1", 1.0))
    t = cfg.t_final
    v_x = float(w.v(x0[None, :])[0])

    first = estimate_from_samples(v_t)
    fourth = estimate_from_samples(v_t ** 4)
    bound1 = c1 * math.exp(c0 * lyap * t) * v_x
    bound4 = (c1 ** 4) * math.exp(4.0 * c0 * lyap * t) * (v_x ** 4)
    rows = (
        MomentAuditRow("E[V(X_t)]", first.value, first.stderr, bound1,
                       first.value <= bound1 + 3.0 * first.stderr),
        MomentAuditRow("E[V^4(X_t)]", fourth.value, fourth.stderr, bound4,
                       fourth.value <= bound4 + 3.0 * fourth.stderr),
    )
    return MomentAudit(model_name=model.name, x0=x0, t=t, lyapunov_l=lyap,
                       rows=rows)


# -- weighted-ratio sweeps ----------------------------------------------------


@dataclass(frozen=True)
class RatioRow:
    t: float
    x0: np.ndarray
    phi_name: str
    gradient: float
    stderr: float
    weighted_ratio: float
    unweighted_ratio: float


@dataclass(frozen=True)
class RatioSweep:
    model_name: str
    rows: tuple[RatioRow, ...]
    envelope_by_t: dict
    weighted_constant: float
    envelope_stability: float

    def summary(self) -> str:
        lines = [
            f"ratio sweep: {self.model_name}, "
            f"weighted constant {self.weighted_constant:.6g}, "
            f"envelope max/min {self.envelope_stability:.3g}"
        ]
        for t in sorted(self.envelope_by_t):
            lines.append(f"  t={t:g}: envelope {self.envelope_by_t[t]:.6g}")
        return "\n".join(lines)


def ratio_sweep(model, xs: Sequence, ts: Sequence[float],
                phis: Sequence[TestFunction], cfg: SimConfig, *,
                h=None, eps: float = DEFAULT_FD_EPS,
                workers: Optional[int] = None) -> RatioSweep:
    """Scan sqrt(t nu) |D_h P_t phi| / (V^2(x) ||phi||) over a grid.

    One coupled simulation per t covers every start and both finite
    difference sides; observables are evaluated on the shared endpoints.
    Also records the unweighted proxy sqrt(t) |D| / ||phi||.
    """
    xs = [np.asarray(x, dtype=float).reshape(-1) for x in xs]
    if h is None:
        h = np.zeros(model.dim)
        h[0] = 1.0
    else:
        h = np.asarray(h, dtype=float).reshape(-1)

    rows = []
    by_t: dict = {}
    for t_idx, t in enumerate(ts):
        run_cfg = replace(cfg, t_final=float(t), dt=min(cfg.dt, float(t)),
                          master_seed=_stage_seed(cfg.master_seed, 401, t_idx))
        starts = []
        for x in xs:
            starts.append(x - eps * h)
            starts.append(x + eps * h)
        xf, _, exploded = simulate_many_starts(model, np.array(starts),
                                               run_cfg, workers=workers)
        if exploded.any():
            raise SimulationError("paths exploded during the ratio sweep")
        env = 0.0
        for i, x in enumerate(xs):
            v_sq = float(model.weight.v(x[None, :])[0]) ** 2
            for phi in phis:
                diffs = (phi(xf[2 * i + 1]) - phi(xf[2 * i])) / (2.0 * eps)
                est = estimate_from_samples(diffs)
                grad = abs(est.value)
                weighted = math.sqrt(t * model.nu) * grad / (v_sq * phi.sup_norm)
                unweighted = math.sqrt(t) * grad / phi.sup_norm
                rows.append(RatioRow(
                    t=float(t), x0=x, phi_name=phi.name,
                    gradient=est.value, stderr=est.stderr,
                    weighted_ratio=weighted, unweighted_ratio=unweighted,
                ))
                env = max(env, weighted)
        by_t[float(t)] = env

    envs = list(by_t.values())
    stability = max(envs) / min(envs) if min(envs) > 0 else math.inf
    return RatioSweep(
        model_name=model.name,
        rows=tuple(rows),
        envelope_by_t=by_t,
        weighted_constant=max(envs),
        envelope_stability=stability,
    )


@dataclass(frozen=True)
class GrowthPoint:
    """Folded finite-difference gradient at one probe center."""

    index: int
    center: np.ndarray
    level: Estimate
    proxy: float
    proxy_stderr: float
    weighted_ratio: float


@dataclass(frozen=True)
class GrowthStep:
    lower: int
    upper: int
    difference: Estimate
    resolved: bool


@dataclass(frozen=True)
class GradientGrowth:
    """Coupled comparison of |D_h P_t phi| across a ladder of probe points.

    Every start shares the same driving increments, so each consecutive
    difference is estimated from per-path paired samples; its stderr is the
    paired one, which is what makes sub-percent growth resolvable at all.
    """

    model_name: str
    t: float
    phi_name: str
    z: float
    points: tuple[GrowthPoint, ...]
    steps: tuple[GrowthStep, ...]

    @property
    def monotone(self) -> bool:
        return all(s.difference.value > 0.0 for s in self.steps)

    @property
    def passed(self) -> bool:
        return self.monotone and all(s.resolved for s in self.steps)

    def summary(self) -> str:
        lines = [
            f"gradient growth: {self.model_name}, t={self.t:g}, "
            f"phi={self.phi_name}, z={self.z:g}"
        ]
        for p in self.points:
            lines.append(
                f"  n={p.index}: sqrt(t)|D| = {p.proxy:.6g} "
                f"+- {p.proxy_stderr:.2g}, weighted {p.weighted_ratio:.3g}"
            )
        for s in self.steps:
            d = s.difference
            zval = d.value / d.stderr if d.stderr > 0 else math.inf
            lines.append(
                f"  step {s.lower}->{s.upper}: diff {d.value:.6g} "
                f"+- {d.stderr:.2g} (z={zval:.2f}) "
                f"{'resolved' if s.resolved else 'NOT RESOLVED'}"
            )
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def gradient_growth(model, ns: Sequence[int], t: float, phi: TestFunction,
                    cfg: SimConfig, *, centers=None, signs=None, h=None,
                    eps: float = DEFAULT_FD_EPS, z: float = 3.0,
                    workers: Optional[int] = None) -> GradientGrowth:
    """Measure growth of the unweighted gradient proxy along probe centers.

    ``ns`` are integer labels for the probe points; ``centers`` defaults to
    the labels themselves embedded as 1-d starts. ``signs[i]`` folds out a
    known deterministic sign of D_h P_t phi at center i (for example the
    cos(pi n) alternation of d/dx P_t sin(pi x) at integer centers) so that
    "increases" compares magnitudes. All 2*len(ns) starts run in a single
    coupled ensemble; consecutive differences are paired per path.
    """
    ns = [int(n) for n in ns]
    if len(ns) < 2:
        raise ValueError("growth needs at least two probe points")
    if centers is None:
        if model.dim != 1:
            raise ValueError("centers must be given for dim > 1 models")
        centers = [np.array([float(n)]) for n in ns]
    else:
        centers = [np.asarray(c, dtype=float).reshape(-1) for c in centers]
    if len(centers) != len(ns):
        raise ValueError("centers and ns must have equal length")
    if signs is None:
        signs = [1.0] * len(ns)
    if len(signs) != len(ns):
        raise ValueError("signs and ns must have equal length")
    if h is None:
        h = np.zeros(model.dim)
        h[0] = 1.0
    else:
        h = np.asarray(h, dtype=float).reshape(-1)

    run_cfg = replace(cfg, t_final=float(t), dt=min(cfg.dt, float(t)),
                      master_seed=_stage_seed(cfg.master_seed, 509))
    starts = []
    for c in centers:
        starts.append(c - eps * h)
        starts.append(c + eps * h)
    xf, _, exploded = simulate_many_starts(model, np.array(starts), run_cfg,
                                           workers=workers)
    if exploded.any():
        raise SimulationError("paths exploded during the growth probe")

    folded = []
    points = []
    sqrt_t = math.sqrt(float(t))
    for i, (n, c) in enumerate(zip(ns, centers)):
        u = signs[i] * (phi(xf[2 * i + 1]) - phi(xf[2 * i])) / (2.0 * eps)
        est = estimate_from_samples(u)
        v_sq = float(model.weight.v(c[None, :])[0]) ** 2
        grad = abs(est.value)
        points.append(GrowthPoint(
            index=n, center=c, level=est,
            proxy=sqrt_t * grad / phi.sup_norm,
            proxy_stderr=sqrt_t * est.stderr / phi.sup_norm,
            weighted_ratio=math.sqrt(float(t) * model.nu) * grad
            / (v_sq * phi.sup_norm),
        ))
        folded.append(u)

    steps = []
    for i in range(len(ns) - 1):
        diff = estimate_from_samples(folded[i + 1] - folded[i])
        steps.append(GrowthStep(
            lower=ns[i], upper=ns[i + 1], difference=diff,
            resolved=diff.value > z * diff.stderr,
        ))
    return GradientGrowth(
        model_name=model.name, t=float(t), phi_name=phi.name, z=float(z),
        points=tuple(points), steps=tuple(steps),
    )
