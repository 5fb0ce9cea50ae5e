"""Euler-Maruyama simulation of augmented paths.

Alongside the state X the stepper carries, per path,

  * the first-variation (tangent) process eta, d eta = Db(X) eta dt
    + sum_i D sigma_i(X) eta dW^i, started at a direction h;
  * the discount integral beta(t) = int_0^t V(X(s)) ds for the model's
    potential (left-endpoint rule);
  * the stochastic integral int_0^t <sigma(X)^{-1} eta, dW> used by the
    Bismut-Elworthy-Li estimator;
  * the weighted integral int_0^t (1 - s/t) <grad V(X), eta> ds;
  * running maxima of V(X) and |X|.

Reproducibility contract: path k draws all its Gaussian increments from a
dedicated counter-based stream Philox(key=(master_seed, k)), so results are
bit-identical for any worker count and any path-block partition.  Reductions
over paths are performed in fixed index order by the estimators.

Paths whose state leaves |x| <= 1e8 (or turns non-finite) are marked exploded
and frozen; estimators refuse to average ensembles containing exploded paths.
"""
from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EXPLOSION_RADIUS = 1e8
SINGULAR_RCOND = 1e-12
PATH_BLOCK = 4096
WORKERS_ENV_VAR = "BEL_GRADIENTS_WORKERS"
ENSEMBLE_MAGIC = b"BELGRAD-ENSEMBLE-1\n"


class SimulationError(RuntimeError):
    pass


class SingularDiffusionError(SimulationError):
    """sigma(X) was numerically singular where its inverse was required."""


@dataclass(frozen=True)
class SimConfig:
    t_final: float
    dt: float
    n_paths: int
    master_seed: int
    scheme: str = "euler_maruyama"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_final) and self.t_final > 0.0):
            raise ValueError("t_final must be positive and finite")
        if not (math.isfinite(self.dt) and 0.0 < self.dt <= self.t_final):
            raise ValueError("dt must satisfy 0 < dt <= t_final")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        if self.scheme != "euler_maruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def step_sizes(self) -> np.ndarray:
        """Full steps of dt with one final partial step covering t_final."""
        ratio = self.t_final / self.dt
        k = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 else int(math.ceil(ratio))
        k = max(k, 1)
        last = self.t_final - (k - 1) * self.dt
        if last <= 0.0:  # guard against accumulated rounding
            k -= 1
            last = self.t_final - (k - 1) * self.dt
        sizes = np.full(k, self.dt)
        sizes[-1] = last
        return sizes


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV_VAR} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def path_normals(master_seed: int, first_path: int, n_paths: int,
                 n_steps: int, dim: int) -> np.ndarray:
    """Standard normals for a contiguous path block, shape (B, K, d).

    Path k (global index) always receives the same numbers regardless of how
    blocks are partitioned.
    """
    out = np.empty((n_paths, n_steps, dim))
    for j in range(n_paths):
        gen = np.random.Generator(
            np.random.Philox(key=[master_seed, first_path + j])
        )
        out[j] = gen.standard_normal((n_steps, dim))
    return out


@dataclass
class PathEnsemble:
    """Final-time values of an ensemble of augmented paths."""

    model_name: str
    dim: int
    t_final: float
    dt: float
    n_steps: int
    master_seed: int
    x0: np.ndarray
    h: Optional[np.ndarray]
    x_final: np.ndarray
    beta_final: np.ndarray
    v_running_max: np.ndarray
    x_abs_max: np.ndarray
    exploded: np.ndarray
    eta_final: Optional[np.ndarray] = None
    bel_integral: Optional[np.ndarray] = None
    i2_integral: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.x_final.shape[0]

    @property
    def has_tangent(self) -> bool:
        return self.eta_final is not None

    def require_clean(self) -> None:
        bad = int(np.count_nonzero(self.exploded))
        if bad:
            raise SimulationError(
                f"{bad} of {self.n_paths} paths exploded (|x| > {EXPLOSION_RADIUS:g}); "
                "refusing to average"
            )


def _prepare_sigma_solver(model, x0: np.ndarray):
    """For constant-diffusion models, factor sigma once and reuse."""
    if not getattr(model, "constant_diffusion", False):
        return None
    sig = model.diffusion(x0[None, :])[0]
    svals = np.linalg.svd(sig, compute_uv=False)
    if svals[-1] <= SINGULAR_RCOND * max(svals[0], 1.0):
        raise SingularDiffusionError(
            f"constant diffusion of {model.name} is numerically singular"
        )
    return np.linalg.inv(sig)


def _solve_sigma(sig: np.ndarray, rhs: np.ndarray, model_name: str) -> np.ndarray:
    """Batched solve sigma z = rhs with a singularity guard."""
    d = sig.shape[-1]
    if d == 1:
        s = sig[..., 0, 0]
        if np.any(np.abs(s) <= SINGULAR_RCOND):
            raise SingularDiffusionError(f"diffusion of {model_name} vanished on a path")
        return rhs / s[..., None]
    svals = np.linalg.svd(sig, compute_uv=False)
    rcond = svals[..., -1] / np.maximum(svals[..., 0], 1e-300)
    if np.any(rcond <= SINGULAR_RCOND):
        raise SingularDiffusionError(
            f"diffusion of {model_name} numerically singular (rcond <= {SINGULAR_RCOND:g})"
        )
    try:
        return np.linalg.solve(sig, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularDiffusionError(str(exc)) from exc


def _simulate_block(model, x0, h, cfg: SimConfig, first_path: int, n_block: int,
                    with_tangent: bool, sig_inv_const):
    dim = model.dim
    sizes = cfg.step_sizes()
    k_steps = len(sizes)
    normals = path_normals(cfg.master_seed, first_path, n_block, k_steps, dim)

    x0 = np.asarray(x0, dtype=float)
    x = x0.copy() if x0.ndim == 2 else np.tile(x0, (n_block, 1))
    beta = np.zeros(n_block)
    v_max = model.potential(x).copy()
    x_max = np.linalg.norm(x, axis=-1)
    alive = np.ones(n_block, dtype=bool)
    const_sig = model.diffusion(x[:1])[0] if sig_inv_const is not None else None

    if with_tangent:
        eta = np.tile(np.asarray(h, dtype=float), (n_block, 1))
        bel = np.zeros(n_block)
        i2 = np.zeros(n_block)
        jac_b = model.drift_jac()
        jac_s = None if model.constant_diffusion else model.diffusion_jacs()
    else:
        eta = bel = i2 = None

    t_final = cfg.t_final
    s_left = 0.0
    for j in range(k_steps):
        dt_j = sizes[j]
        dw = normals[:, j, :] * math.sqrt(dt_j)

        b = model.drift(x)
        sig = None if sig_inv_const is not None else model.diffusion(x)
        v = model.potential(x)
        np.maximum(v_max, v, out=v_max)

        beta = np.where(alive, beta + v * dt_j, beta)

        if with_tangent:
            if sig_inv_const is not None:
                z = eta @ sig_inv_const.T
            else:
                z = _solve_sigma(sig, eta, model.name)
            bel = np.where(alive, bel + np.sum(z * dw, axis=-1), bel)

            gv = model.potential_grad(x)
            i2 = np.where(
                alive,
                i2 + (1.0 - s_left / t_final) * np.sum(gv * eta, axis=-1) * dt_j,
                i2,
            )

            d_eta = np.einsum("pjk,pk->pj", jac_b(x), eta) * dt_j
            if jac_s is not None:
                d_eta = d_eta + np.einsum("pijk,pk,pi->pj", jac_s(x), eta, dw)
            eta = np.where(alive[:, None], eta + d_eta, eta)

        if const_sig is not None:
            x_new = x + b * dt_j + np.einsum("jk,pk->pj", const_sig, dw)
        else:
            x_new = x + b * dt_j + np.einsum("pjk,pk->pj", sig, dw)
        radius = np.linalg.norm(x_new, axis=-1)
        ok = np.isfinite(radius) & (radius <= EXPLOSION_RADIUS)
        newly_dead = alive & ~ok
        if np.any(newly_dead):
            alive = alive & ok
        x = np.where(alive[:, None], x_new, x)
        x_max = np.where(alive, np.maximum(x_max, radius), x_max)
        s_left += dt_j

    v_end = model.potential(x)
    np.maximum(v_max, np.where(alive, v_end, v_max), out=v_max)
    return x, beta, v_max, x_max, ~alive, eta, bel, i2


def simulate_ensemble(model, x0, cfg: SimConfig, h=None, *,
                      with_tangent: bool = True,
                      workers: Optional[int] = None) -> PathEnsemble:
    """Simulate cfg.n_paths augmented paths of the model started at x0.

    h is the initial tangent direction (required when with_tangent).  Paths
    are partitioned into fixed blocks handled by a thread pool; outputs do
    not depend on the worker count.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != model.dim:
        raise ValueError(f"x0 has dim {x0.shape[0]}, model has dim {model.dim}")
    if with_tangent:
        if h is None:
            raise ValueError("tangent simulation requires a direction h")
        h = np.asarray(h, dtype=float).reshape(-1)
        if h.shape[0] != model.dim:
            raise ValueError(f"h has dim {h.shape[0]}, model has dim {model.dim}")

    sig_inv_const = _prepare_sigma_solver(model, x0)
    n = cfg.n_paths
    dim = model.dim
    sizes = cfg.step_sizes()

    x_final = np.empty((n, dim))
    beta = np.empty(n)
    v_max = np.empty(n)
    x_max = np.empty(n)
    exploded = np.empty(n, dtype=bool)
    eta_final = np.empty((n, dim)) if with_tangent else None
    bel = np.empty(n) if with_tangent else None
    i2 = np.empty(n) if with_tangent else None

    blocks = [(start, min(PATH_BLOCK, n - start)) for start in range(0, n, PATH_BLOCK)]

    def run_block(args):
        start, count = args
        res = _simulate_block(model, x0, h, cfg, start, count, with_tangent,
                              sig_inv_const)
        sl = slice(start, start + count)
        x_final[sl], beta[sl], v_max[sl], x_max[sl], exploded[sl] = res[:5]
        if with_tangent:
            eta_final[sl], bel[sl], i2[sl] = res[5:]

    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(blocks) == 1:
        for blk in blocks:
            run_block(blk)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_block, blocks))

    return PathEnsemble(
        model_name=model.name,
        dim=dim,
        t_final=cfg.t_final,
        dt=cfg.dt,
        n_steps=len(sizes),
        master_seed=cfg.master_seed,
        x0=x0,
        h=None if h is None else np.array(h, dtype=float),
        x_final=x_final,
        beta_final=beta,
        v_running_max=v_max,
        x_abs_max=x_max,
        exploded=exploded,
        eta_final=eta_final,
        bel_integral=bel,
        i2_integral=i2,
    )


def simulate_many_starts(model, starts, cfg: SimConfig, *,
                         workers: Optional[int] = None):
    """State-only simulation from several starts under shared increments.

    Returns (x_final, beta_final, exploded) with leading axis over starts.
    Because every start sees identical Gaussian increments, differences
    across starts are common-random-number couplings.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n_starts, dim = starts.shape
    if dim != model.dim:
        raise ValueError("start dimension mismatch")
    n = cfg.n_paths
    sizes = cfg.step_sizes()
    k_steps = len(sizes)
    t_final = cfg.t_final

    const_sig = None
    if getattr(model, "constant_diffusion", False):
        const_sig = model.diffusion(starts[:1])[0]

    x_final = np.empty((n_starts, n, dim))
    beta = np.empty((n_starts, n))
    exploded = np.empty((n_starts, n), dtype=bool)

    blocks = [(s, min(PATH_BLOCK, n - s)) for s in range(0, n, PATH_BLOCK)]

    def run_block(args):
        start, count = args
        normals = path_normals(cfg.master_seed, start, count, k_steps, dim)
        x = np.repeat(starts[:, None, :], count, axis=1)  # (S, B, d)
        bta = np.zeros((n_starts, count))
        alive = np.ones((n_starts, count), dtype=bool)
        for j in range(k_steps):
            dt_j = sizes[j]
            dw = normals[:, j, :] * math.sqrt(dt_j)
            for s in range(n_starts):
                xs = x[s]
                b = model.drift(xs)
                v = model.potential(xs)
                bta[s] = np.where(alive[s], bta[s] + v * dt_j, bta[s])
                if const_sig is not None:
                    x_new = xs + b * dt_j + np.einsum("jk,pk->pj", const_sig, dw)
                else:
                    sig = model.diffusion(xs)
                    x_new = xs + b * dt_j + np.einsum("pjk,pk->pj", sig, dw)
                radius = np.linalg.norm(x_new, axis=-1)
                ok = np.isfinite(radius) & (radius <= EXPLOSION_RADIUS)
                alive[s] &= ok
                x[s] = np.where(alive[s][:, None], x_new, xs)
        sl = slice(start, start + count)
        x_final[:, sl] = x
        beta[:, sl] = bta
        exploded[:, sl] = ~alive

    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(blocks) == 1:
        for blk in blocks:
            run_block(blk)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_block, blocks))
    return x_final, beta, exploded


def simulate_independent_starts(model, starts, cfg: SimConfig, *,
                                workers: Optional[int] = None):
    """State-only simulation where path k starts at starts[k].

    Unlike simulate_many_starts there is no coupling: path k draws from the
    same per-path stream it would get in simulate_ensemble, so with all
    starts equal this reproduces that ensemble's endpoint data bit for bit.
    Returns (x_final, beta_final, exploded).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape != (cfg.n_paths, model.dim):
        raise ValueError(
            f"starts must have shape ({cfg.n_paths}, {model.dim}), got {starts.shape}"
        )
    sig_inv_const = _prepare_sigma_solver(model, starts[0])
    n = cfg.n_paths
    x_final = np.empty((n, model.dim))
    beta = np.empty(n)
    exploded = np.empty(n, dtype=bool)

    blocks = [(s, min(PATH_BLOCK, n - s)) for s in range(0, n, PATH_BLOCK)]

    def run_block(args):
        start, count = args
        sl = slice(start, start + count)
        res = _simulate_block(model, starts[sl], None, cfg, start, count,
                              False, sig_inv_const)
        x_final[sl], beta[sl] = res[0], res[1]
        exploded[sl] = res[4]

    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(blocks) == 1:
        for blk in blocks:
            run_block(blk)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_block, blocks))
    return x_final, beta, exploded


def localization_agreement(model, reg_model, x0, cfg: SimConfig,
                           workers: Optional[int] = None) -> float:
    """Max |X(t) - X_clip(t)| over paths that stayed inside radius n.

    Both runs share seeds; on paths whose running max stayed strictly below
    the clip radius the discrete iterates visit only points where the
    coefficients coincide, so the difference is exactly zero.
    """
    base = simulate_ensemble(model, x0, cfg, with_tangent=False, workers=workers)
    reg = simulate_ensemble(reg_model, x0, cfg, with_tangent=False, workers=workers)
    stayed = base.x_abs_max < reg_model.n
    if not np.any(stayed):
        raise SimulationError("no path stayed inside the clip radius")
    diff = np.linalg.norm(base.x_final - reg.x_final, axis=-1)
    return float(np.max(diff[stayed]))


def exit_fraction(model, radius: float, x0, cfg: SimConfig,
                  workers: Optional[int] = None) -> float:
    """Fraction of paths whose running max reached the given radius."""
    ens = simulate_ensemble(model, x0, cfg, with_tangent=False, workers=workers)
    return float(np.mean(ens.x_abs_max >= radius))


# -- binary ensemble dump ---------------------------------------------------

_HEADER = struct.Struct("<IQQQddB")


def save_ensemble(path, ens: PathEnsemble) -> None:
    """Versioned little-endian dump: magic, fixed header, then f8 arrays."""
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(_HEADER.pack(ens.dim, ens.n_paths, ens.n_steps,
                              ens.master_seed, ens.t_final, ens.dt,
                              1 if ens.has_tangent else 0))
        name_bytes = ens.model_name.encode("utf-8")
        fh.write(struct.pack("<H", len(name_bytes)))
        fh.write(name_bytes)
        fh.write(np.ascontiguousarray(ens.x0, dtype="<f8").tobytes())
        if ens.h is not None:
            fh.write(struct.pack("<B", 1))
            fh.write(np.ascontiguousarray(ens.h, dtype="<f8").tobytes())
        else:
            fh.write(struct.pack("<B", 0))
        for arr in (ens.x_final, ens.beta_final, ens.v_running_max, ens.x_abs_max):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ens.exploded, dtype="u1").tobytes())
        if ens.has_tangent:
            for arr in (ens.eta_final, ens.bel_integral, ens.i2_integral):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(len(ENSEMBLE_MAGIC))
        if magic != ENSEMBLE_MAGIC:
            raise ValueError("not an ensemble dump (bad magic)")
        dim, n_paths, n_steps, seed, t_final, dt, has_tangent = _HEADER.unpack(
            fh.read(_HEADER.size)
        )
        (name_len,) = struct.unpack("<H", fh.read(2))
        model_name = fh.read(name_len).decode("utf-8")
        x0 = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
        (has_h,) = struct.unpack("<B", fh.read(1))
        h = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy() if has_h else None

        def read_f8(count):
            return np.frombuffer(fh.read(8 * count), dtype="<f8").copy()

        x_final = read_f8(n_paths * dim).reshape(n_paths, dim)
        beta = read_f8(n_paths)
        v_max = read_f8(n_paths)
        x_max = read_f8(n_paths)
        exploded = np.frombuffer(fh.read(n_paths), dtype="u1").astype(bool)
        eta = bel = i2 = None
        if has_tangent:
            eta = read_f8(n_paths * dim).reshape(n_paths, dim)
            bel = read_f8(n_paths)
            i2 = read_f8(n_paths)
    return PathEnsemble(
        model_name=model_name, dim=dim, t_final=t_final, dt=dt,
        n_steps=n_steps, master_seed=seed, x0=x0, h=h, x_final=x_final,
        beta_final=beta, v_running_max=v_max, x_abs_max=x_max,
        exploded=exploded, eta_final=eta, bel_integral=bel, i2_integral=i2,
    )
