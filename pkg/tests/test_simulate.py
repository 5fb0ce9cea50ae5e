import math

import numpy as np
import pytest

from bel_gradients.fixtures import get_fixture
from bel_gradients.models import scalar_model
from bel_gradients.regularization import regularize
from bel_gradients.simulate import (
    ENSEMBLE_MAGIC,
    PATH_BLOCK,
    SimConfig,
    SimulationError,
    SingularDiffusionError,
    exit_fraction,
    load_ensemble,
    localization_agreement,
    path_normals,
    save_ensemble,
    simulate_ensemble,
    simulate_independent_starts,
    simulate_many_starts,
)
from bel_gradients.weights import WeightSpec


def test_step_sizes_exact_division():
    sizes = SimConfig(t_final=1.0, dt=1e-3, n_paths=1, master_seed=0).step_sizes()
    assert len(sizes) == 1000
    assert sizes[0] == pytest.approx(1e-3)
    assert math.fsum(sizes) == pytest.approx(1.0, abs=1e-15)


def test_step_sizes_partial_last():
    sizes = SimConfig(t_final=0.25, dt=0.1, n_paths=1, master_seed=0).step_sizes()
    assert len(sizes) == 3
    np.testing.assert_allclose(sizes, [0.1, 0.1, 0.05])


def test_step_sizes_single_step():
    sizes = SimConfig(t_final=0.1, dt=0.1, n_paths=1, master_seed=0).step_sizes()
    assert len(sizes) == 1 and sizes[0] == 0.1


def test_step_sizes_near_integer_ratio():
    # 0.3 / 0.1 is 2.9999999999999996 in floating point
    sizes = SimConfig(t_final=0.3, dt=0.1, n_paths=1, master_seed=0).step_sizes()
    assert len(sizes) == 3
    assert math.fsum(sizes) == pytest.approx(0.3, abs=1e-15)


@pytest.mark.parametrize("bad", [
    dict(t_final=0.0, dt=0.1, n_paths=1, master_seed=0),
    dict(t_final=1.0, dt=0.0, n_paths=1, master_seed=0),
    dict(t_final=1.0, dt=2.0, n_paths=1, master_seed=0),
    dict(t_final=1.0, dt=0.1, n_paths=0, master_seed=0),
    dict(t_final=1.0, dt=0.1, n_paths=1, master_seed=-1),
    dict(t_final=1.0, dt=0.1, n_paths=1, master_seed=0, scheme="milstein"),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SimConfig(**bad)


def test_path_normals_partition_invariant():
    whole = path_normals(123, 0, 10, 7, 2)
    part = path_normals(123, 7, 3, 7, 2)
    np.testing.assert_array_equal(whole[7], part[0])
    np.testing.assert_array_equal(whole[9], part[2])


def test_path_normals_distinct_streams():
    block = path_normals(5, 0, 4, 50, 1)
    corr = np.corrcoef(block[:, :, 0])
    off_diag = corr[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off_diag) < 0.5)


def _replay_by_hand(model, x0, h, cfg):
    """Reference implementation: one path at a time, plain Python loop."""
    sizes = cfg.step_sizes()
    k = len(sizes)
    dim = model.dim
    draws = path_normals(cfg.master_seed, 0, cfg.n_paths, k, dim)
    jac_b = model.drift_jac()
    jac_s = model.diffusion_jacs()
    out = []
    for p in range(cfg.n_paths):
        x = np.array(x0, dtype=float)
        eta = np.array(h, dtype=float)
        beta = bel = i2 = 0.0
        s = 0.0
        for j in range(k):
            dt = sizes[j]
            dw = draws[p, j] * math.sqrt(dt)
            sig = model.diffusion(x[None])[0]
            z = np.linalg.solve(sig, eta) if dim > 1 else eta / sig[0, 0]
            bel = bel + float(np.sum(z * dw))
            v = float(model.potential(x[None])[0])
            beta = beta + v * dt
            gv = model.potential_grad(x[None])[0]
            i2 = i2 + (1.0 - s / cfg.t_final) * float(np.sum(gv * eta)) * dt
            jb = jac_b(x[None])[0]
            js = jac_s(x[None])[0]
            eta_new = eta + jb @ eta * dt + np.einsum("ijk,k,i->j", js, eta, dw)
            x = x + model.drift(x[None])[0] * dt + sig @ dw
            eta = eta_new
            s += dt
        out.append((x, eta, beta, bel, i2))
    return out


@pytest.mark.parametrize("name,x0", [("ou", [0.7]), ("oumult", [0.3])])
def test_vectorized_matches_scalar_replay(name, x0):
    """The blocked stepper agrees with a one-path-at-a-time reference."""
    model = get_fixture(name)
    cfg = SimConfig(t_final=0.2, dt=0.05, n_paths=3, master_seed=42)
    ens = simulate_ensemble(model, x0, cfg, h=[1.0])
    for p, (x, eta, beta, bel, i2) in enumerate(_replay_by_hand(model, x0, [1.0], cfg)):
        np.testing.assert_allclose(ens.x_final[p], x, rtol=1e-14)
        np.testing.assert_allclose(ens.eta_final[p], eta, rtol=1e-13)
        assert ens.beta_final[p] == pytest.approx(beta, rel=1e-13)
        assert ens.bel_integral[p] == pytest.approx(bel, rel=1e-12, abs=1e-13)
        assert ens.i2_integral[p] == pytest.approx(i2, rel=1e-12, abs=1e-13)


def test_brownian_tangent_is_constant():
    """Zero drift and identity diffusion leave the tangent untouched."""
    model = get_fixture("bm", dim=2)
    cfg = SimConfig(t_final=0.5, dt=0.01, n_paths=64, master_seed=7)
    ens = simulate_ensemble(model, [0.0, 0.0], cfg, h=[0.6, -0.8])
    np.testing.assert_array_equal(ens.eta_final,
                                  np.tile([0.6, -0.8], (64, 1)))


def test_ou_tangent_deterministic_decay():
    """For dX = -X dt + dW the tangent obeys eta_{j+1} = (1 - dt) eta_j."""
    model = get_fixture("ou")
    cfg = SimConfig(t_final=1.0, dt=0.01, n_paths=16, master_seed=11)
    ens = simulate_ensemble(model, [2.0], cfg, h=[1.0])
    expected = 1.0
    for dt in cfg.step_sizes():
        expected = expected + (-expected) * dt
    np.testing.assert_array_equal(ens.eta_final, np.full((16, 1), expected))
    assert abs(expected - math.exp(-1.0)) < 0.01


def test_tangent_linearity_is_bitexact():
    """Doubling h doubles eta, the BEL integral and the i2 integral exactly.

    Scaling by a power of two is exact in binary floating point and every
    operation in the tangent recursion is linear in eta.
    """
    model = get_fixture("oumult")
    cfg = SimConfig(t_final=0.5, dt=0.01, n_paths=256, master_seed=3)
    one = simulate_ensemble(model, [0.5], cfg, h=[1.0])
    two = simulate_ensemble(model, [0.5], cfg, h=[2.0])
    np.testing.assert_array_equal(two.eta_final, 2.0 * one.eta_final)
    np.testing.assert_array_equal(two.bel_integral, 2.0 * one.bel_integral)
    np.testing.assert_array_equal(two.i2_integral, 2.0 * one.i2_integral)
    np.testing.assert_array_equal(two.x_final, one.x_final)
    np.testing.assert_array_equal(two.beta_final, one.beta_final)


def test_worker_count_does_not_change_results():
    model = get_fixture("ou")
    n = PATH_BLOCK + 500  # force at least two blocks
    cfg = SimConfig(t_final=0.1, dt=0.01, n_paths=n, master_seed=21)
    a = simulate_ensemble(model, [1.0], cfg, h=[1.0], workers=1)
    b = simulate_ensemble(model, [1.0], cfg, h=[1.0], workers=3)
    np.testing.assert_array_equal(a.x_final, b.x_final)
    np.testing.assert_array_equal(a.eta_final, b.eta_final)
    np.testing.assert_array_equal(a.beta_final, b.beta_final)
    np.testing.assert_array_equal(a.bel_integral, b.bel_integral)


def test_rerun_is_bit_identical():
    model = get_fixture("sinsq")
    cfg = SimConfig(t_final=0.25, dt=0.005, n_paths=512, master_seed=99)
    a = simulate_ensemble(model, [0.4], cfg, h=[1.0])
    b = simulate_ensemble(model, [0.4], cfg, h=[1.0])
    np.testing.assert_array_equal(a.x_final, b.x_final)
    np.testing.assert_array_equal(a.bel_integral, b.bel_integral)


def test_many_starts_matches_ensemble_and_couples():
    model = get_fixture("oumult")
    cfg = SimConfig(t_final=0.3, dt=0.01, n_paths=400, master_seed=17)
    xf, beta, exploded = simulate_many_starts(model, [[0.5], [0.501]], cfg)
    ens = simulate_ensemble(model, [0.5], cfg, with_tangent=False)
    np.testing.assert_array_equal(xf[0], ens.x_final)
    np.testing.assert_array_equal(beta[0], ens.beta_final)
    assert not exploded.any()
    # common increments keep nearby starts tightly coupled
    gap = np.abs(xf[1, :, 0] - xf[0, :, 0])
    assert gap.max() < 0.01


def test_many_starts_constant_diffusion_path():
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.2, dt=0.02, n_paths=64, master_seed=5)
    xf, _, _ = simulate_many_starts(model, [[0.0]], cfg)
    ens = simulate_ensemble(model, [0.0], cfg, with_tangent=False)
    np.testing.assert_array_equal(xf[0], ens.x_final)


def test_explosion_detection_and_refusal():
    w = WeightSpec(gamma=1.0, m0=1.0, c0=1.0)
    cubic = scalar_model(
        b=lambda x: x ** 3, sigma=lambda x: np.ones_like(x),
        db=lambda x: 3.0 * x ** 2,
        weight=w, lyapunov_l=1.0, nu=1.0, name="cubic",
        constant_diffusion=True,
    )
    cfg = SimConfig(t_final=1.0, dt=0.05, n_paths=32, master_seed=1)
    ens = simulate_ensemble(cubic, [6.0], cfg, with_tangent=False)
    assert ens.exploded.all()
    assert np.all(np.isfinite(ens.x_final))
    with pytest.raises(SimulationError, match="exploded"):
        ens.require_clean()


def test_explosion_freezes_accumulators():
    w = WeightSpec(gamma=1.0, m0=1.0, c0=1.0)
    cubic = scalar_model(
        b=lambda x: x ** 3, sigma=lambda x: np.ones_like(x),
        db=lambda x: 3.0 * x ** 2,
        weight=w, lyapunov_l=1.0, nu=1.0, name="cubic",
        constant_diffusion=True,
    )
    short = SimConfig(t_final=0.25, dt=0.05, n_paths=32, master_seed=1)
    long = SimConfig(t_final=1.0, dt=0.05, n_paths=32, master_seed=1)
    a = simulate_ensemble(cubic, [6.0], short, with_tangent=False)
    b = simulate_ensemble(cubic, [6.0], long, with_tangent=False)
    dead_early = a.exploded
    assert dead_early.any()
    np.testing.assert_array_equal(b.x_final[dead_early], a.x_final[dead_early])
    np.testing.assert_array_equal(b.beta_final[dead_early], a.beta_final[dead_early])


def test_singular_diffusion_raises():
    w = WeightSpec(gamma=1.0, m0=1.0, c0=1.0)
    degenerate = scalar_model(
        b=lambda x: np.zeros_like(x), sigma=lambda x: x,
        dsigma=lambda x: np.ones_like(x),
        weight=w, lyapunov_l=1.0, nu=1e-6, name="degenerate",
    )
    cfg = SimConfig(t_final=0.1, dt=0.01, n_paths=8, master_seed=0)
    with pytest.raises(SingularDiffusionError):
        simulate_ensemble(degenerate, [0.0], cfg, h=[1.0])


def test_tangent_requires_direction():
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.1, dt=0.01, n_paths=4, master_seed=0)
    with pytest.raises(ValueError, match="direction"):
        simulate_ensemble(model, [0.0], cfg)


def test_dimension_mismatch():
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.1, dt=0.01, n_paths=4, master_seed=0)
    with pytest.raises(ValueError):
        simulate_ensemble(model, [0.0, 0.0], cfg, h=[1.0, 0.0])


def test_localization_exact_agreement():
    """Paths that never leave the clip radius see identical coefficients,
    so the coupled trajectories coincide bit for bit."""
    model = get_fixture("ou")
    reg = regularize(model, 6.0)
    cfg = SimConfig(t_final=1.0, dt=0.01, n_paths=2000, master_seed=13)
    assert localization_agreement(model, reg, [0.0], cfg) == 0.0


def test_localization_small_radius_still_exact_on_survivors():
    model = get_fixture("ou")
    reg = regularize(model, 1.0)
    cfg = SimConfig(t_final=0.5, dt=0.01, n_paths=2000, master_seed=13)
    assert exit_fraction(model, 1.0, [0.0], cfg) > 0.05
    assert localization_agreement(model, reg, [0.0], cfg) == 0.0


def test_running_maxima_track_potential_and_radius():
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.5, dt=0.01, n_paths=128, master_seed=8)
    ens = simulate_ensemble(model, [3.0], cfg, with_tangent=False)
    v0 = model.potential(np.array([[3.0]]))[0]
    assert np.all(ens.v_running_max >= v0)
    assert np.all(ens.x_abs_max >= 3.0)
    vf = model.potential(ens.x_final)
    assert np.all(ens.v_running_max >= vf - 1e-12)


def test_ensemble_dump_round_trip(tmp_path):
    model = get_fixture("oumult")
    cfg = SimConfig(t_final=0.2, dt=0.02, n_paths=100, master_seed=31)
    ens = simulate_ensemble(model, [0.25], cfg, h=[1.0])
    target = tmp_path / "ens.bin"
    save_ensemble(target, ens)
    back = load_ensemble(target)
    assert back.model_name == ens.model_name
    assert back.n_steps == ens.n_steps
    assert back.master_seed == ens.master_seed
    assert back.t_final == ens.t_final and back.dt == ens.dt
    np.testing.assert_array_equal(back.x0, ens.x0)
    np.testing.assert_array_equal(back.h, ens.h)
    for field in ("x_final", "beta_final", "v_running_max", "x_abs_max",
                  "exploded", "eta_final", "bel_integral", "i2_integral"):
        np.testing.assert_array_equal(getattr(back, field), getattr(ens, field))


def test_dump_without_tangent(tmp_path):
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.1, dt=0.02, n_paths=10, master_seed=2)
    ens = simulate_ensemble(model, [0.0], cfg, with_tangent=False)
    target = tmp_path / "ens.bin"
    save_ensemble(target, ens)
    back = load_ensemble(target)
    assert back.h is None and back.eta_final is None
    np.testing.assert_array_equal(back.x_final, ens.x_final)


def test_load_rejects_foreign_file(tmp_path):
    target = tmp_path / "junk.bin"
    target.write_bytes(b"not an ensemble" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_ensemble(target)
    assert ENSEMBLE_MAGIC.endswith(b"\n")


def test_independent_starts_equal_start_matches_ensemble():
    model = get_fixture("sinsq")
    cfg = SimConfig(t_final=0.2, dt=0.01, n_paths=300, master_seed=31)
    ens = simulate_ensemble(model, [0.7], cfg, with_tangent=False)
    starts = np.tile([0.7], (300, 1))
    xf, beta, exploded = simulate_independent_starts(model, starts, cfg)
    np.testing.assert_array_equal(xf, ens.x_final)
    np.testing.assert_array_equal(beta, ens.beta_final)
    np.testing.assert_array_equal(exploded, ens.exploded)


def test_independent_starts_vary_per_path():
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.2, dt=0.01, n_paths=64, master_seed=31)
    starts = np.tile([0.5], (64, 1))
    starts[10, 0] = 4.0
    base = simulate_ensemble(model, [0.5], cfg, with_tangent=False)
    xf, _, _ = simulate_independent_starts(model, starts, cfg)
    mask = np.ones(64, dtype=bool)
    mask[10] = False
    np.testing.assert_array_equal(xf[mask], base.x_final[mask])
    assert xf[10, 0] != base.x_final[10, 0]
    # same seed, same call: bit-identical rerun
    xf2, _, _ = simulate_independent_starts(model, starts, cfg, workers=3)
    np.testing.assert_array_equal(xf2, xf)


def test_independent_starts_shape_check():
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.1, dt=0.01, n_paths=8, master_seed=1)
    with pytest.raises(ValueError, match="shape"):
        simulate_independent_starts(model, np.zeros((4, 1)), cfg)


def test_supermartingale_smoke():
    """E[exp(-beta) |eta|^2] should not exceed |h|^2 by more than noise."""
    model = get_fixture("ou")
    cfg = SimConfig(t_final=0.25, dt=0.005, n_paths=4000, master_seed=77)
    ens = simulate_ensemble(model, [1.0], cfg, h=[1.0])
    ens.require_clean()
    stat = np.exp(-ens.beta_final) * np.sum(ens.eta_final ** 2, axis=-1)
    mean = stat.mean()
    stderr = stat.std(ddof=1) / math.sqrt(len(stat))
    assert mean <= 1.0 + 3.0 * stderr
