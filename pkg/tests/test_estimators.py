import math

import numpy as np
import pytest

from bel_gradients.estimators import (
    Estimate,
    bel_gradient_s,
    constant,
    cosine,
    duhamel_gradient_p,
    estimate_from_samples,
    estimate_p,
    estimate_s,
    fd_gradient_p,
    fd_gradient_s,
    get_test_function,
    gradient_growth,
    h1_grid_constant,
    moment_audit,
    ratio_sweep,
    sine_pi,
    standard_test_functions,
    tangent_weight_statistic,
    _stage_seed,
)
from bel_gradients.fixtures import get_fixture
from bel_gradients.models import scalar_model
from bel_gradients.regularization import regularize
from bel_gradients.simulate import SimConfig
from bel_gradients.weights import WeightSpec

from ou_oracle import bm_dp_cos, bm_p_cos, ou_dp_cos, ou_p_cos


@pytest.fixture(scope="module")
def ou():
    return get_fixture("ou")


# -- Estimate machinery ---------------------------------------------------------


def test_estimate_from_samples_matches_numpy():
    rng = np.random.Generator(np.random.Philox(key=[5, 0]))
    samples = rng.standard_normal(4001) * 2.0 + 1.0
    est = estimate_from_samples(samples)
    assert est.value == pytest.approx(samples.mean(), rel=1e-12)
    assert est.stderr == pytest.approx(
        samples.std(ddof=1) / math.sqrt(samples.size), rel=1e-12)
    assert est.n_paths == 4001


def test_estimate_order_invariance():
    rng = np.random.Generator(np.random.Philox(key=[6, 0]))
    samples = rng.standard_normal(5000) * 1e6
    a = estimate_from_samples(samples)
    b = estimate_from_samples(samples[::-1])
    assert a.value == b.value
    assert a.stderr == b.stderr


def test_estimate_agreement_and_interval():
    a = Estimate(1.0, 0.1, 100)
    b = Estimate(1.25, 0.05, 100)
    assert a.agrees_with(b, z=3.0)
    assert not a.agrees_with(Estimate(2.0, 0.05, 100), z=3.0)
    lo, hi = a.interval(z=2.0)
    assert lo == pytest.approx(0.8) and hi == pytest.approx(1.2)


def test_estimate_rejects_tiny_input():
    with pytest.raises(ValueError):
        estimate_from_samples([1.0])


def test_stage_seed_deterministic_and_tag_sensitive():
    assert _stage_seed(42, 1, 2) == _stage_seed(42, 1, 2)
    assert _stage_seed(42, 1, 2) != _stage_seed(42, 1, 3)
    assert _stage_seed(42, 1) != _stage_seed(43, 1)
    assert 0 <= _stage_seed(7, 9) < 2 ** 63


# -- test functions ---------------------------------------------------------------


def test_test_function_shapes():
    phi = cosine(2.0)
    out = phi(np.zeros((5, 3)))
    np.testing.assert_array_equal(out, np.ones(5))
    assert phi.sup_norm == 1.0
    assert sine_pi()(np.array([[0.5]]))[0] == pytest.approx(1.0)
    assert constant(3.0)(np.zeros((2, 1))).tolist() == [3.0, 3.0]


def test_get_test_function_registry():
    assert get_test_function("cos", 2.0).name == "cos2"
    assert get_test_function("sin-pi").name == "sinpi"
    assert get_test_function("tanh").sup_norm == 1.0
    with pytest.raises(KeyError, match="unknown test function"):
        get_test_function("bogus")
    names = [phi.name for phi in standard_test_functions()]
    assert names == ["cos1", "sinpi", "tanh"]


# -- semigroup values against closed forms ----------------------------------------


def test_estimate_p_brownian_analytic():
    """Euler is exact for driftless unit diffusion, so only MC error remains."""
    bm = get_fixture("bm")
    cfg = SimConfig(t_final=0.5, dt=0.05, n_paths=20000, master_seed=91)
    phi = cosine(1.0)
    est = estimate_p(bm, [0.7], phi, cfg)
    assert abs(est.value - bm_p_cos(0.5, 0.7)) <= 4.0 * est.stderr


def test_estimate_p_ou_analytic(ou):
    cfg = SimConfig(t_final=0.3, dt=1e-3, n_paths=20000, master_seed=92)
    est = estimate_p(ou, [1.0], cosine(1.0), cfg)
    # 4 sigma plus a discretization allowance of order dt
    assert abs(est.value - ou_p_cos(0.3, 1.0)) <= 4.0 * est.stderr + 2e-3


def test_estimate_s_is_damped_p(ou):
    """exp(-beta) < 1 pathwise, so S phi < P phi for positive phi."""
    cfg = SimConfig(t_final=0.3, dt=1e-3, n_paths=8000, master_seed=93)
    phi = constant(1.0)
    s = estimate_s(ou, [0.0], phi, cfg)
    p = estimate_p(ou, [0.0], phi, cfg)
    assert p.value == pytest.approx(1.0)
    assert p.stderr == 0.0
    assert 0.0 < s.value < 1.0


def test_tangent_weight_statistic_bounded(ou):
    cfg = SimConfig(t_final=0.5, dt=1e-3, n_paths=6000, master_seed=94)
    est = tangent_weight_statistic(ou, [1.0], [2.0], cfg)
    assert est.value <= 4.0 + 3.0 * est.stderr


# -- gradients ---------------------------------------------------------------------


def test_fd_gradient_constant_phi_is_exactly_zero(ou):
    cfg = SimConfig(t_final=0.2, dt=5e-3, n_paths=500, master_seed=95)
    est = fd_gradient_p(ou, [1.0], [1.0], constant(2.5), cfg)
    assert est.value == 0.0 and est.stderr == 0.0


def test_fd_gradient_brownian_analytic():
    bm = get_fixture("bm")
    cfg = SimConfig(t_final=0.5, dt=0.05, n_paths=40000, master_seed=96)
    est = fd_gradient_p(bm, [0.7], [1.0], cosine(1.0), cfg)
    assert abs(est.value - bm_dp_cos(0.5, 0.7)) <= 4.0 * est.stderr + 1e-5


def test_fd_gradient_ou_analytic(ou):
    cfg = SimConfig(t_final=0.5, dt=1e-3, n_paths=30000, master_seed=97)
    est = fd_gradient_p(ou, [1.0], [1.0], cosine(1.0), cfg)
    assert abs(est.value - ou_dp_cos(0.5, 1.0)) <= 4.0 * est.stderr + 2e-3


def test_fd_gradient_direction_scaling(ou):
    """D_{2h} = 2 D_h for the same seed, up to the quadratic fd term."""
    cfg = SimConfig(t_final=0.3, dt=1e-3, n_paths=5000, master_seed=98)
    g1 = fd_gradient_p(ou, [1.0], [1.0], cosine(1.0), cfg, eps=1e-4)
    g2 = fd_gradient_p(ou, [1.0], [2.0], cosine(1.0), cfg, eps=5e-5)
    assert g2.value == pytest.approx(2.0 * g1.value, rel=1e-4)


def test_bel_matches_fd_on_discounted_ou(ou):
    cfg = SimConfig(t_final=0.3, dt=1e-3, n_paths=30000, master_seed=99)
    bel = bel_gradient_s(ou, [1.0], [1.0], cosine(1.0), cfg)
    fd = fd_gradient_s(ou, [1.0], [1.0], cosine(1.0), cfg)
    assert bel.total.agrees_with(fd, z=3.0)
    total = bel.martingale_term.value + bel.potential_term.value
    assert bel.total.value == pytest.approx(total, rel=1e-12)


def test_bel_matches_fd_on_discounted_sinsq():
    model = get_fixture("sinsq")
    cfg = SimConfig(t_final=0.25, dt=1e-3, n_paths=30000, master_seed=100)
    bel = bel_gradient_s(model, [0.5], [1.0], cosine(1.0), cfg)
    fd = fd_gradient_s(model, [0.5], [1.0], cosine(1.0), cfg)
    assert bel.total.agrees_with(fd, z=3.0)


def test_duhamel_matches_analytic_ou(ou):
    cfg = SimConfig(t_final=0.3, dt=2e-3, n_paths=20000, master_seed=101)
    duh = duhamel_gradient_p(ou, [1.0], [1.0], cosine(1.0), cfg,
                             n_nodes=6, inner_paths=64, inner_dt=1e-2,
                             outer_paths=2048)
    target = ou_dp_cos(0.3, 1.0)
    # 3 sigma for the MC part plus 5% for quadrature and Euler bias
    assert abs(duh.total.value - target) <= (
        3.0 * duh.total.stderr + 0.05 * abs(target))
    assert len(duh.nodes) == 6
    weights = [nd.quad_weight for nd in duh.nodes]
    assert math.fsum(weights) == pytest.approx(0.3, rel=1e-12)
    assert all(nd.tau + nd.s == pytest.approx(0.3) for nd in duh.nodes)


def test_duhamel_parameter_validation(ou):
    cfg = SimConfig(t_final=0.2, dt=5e-3, n_paths=64, master_seed=1)
    with pytest.raises(ValueError):
        duhamel_gradient_p(ou, [0.0], [1.0], cosine(), cfg, n_nodes=0)
    with pytest.raises(ValueError):
        duhamel_gradient_p(ou, [0.0], [1.0], cosine(), cfg, inner_paths=1)


def test_duhamel_reduces_to_bel_plus_nodes(ou):
    cfg = SimConfig(t_final=0.2, dt=5e-3, n_paths=1024, master_seed=102)
    duh = duhamel_gradient_p(ou, [0.5], [1.0], cosine(1.0), cfg,
                             n_nodes=2, inner_paths=8, outer_paths=256)
    rebuilt = duh.s_part.total.value + math.fsum(
        nd.quad_weight * nd.estimate.value for nd in duh.nodes)
    assert duh.total.value == pytest.approx(rebuilt, rel=1e-12)


# -- moment audits -----------------------------------------------------------------


def test_moment_audit_ou_passes(ou):
    cfg = SimConfig(t_final=0.5, dt=1e-3, n_paths=20000, master_seed=103)
    audit = moment_audit(ou, [1.0], cfg)
    assert audit.passed, audit.summary()
    assert audit.lyapunov_l == ou.lyapunov_l
    first, fourth = audit.rows
    v_x = float(ou.weight.v(np.array([[1.0]]))[0])
    assert first.bound == pytest.approx(
        math.exp(ou.weight.c0 * ou.lyapunov_l * 0.5) * v_x)
    assert fourth.bound == pytest.approx(
        math.exp(4.0 * ou.weight.c0 * ou.lyapunov_l * 0.5) * v_x ** 4)
    assert "ok" in audit.summary()


def test_moment_audit_regularized_model(ou):
    reg = regularize(ou, 4.0)
    cfg = SimConfig(t_final=0.5, dt=1e-3, n_paths=20000, master_seed=104)
    audit = moment_audit(reg, [1.0], cfg)
    assert audit.passed, audit.summary()
    # no declared constant: the grid estimate kicks in and includes the pad
    assert audit.lyapunov_l > 0
    first = audit.rows[0]
    assert first.bound >= reg.c1 * float(ou.weight.v(np.array([[1.0]]))[0])


def test_h1_grid_constant_hand_model():
    """Zero drift, sigma = sqrt(2) I, gamma = 1, c0 = 1: the condition value
    is (2 + 16 x^2/(1+x^2)) / (1+x^2), maximal near the origin."""
    model = scalar_model(
        lambda x: np.zeros_like(x),
        lambda x: np.full_like(x, math.sqrt(2.0)),
        db=lambda x: np.zeros_like(x),
        weight=WeightSpec(gamma=1.0, m0=1.0, c0=1.0),
        lyapunov_l=5.0, nu=2.0, name="flat", constant_diffusion=True,
    )
    got = h1_grid_constant(model, radius=8.0)
    xs = np.linspace(-8, 8, 4001)
    expected = np.max((2.0 + 16.0 * xs ** 2 / (1 + xs ** 2)) / (1 + xs ** 2))
    assert got == pytest.approx(1.1 * expected, rel=0.02)


# -- ratio sweep -------------------------------------------------------------------


def test_ratio_sweep_structure(ou):
    cfg = SimConfig(t_final=1.0, dt=2e-3, n_paths=8000, master_seed=105)
    sweep = ratio_sweep(ou, [[-2.0], [0.0], [2.0]], [0.1, 0.5],
                        standard_test_functions(), cfg)
    assert len(sweep.rows) == 2 * 3 * 3
    assert set(sweep.envelope_by_t) == {0.1, 0.5}
    assert sweep.weighted_constant > 0
    assert sweep.envelope_stability >= 1.0
    assert math.isfinite(sweep.envelope_stability)
    for row in sweep.rows:
        v = float(ou.weight.v(row.x0[None, :])[0])
        expected = math.sqrt(row.t * ou.nu) * abs(row.gradient) / (v * v)
        assert row.weighted_ratio == pytest.approx(expected, rel=1e-12)
        assert row.unweighted_ratio == pytest.approx(
            math.sqrt(row.t) * abs(row.gradient), rel=1e-12)
    assert "ratio sweep" in sweep.summary()


def test_ratio_sweep_deterministic(ou):
    cfg = SimConfig(t_final=0.5, dt=5e-3, n_paths=2000, master_seed=106)
    a = ratio_sweep(ou, [[1.0]], [0.2], [cosine(1.0)], cfg)
    b = ratio_sweep(ou, [[1.0]], [0.2], [cosine(1.0)], cfg, workers=3)
    assert a.rows[0].gradient == b.rows[0].gradient
    assert a.weighted_constant == b.weighted_constant


class TestGradientGrowth:
    """Coupled ladder comparison, checked against the OU closed form."""

    def _run(self, **kw):
        model = get_fixture("ou")
        cfg = SimConfig(t_final=0.25, dt=1e-3, n_paths=20_000,
                        master_seed=909)
        args = dict(centers=[[0.5], [1.0], [1.5]],
                    signs=[-1.0, -1.0, -1.0], eps=1e-3)
        args.update(kw)
        return gradient_growth(model, [1, 2, 3], 0.25, cosine(1.0), cfg,
                               **args)

    def test_levels_and_steps_match_analytic(self):
        growth = self._run()
        t = 0.25
        targets = [-ou_dp_cos(t, x, 1.0) for x in (0.5, 1.0, 1.5)]
        for point, target in zip(growth.points, targets):
            assert abs(point.level.value - target) < (
                4.0 * point.level.stderr + 2e-3)
            assert point.proxy == pytest.approx(
                math.sqrt(t) * abs(point.level.value))
        for step, lo, hi in zip(growth.steps, targets[:-1], targets[1:]):
            gap = hi - lo
            assert abs(step.difference.value - gap) < (
                4.0 * step.difference.stderr + 2e-3)
        assert growth.monotone
        assert growth.passed
        assert "PASS" in growth.summary()

    def test_paired_stderr_beats_independent_combination(self):
        growth = self._run()
        for i, step in enumerate(growth.steps):
            independent = math.hypot(growth.points[i].level.stderr,
                                     growth.points[i + 1].level.stderr)
            assert step.difference.stderr < 0.5 * independent

    def test_deterministic_and_worker_invariant(self):
        a = self._run()
        b = self._run(workers=3)
        assert [p.level.value for p in a.points] == \
            [p.level.value for p in b.points]
        assert [s.difference.stderr for s in a.steps] == \
            [s.difference.stderr for s in b.steps]

    def test_validation(self):
        model = get_fixture("ou")
        cfg = SimConfig(t_final=0.1, dt=1e-2, n_paths=64, master_seed=1)
        with pytest.raises(ValueError, match="two probe"):
            gradient_growth(model, [1], 0.1, cosine(), cfg)
        with pytest.raises(ValueError, match="signs"):
            gradient_growth(model, [1, 2], 0.1, cosine(), cfg,
                            signs=[1.0])
        with pytest.raises(ValueError, match="centers"):
            gradient_growth(model, [1, 2], 0.1, cosine(), cfg,
                            centers=[[1.0]])

    def test_default_centers_are_labels(self):
        model = get_fixture("ou")
        cfg = SimConfig(t_final=0.1, dt=1e-2, n_paths=256, master_seed=5)
        growth = gradient_growth(model, [0, 1], 0.1, cosine(), cfg)
        assert growth.points[0].center[0] == 0.0
        assert growth.points[1].center[0] == 1.0
