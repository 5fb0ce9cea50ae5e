"""Command-line harness: fixtures, experiment config, CSV and report emission.

Every pipeline seeds its random streams from the configured master seed, so a
rerun with the same configuration writes byte-identical CSV bodies; the only
timestamp lives in each summary file's header line. The default seed is the
fixed constant ``DEFAULT_SEED`` (never wall-clock derived).

Exit codes: 0 when every asserted property passed, 2 when a property failed,
1 for usage, configuration, or IO errors.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .counterexample import Counterexample
from .estimators import (
    _stage_seed,
    bel_gradient_s,
    duhamel_gradient_p,
    estimate_from_samples,
    fd_gradient_p,
    fd_gradient_s,
    get_test_function,
    gradient_growth,
    moment_audit,
    ratio_sweep,
    sine_pi,
    standard_test_functions,
)
from .fixtures import FIXTURE_BUILDERS, get_fixture
from .models import check_hypotheses
from .regularization import regularize
from .reporting import TableSpec, write_csv, write_plot_companion, write_summary
from .simulate import SimConfig, SimulationError, simulate_ensemble

DEFAULT_SEED = 20260101
COMMANDS = ("check-hypotheses", "simulate", "gradient", "moment-audit",
            "ratio-sweep", "counterexample", "all")

__all__ = ["ExperimentConfig", "parse_config", "run", "main", "DEFAULT_SEED"]


class CliUsageError(Exception):
    """Bad flags, bad config file, unknown fixture: exit code 1."""


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    model: str = "ou"
    t: tuple = (0.5,)
    x: tuple = (1.0,)
    n: tuple = ()
    theta: float = 0.9
    n_max: Optional[int] = None
    dt: float = 1e-3
    paths: int = 100_000
    eps: float = 1e-3
    phi: str = "cos"
    seed: int = DEFAULT_SEED
    output_dir: str = "out"
    workers: Optional[int] = None
    duhamel_nodes: int = 6
    duhamel_inner: int = 64
    growth_paths: int = 0
    growth_t: float = 0.01
    growth_dt: float = 1e-4
    clip: Optional[float] = None
    duhamel_outer: Optional[int] = None

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise CliUsageError(f"unknown command {self.command!r}")
        if self.model not in FIXTURE_BUILDERS:
            known = ", ".join(sorted(FIXTURE_BUILDERS))
            raise CliUsageError(
                f"unknown fixture {self.model!r}; known fixtures: {known}")
        for name in ("t", "x"):
            if len(getattr(self, name)) == 0:
                raise CliUsageError(f"list parameter {name!r} must be non-empty")
        if self.paths < 2:
            raise CliUsageError("paths must be at least 2")
        if self.seed < 0:
            raise CliUsageError("seed must be nonnegative")
        return self


def _float_list(values) -> tuple:
    out = []
    for chunk in values:
        for piece in str(chunk).replace(",", " ").split():
            out.append(float(piece))
    return tuple(out)


def _int_list(values) -> tuple:
    return tuple(int(v) for v in _float_list(values))


# converters for config-file values, keyed by ExperimentConfig field name
_FIELD_PARSERS = {
    "command": str,
    "model": str,
    "t": lambda v: _float_list([v]),
    "x": lambda v: _float_list([v]),
    "n": lambda v: _int_list([v]),
    "theta": float,
    "n_max": int,
    "dt": float,
    "paths": int,
    "eps": float,
    "phi": str,
    "seed": int,
    "output_dir": str,
    "workers": int,
    "duhamel_nodes": int,
    "duhamel_inner": int,
    "growth_paths": int,
    "growth_t": float,
    "growth_dt": float,
    "clip": float,
    "duhamel_outer": int,
}


def _read_config_file(path: Path) -> dict:
    """Line-oriented ``key = value`` text; errors carry the line number."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliUsageError(f"cannot read config file {path}: {exc}")
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliUsageError(
                f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in _FIELD_PARSERS:
            raise CliUsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            entries[key] = _FIELD_PARSERS[key](value)
        except ValueError as exc:
            raise CliUsageError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return entries


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract says 1
        raise CliUsageError(f"{message}\n{self.format_usage()}".rstrip())


def _build_parser() -> _Parser:
    p = _Parser(
        prog="bel-gradients",
        description=(
            "Monte Carlo verification harness for weighted semigroup "
            "gradient estimates. The default seed is the fixed constant "
            f"{DEFAULT_SEED}; identical configurations write byte-identical "
            "CSV bodies."),
    )
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="pipeline to run")
    p.add_argument("--config", metavar="FILE",
                   help="line-oriented 'key = value' file; flags override it")
    p.add_argument("--model", help="fixture name (default ou)")
    p.add_argument("--t", nargs="+", help="time levels (repeatable list)")
    p.add_argument("--x", nargs="+", help="start points (1-d fixtures)")
    p.add_argument("--n", nargs="+",
                   help="probe indices for the growth table")
    p.add_argument("--theta", type=float,
                   help="counterexample parameter in (0, 1), default 0.9")
    p.add_argument("--n-max", type=int, dest="n_max",
                   help="last table index for the counterexample suite")
    p.add_argument("--dt", type=float, help="Euler step (default 1e-3)")
    p.add_argument("--paths", type=int, help="Monte Carlo paths per estimate")
    p.add_argument("--eps", type=float, help="finite-difference offset")
    p.add_argument("--phi", help="test function: cos, sin-pi, tanh, const")
    p.add_argument("--seed", type=int, help="master seed (last flag wins)")
    p.add_argument("--output-dir", dest="output_dir",
                   help="where CSVs and reports go (default ./out)")
    p.add_argument("--workers", type=int,
                   help="simulation pool size; default machine parallelism, "
                        "or the BEL_GRADIENTS_WORKERS environment variable")
    p.add_argument("--duhamel-nodes", type=int, dest="duhamel_nodes",
                   help="quadrature nodes for the two-stage gradient "
                        "(0 disables it)")
    p.add_argument("--duhamel-inner", type=int, dest="duhamel_inner",
                   help="inner paths per outer endpoint")
    p.add_argument("--growth-paths", type=int, dest="growth_paths",
                   help="paths for the counterexample growth probe "
                        "(0 skips it)")
    p.add_argument("--growth-t", type=float, dest="growth_t",
                   help="time level for the growth probe (default 0.01)")
    p.add_argument("--growth-dt", type=float, dest="growth_dt",
                   help="Euler step for the growth probe (default 1e-4)")
    p.add_argument("--clip", type=float,
                   help="run the model's radius-n regularization instead")
    p.add_argument("--duhamel-outer", type=int, dest="duhamel_outer",
                   help="outer paths for the two-stage gradient "
                        "(default: --paths)")
    return p


def parse_config(argv: Sequence[str]) -> ExperimentConfig:
    """Flags override config-file values; built-in defaults fill the rest."""
    parser = _build_parser()
    ns = parser.parse_args(list(argv))

    merged = {}
    if ns.config is not None:
        merged.update(_read_config_file(Path(ns.config)))
    for f in fields(ExperimentConfig):
        flag_value = getattr(ns, f.name, None)
        if flag_value is None:
            continue
        if f.name == "t" or f.name == "x":
            merged[f.name] = _float_list(flag_value)
        elif f.name == "n":
            merged[f.name] = _int_list(flag_value)
        else:
            merged[f.name] = flag_value
    if merged.get("command") is None:
        raise CliUsageError("a command is required\n"
                            + parser.format_usage().rstrip())
    try:
        cfg = ExperimentConfig(**merged)
    except TypeError as exc:
        raise CliUsageError(str(exc))
    return cfg.validate()


# -- pipelines -----------------------------------------------------------------


def _model_for(cfg: ExperimentConfig):
    if cfg.model == "counterexample":
        model = get_fixture("counterexample", theta=cfg.theta)
    else:
        model = get_fixture(cfg.model)
    if cfg.clip is not None:
        model = regularize(model, cfg.clip)
    return model


def _phi_for(cfg: ExperimentConfig):
    try:
        return get_test_function(cfg.phi)
    except KeyError as exc:
        raise CliUsageError(str(exc.args[0]))


def _cell_cfg(cfg: ExperimentConfig, t: float, *tags: int) -> SimConfig:
    return SimConfig(t_final=float(t), dt=min(cfg.dt, float(t)),
                     n_paths=cfg.paths,
                     master_seed=_stage_seed(cfg.seed, *tags))


def _attr_cols(cfg: ExperimentConfig, cell: SimConfig):
    return cell.master_seed, cell.dt, cell.n_paths


def _run_check_hypotheses(cfg: ExperimentConfig, out: Path):
    model = _model_for(cfg)
    report = check_hypotheses(model)
    lines = [f"model: {model.name}", report.summary(),
             f"overall: {'PASS' if report.passed else 'FAIL'}"]
    write_summary(out / f"hypotheses-{cfg.model}.txt",
                  f"hypothesis check: {model.name}", lines)
    return report.passed, lines


def _run_simulate(cfg: ExperimentConfig, out: Path):
    """Endpoint statistics; carries the tangent-weight supermartingale check."""
    model = _model_for(cfg)
    h = np.zeros(model.dim)
    h[0] = 1.0
    h_sq = float(h @ h)
    header = ["model", "t", "x", "seed", "dt", "paths", "exploded",
              "mean_v", "stderr_v", "tangent_stat", "tangent_stderr",
              "h_sq", "tangent_ok"]
    rows = []
    all_ok = True
    for i, t in enumerate(cfg.t):
        for j, x in enumerate(cfg.x):
            cell = _cell_cfg(cfg, t, 11, i, j)
            x0 = np.full(model.dim, float(x))
            ens = simulate_ensemble(model, x0, cell, h=h, with_tangent=True,
                                    workers=cfg.workers)
            exploded = int(ens.exploded.sum())
            alive = ~ens.exploded
            stat = np.exp(-ens.beta_final[alive]) * np.sum(
                ens.eta_final[alive] ** 2, axis=-1)
            tangent = estimate_from_samples(stat)
            ev = estimate_from_samples(model.potential(ens.x_final[alive]))
            ok = tangent.value <= h_sq + 3.0 * tangent.stderr
            all_ok = all_ok and ok and exploded == 0
            rows.append([model.name, t, x, *_attr_cols(cfg, cell), exploded,
                         ev.value, ev.stderr, tangent.value, tangent.stderr,
                         h_sq, ok])
    csv_path = write_csv(out / f"simulate-{cfg.model}.csv", header, rows)
    write_plot_companion(csv_path, TableSpec(
        x="t", ys=("tangent_stat", "h_sq"),
        title=f"tangent supermartingale: {model.name}"))
    lines = [f"{len(rows)} cells, all tangent stats within bound: {all_ok}",
             f"overall: {'PASS' if all_ok else 'FAIL'}"]
    write_summary(out / f"simulate-{cfg.model}.txt",
                  f"endpoint statistics: {model.name}", lines)
    return all_ok, lines


def _run_gradient(cfg: ExperimentConfig, out: Path):
    model = _model_for(cfg)
    phi = _phi_for(cfg)
    h = np.zeros(model.dim)
    h[0] = 1.0
    header = ["model", "phi", "t", "x", "seed", "dt", "paths", "eps",
              "bel_s", "bel_s_stderr", "fd_s", "fd_s_stderr", "s_agree",
              "duhamel_p", "duhamel_p_stderr", "fd_p", "fd_p_stderr",
              "p_agree", "duhamel_nodes", "duhamel_inner"]
    rows = []
    all_ok = True
    for i, t in enumerate(cfg.t):
        for j, x in enumerate(cfg.x):
            cell = _cell_cfg(cfg, t, 31, i, j)
            x0 = np.full(model.dim, float(x))
            bel = bel_gradient_s(model, x0, h, phi, cell, workers=cfg.workers)
            fds = fd_gradient_s(model, x0, h, phi, cell, eps=cfg.eps,
                                workers=cfg.workers)
            s_agree = bel.total.agrees_with(fds)
            row = [model.name, phi.name, t, x, *_attr_cols(cfg, cell),
                   cfg.eps, bel.total.value, bel.total.stderr,
                   fds.value, fds.stderr, s_agree]
            if cfg.duhamel_nodes > 0:
                duh = duhamel_gradient_p(
                    model, x0, h, phi, cell, n_nodes=cfg.duhamel_nodes,
                    inner_paths=cfg.duhamel_inner,
                    outer_paths=cfg.duhamel_outer, workers=cfg.workers)
                fdp = fd_gradient_p(model, x0, h, phi, cell, eps=cfg.eps,
                                    workers=cfg.workers)
                p_agree = duh.total.agrees_with(fdp)
                row += [duh.total.value, duh.total.stderr, fdp.value,
                        fdp.stderr, p_agree, cfg.duhamel_nodes,
                        cfg.duhamel_inner]
            else:
                p_agree = True
                row += ["", "", "", "", "", 0, 0]
            all_ok = all_ok and s_agree and p_agree
            rows.append(row)
    csv_path = write_csv(out / f"gradient-{cfg.model}.csv", header, rows)
    write_plot_companion(csv_path, TableSpec(
        x="x", ys=("bel_s", "fd_s"),
        title=f"damped-semigroup gradient: {model.name}"))
    lines = [f"{len(rows)} cells, all estimator pairs agree: {all_ok}",
             f"overall: {'PASS' if all_ok else 'FAIL'}"]
    write_summary(out / f"gradient-{cfg.model}.txt",
                  f"gradient cross-checks: {model.name}", lines)
    return all_ok, lines


def _run_moment_audit(cfg: ExperimentConfig, out: Path):
    model = _model_for(cfg)
    header = ["model", "t", "x", "seed", "dt", "paths", "lyapunov_l",
              "check", "observed", "stderr", "bound", "ok"]
    rows = []
    all_ok = True
    for i, t in enumerate(cfg.t):
        for j, x in enumerate(cfg.x):
            cell = _cell_cfg(cfg, t, 41, i, j)
            x0 = np.full(model.dim, float(x))
            audit = moment_audit(model, x0, cell, workers=cfg.workers)
            for r in audit.rows:
                all_ok = all_ok and r.ok
                rows.append([model.name, t, x, *_attr_cols(cfg, cell),
                             audit.lyapunov_l, r.label, r.observed,
                             r.stderr, r.bound, r.ok])
    csv_path = write_csv(out / f"moment-audit-{cfg.model}.csv", header, rows)
    write_plot_companion(csv_path, TableSpec(
        x="x", ys=("observed", "bound"), logy=True,
        title=f"moment bounds: {model.name}"))
    lines = [f"{len(rows)} bounds checked, all hold: {all_ok}",
             f"overall: {'PASS' if all_ok else 'FAIL'}"]
    write_summary(out / f"moment-audit-{cfg.model}.txt",
                  f"moment audit: {model.name}", lines)
    return all_ok, lines


def _run_ratio_sweep(cfg: ExperimentConfig, out: Path):
    model = _model_for(cfg)
    base = SimConfig(t_final=max(cfg.t), dt=cfg.dt, n_paths=cfg.paths,
                     master_seed=cfg.seed)
    sweep = ratio_sweep(model, [np.full(model.dim, float(x)) for x in cfg.x],
                        list(cfg.t), list(standard_test_functions()), base,
                        eps=cfg.eps, workers=cfg.workers)
    header = ["model", "phi", "t", "x", "seed", "dt", "paths", "eps",
              "gradient", "stderr", "weighted_ratio", "unweighted_ratio"]
    rows = []
    for r in sweep.rows:
        rows.append([model.name, r.phi_name, r.t, r.x0, cfg.seed,
                     min(cfg.dt, r.t), cfg.paths, cfg.eps, r.gradient,
                     r.stderr, r.weighted_ratio, r.unweighted_ratio])
    csv_path = write_csv(out / f"ratio-sweep-{cfg.model}.csv", header, rows)
    write_plot_companion(csv_path, TableSpec(
        x="x", ys=("weighted_ratio", "unweighted_ratio"), logy=True,
        title=f"weighted gradient ratio: {model.name}"))
    ok = sweep.envelope_stability < 10.0
    lines = sweep.summary().splitlines()
    lines.append(f"envelope stability below 10: {ok}")
    lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
    write_summary(out / f"ratio-sweep-{cfg.model}.txt",
                  f"weighted ratio sweep: {model.name}", lines)
    return ok, lines


def _run_counterexample(cfg: ExperimentConfig, out: Path):
    cex = Counterexample(theta=cfg.theta)
    n_max = cfg.n_max if cfg.n_max is not None else cex.n0 + 200
    report = cex.verify_lemma(n_max=n_max)
    rtol = 1e-12  # adaptive tail tolerance used by the series evaluator

    ns = report.n_values
    signed_up = cex.u_prime(ns.astype(float))
    growth_rows = []
    for n, up, env in zip(ns, signed_up, report.derivative_envelope):
        growth_rows.append([int(n), float(n), up, env, abs(up) >= env,
                            cfg.theta, rtol, cfg.seed])
    p1 = write_csv(out / "counterexample-derivative-growth.csv",
                   ["n", "c_n", "u_prime", "lower_envelope", "ok",
                    "theta", "series_rtol", "seed"], growth_rows)
    write_plot_companion(p1, TableSpec(
        x="n", ys=("u_prime", "lower_envelope"),
        title="derivative growth at bump centers"))

    p2 = write_csv(out / "counterexample-boundedness.csv",
                   ["x_max", "sup_u", "theta", "series_rtol", "seed"],
                   [[r[0], r[1], cfg.theta, rtol, cfg.seed]
                    for r in report.sup_u_rows])
    write_plot_companion(p2, TableSpec(
        x="x_max", ys=("sup_u",), title="sup|u| under domain doubling"))

    block_rows = []
    for n, ab, cd, gs in zip(ns, report.ab_blocks, report.cd_blocks,
                             report.gamma_sups):
        block_rows.append([int(n), ab, cd, gs, cfg.theta, rtol, cfg.seed])
    p3 = write_csv(out / "counterexample-block-sums.csv",
                   ["n", "ab_sum", "cd_sum", "gamma_n", "theta",
                    "series_rtol", "seed"], block_rows)
    write_plot_companion(p3, TableSpec(
        x="n", ys=("gamma_n",), logy=True, title="block remainders"))

    # junction and residual checks round out the plain-text certificate
    probe = 1e-10
    u_jump = abs(float(cex.solution_u(np.array([probe]))[0]
                       - cex.solution_u(np.array([-probe]))[0]))
    up_jump = abs(float(cex.u_prime(np.array([probe]))[0]
                        - cex.u_prime(np.array([-probe]))[0]))
    rng = np.random.default_rng(0)
    sample = np.concatenate([
        rng.uniform(-5.0, float(n_max), 800),
        rng.uniform(cex.n0 - 2.0, cex.n0 + 6.0, 200),
    ])
    residual = cex.verify_ode(sample)
    extras_ok = u_jump < 1e-8 and up_jump < 1e-8 and residual < 1e-8
    passed = report.passed and extras_ok

    lines = report.summary().splitlines()[:-1]
    lines.append(f"u jump across 0: {u_jump:.3e}")
    lines.append(f"u' jump across 0: {up_jump:.3e}")
    lines.append(f"ODE residual on {sample.size} points: {residual:.3e}")

    if cfg.growth_paths > 0:
        model = cex.as_sde_model()
        ns_probe = cfg.n if cfg.n else (cex.n0, cex.n0 + 1, cex.n0 + 2)
        phi = sine_pi()
        signs = [(-1.0) ** int(n) for n in ns_probe]
        probe_cfg = SimConfig(t_final=cfg.growth_t, dt=cfg.growth_dt,
                              n_paths=cfg.growth_paths, master_seed=cfg.seed)
        growth = gradient_growth(model, list(ns_probe), cfg.growth_t, phi,
                                 probe_cfg, signs=signs, eps=cfg.eps,
                                 workers=cfg.workers)
        header = ["n", "center", "t", "dt", "paths", "eps", "seed", "phi",
                  "level", "level_stderr", "proxy", "proxy_stderr",
                  "weighted_ratio"]
        rows = [[p.index, float(p.center[0]), growth.t, cfg.growth_dt,
                 cfg.growth_paths, cfg.eps, cfg.seed, phi.name,
                 p.level.value, p.level.stderr, p.proxy, p.proxy_stderr,
                 p.weighted_ratio] for p in growth.points]
        p4 = write_csv(out / "counterexample-growth.csv", header, rows)
        write_plot_companion(p4, TableSpec(
            x="n", ys=("proxy",), title="unweighted gradient proxy"))
        step_rows = [[s.lower, s.upper, growth.t, cfg.growth_dt,
                      cfg.growth_paths, cfg.eps, cfg.seed,
                      s.difference.value, s.difference.stderr,
                      s.difference.value / s.difference.stderr, s.resolved]
                     for s in growth.steps]
        write_csv(out / "counterexample-growth-steps.csv",
                  ["lower", "upper", "t", "dt", "paths", "eps", "seed",
                   "difference", "stderr", "z_score", "resolved"], step_rows)
        passed = passed and growth.passed
        lines.extend(growth.summary().splitlines())

    lines.append(f"overall: {'PASS' if passed else 'FAIL'}")
    write_summary(out / "counterexample-summary.txt",
                  f"counterexample certificate: theta={cfg.theta:g}", lines)
    return passed, lines


def _run_all(cfg: ExperimentConfig, out: Path):
    all_ok = True
    lines = []
    for name in ("bm", "ou", "sinsq", "counterexample"):
        ok, _ = _run_check_hypotheses(replace(cfg, model=name), out)
        all_ok = all_ok and ok
        lines.append(f"check-hypotheses {name}: {'PASS' if ok else 'FAIL'}")
    for step in (_run_simulate, _run_gradient, _run_moment_audit,
                 _run_ratio_sweep):
        ok, _ = step(cfg, out)
        all_ok = all_ok and ok
        lines.append(f"{step.__name__[5:]} {cfg.model}: "
                     f"{'PASS' if ok else 'FAIL'}")
    ok, _ = _run_counterexample(cfg, out)
    all_ok = all_ok and ok
    lines.append(f"counterexample: {'PASS' if ok else 'FAIL'}")
    lines.append(f"overall: {'PASS' if all_ok else 'FAIL'}")
    write_summary(out / "all-summary.txt", "full verification battery", lines)
    return all_ok, lines


_PIPELINES = {
    "check-hypotheses": _run_check_hypotheses,
    "simulate": _run_simulate,
    "gradient": _run_gradient,
    "moment-audit": _run_moment_audit,
    "ratio-sweep": _run_ratio_sweep,
    "counterexample": _run_counterexample,
    "all": _run_all,
}


def run(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliUsageError(f"cannot create output directory {out}: {exc}")
    try:
        passed, lines = _PIPELINES[cfg.command](cfg, out)
    except SimulationError as exc:
        print(f"property failure: {exc}", file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    return 0 if passed else 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except CliUsageError as exc:
        print(f"bel-gradients: error: {exc}", file=sys.stderr)
        return 1
    except (KeyError, ValueError) as exc:
        print(f"bel-gradients: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"bel-gradients: io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
