"""Experiment execution: simulate, evaluate oracles, write report and CSV tables.

Each experiment returns a list of :class:`Check` objects. Every check keeps
three error budgets apart: statistical (confidence interval), discretization
(time step / quadrature) and truncation (finite horizon or radius).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytic as an
from . import observers as ob
from .config import ConeLimitSpec, ExperimentConfig
from .engine import BatchFault, SeedPolicy, SimulationFault, TimeGrid, batch_run
from .models import ModelKind, law_at, limiting_velocity_law
from .stats import compare, compare_two, summarize, variance_summary

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    statistical: str = "n/a"
    discretization: str = "n/a"
    truncation: str = "n/a"

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: {self.detail}\n"
                f"       budgets: statistical={self.statistical}; "
                f"discretization={self.discretization}; truncation={self.truncation}")


@dataclass
class RunResult:
    exit_code: int
    checks: list
    files: list = field(default_factory=list)
    report: str = ""

    @property
    def passed(self) -> bool:
        return self.exit_code == EXIT_OK


def _g(v) -> str:
    return repr(float(v))


def write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_g(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _compare(cfg, est, oracle, extra=None):
    tol = cfg.tolerances
    return compare(est, oracle, tol.extra_tolerance if extra is None else extra,
                   tol.level, tol.n_se)


def _halfwidth_label(cfg):
    tol = cfg.tolerances
    if tol.n_se is not None:
        return f"{tol.n_se:g} SE"
    return "3 SE" if tol.level is None else f"{tol.level:g} CI"


def _discretization_note(cfg, model):
    g = cfg.grid
    note = f"dt={g.dt:g}" + (f", stretch={g.stretch:g}" if g.stretch else "")
    if model.kind is ModelKind.CONSTANT_DRIFT:
        note += " (Euler exact in law for constant drift)"
    return note


# --------------------------------------------------------------------------


def _boundary_flux(cfg: ExperimentConfig, out: Path, threads):
    model = cfg.model.build()
    domain = cfg.geometry.build_domain()
    g = cfg.grid
    cps = tuple(g.checkpoints) or (g.t_end,)
    grid = TimeGrid(g.t_start, g.t_end, g.dt, g.stretch, cps)
    esc = cfg.geometry.escape_radius
    factory = lambda: [ob.DomainFluxObserver(domain, escape_radius=esc, checkpoints=cps)]
    (fs,) = batch_run(model, grid, cfg.n_paths, SeedPolicy(cfg.master_seed), factory, threads)
    checks = [Check("telescoping", ob.telescoping_holds(fs),
                    f"net crossings == chi(start) - chi(end) on all {len(fs)} paths")]
    q = cfg.quadrature
    p_start = an.region_probability(law_at(model, g.t_start), domain)
    rows = []
    for i, tb in enumerate(cps):
        est = summarize(fs[f"net_t{i}"])
        integral = an.boundary_flux_integral(model, domain, g.t_start, tb, q.time_order,
                                             q.surface_order, q.time_panels)
        prob_oracle = p_start - an.region_probability(law_at(model, tb), domain)
        quad_gap = abs(integral - prob_oracle)
        checks.append(Check(
            f"quadrature vs probability oracle [t_b={tb:g}]", quad_gap <= cfg.tolerances.quadrature_tol,
            f"integral={integral:.12g} P-difference={prob_oracle:.12g} |diff|={quad_gap:.3g} "
            f"<= {cfg.tolerances.quadrature_tol:g}",
            discretization=f"orders t={q.time_order}x{q.time_panels} s={q.surface_order}"))
        v = _compare(cfg, est, integral)
        tail = an.flux_tail_bound(model, domain, tb)
        checks.append(Check(
            f"MC net flux vs flux integral [t_b={tb:g}]", v.passed, v.report(),
            statistical=f"{_halfwidth_label(cfg)} = {v.allowance - cfg.tolerances.extra_tolerance:.3g}",
            discretization=_discretization_note(cfg, model) +
            f"; declared extra {cfg.tolerances.extra_tolerance:g}",
            truncation=f"finite window; mass left in D at t_b = {tail:.3g}"))
        rows.append((float(tb), est.mean, est.std_error, integral, v.label))
    write_table(out / "boundary_flux.csv", ("t_b", "mc_mean", "mc_se", "oracle", "verdict"), rows)
    files = [out / "boundary_flux.csv"]
    if cfg.output.per_path_csv:
        fs.to_csv(out / "paths.csv")
        files.append(out / "paths.csv")
    return checks, files


def _asymptotic_flux(cfg: ExperimentConfig, out: Path, threads):
    model = cfg.model.build()
    cone = cfg.geometry.build_cone()
    radii = tuple(cfg.geometry.radii)
    g = cfg.grid
    grid = g.build()
    T = grid.t_end
    esc = cfg.geometry.escape_radius
    law = limiting_velocity_law(model)
    p_inf = an.gaussian_cone_probability(law, cone)

    def factory():
        return ([ob.TruncatedConeObserver(cone, R, escape_radius=esc) for R in radii]
                + [ob.AsymptoticIndicatorObserver(cone), ob.LastExitObserver(max(radii))])

    tables = batch_run(model, grid, cfg.n_paths, SeedPolicy(cfg.master_seed), factory, threads)
    cone_tabs, ind_tab, exit_tab = tables[:-2], tables[-2], tables[-1]
    ind = summarize(ind_tab["indicator"])
    tol = cfg.tolerances
    checks, rows = [], []
    disc = _discretization_note(cfg, model)
    v_ind = _compare(cfg, ind, p_inf)
    checks.append(Check("asymptotic indicator vs cone probability", v_ind.passed, v_ind.report(),
                        statistical=_halfwidth_label(cfg), discretization=disc,
                        truncation=f"finite T={T:g}; declared extra {tol.extra_tolerance:g}"))
    ests = []
    for R, fs in zip(radii, cone_tabs):
        est = summarize(fs.net)
        ests.append(est)
        escaped = ob.escape_fraction(fs)
        checks.append(Check(f"telescoping [R={R:g}]", ob.telescoping_holds(fs, cone_convention=True),
                            f"net entries == chi(end) - chi(start) on all {len(fs)} paths"))
        v = _compare(cfg, est, p_inf)
        checks.append(Check(f"truncated-cone net mass vs cone probability [R={R:g}]", v.passed,
                            v.report(), statistical=_halfwidth_label(cfg), discretization=disc,
                            truncation=f"finite T={T:g}, R={R:g}; declared extra {tol.extra_tolerance:g}"))
        v2 = compare_two(est, ind, tol.level, 0.0, tol.n_se)
        checks.append(Check(f"truncated-cone net mass vs asymptotic indicator [R={R:g}]",
                            v2.passed, v2.report(), statistical="combined SE"))
        r_esc = fs_escape_radius(esc, R)
        tail = an.gaussian_ball_probability(law_at(model, T), np.zeros(model.dim), r_esc)
        checks.append(Check(f"truncation diagnostic [R={R:g}]", escaped <= tol.truncation_tol,
                            f"fraction ending inside radius {r_esc:g} = {escaped:.3g} "
                            f"<= {tol.truncation_tol:g} (Gaussian oracle {tail:.3g})",
                            truncation=f"{escaped:.3g}"))
        rows.append((float(R), est.mean, est.std_error, ind.mean, ind.std_error, p_inf, v.label))
    for (R1, e1), (R2, e2) in zip(zip(radii, ests), zip(radii[1:], ests[1:])):
        v = compare_two(e1, e2, tol.level, 0.0, tol.n_se)
        checks.append(Check(f"radius consistency [R={R1:g} vs R={R2:g}]", v.passed, v.report(),
                            statistical="combined SE"))
    late = float(np.mean(exit_tab["last_inside_time"] > T - 1.0))
    floor = an.gaussian_ball_probability(law_at(model, T), np.zeros(model.dim), max(radii))
    checks.append(Check(f"last-exit proxy [R={max(radii):g}]", late <= tol.truncation_tol,
                        f"P(last time inside B_R > T-1) = {late:.3g} <= {tol.truncation_tol:g} "
                        f"(lower bound P(|X_T| < R) = {floor:.3g}); "
                        f"never inside: {float(np.mean(~exit_tab['ever_inside'])):.3g}",
                        truncation=f"{late:.3g}"))
    write_table(out / "asymptotic_flux.csv",
                ("R", "mc_mean", "mc_se", "indicator_mean", "indicator_se", "oracle", "verdict"),
                rows)
    files = [out / "asymptotic_flux.csv"]
    if cfg.cone_limit is not None:
        more, f = _cone_limit(cfg, out, model, cone, p_inf)
        checks += more
        files += f
    if cfg.output.per_path_csv:
        for R, fs in zip(radii, cone_tabs):
            fs.to_csv(out / f"paths_R{R:g}.csv")
            files.append(out / f"paths_R{R:g}.csv")
    return checks, files


def fs_escape_radius(escape_radius, radius):
    return radius if escape_radius is None else escape_radius


def cone_limit_sequence(model, cone, radii, window_scale, quad, time_panels):
    """Cap-surface flux over ``[t0, window_scale * R]`` for each radius."""
    return [an.cone_flux_integral(model, cone, R, model.t0, window_scale * R,
                                  quad.time_order, quad.surface_order, time_panels)
            for R in radii]


def _cone_limit(cfg, out, model, cone, p_inf):
    cl = cfg.cone_limit
    vals = cone_limit_sequence(model, cone, cl.radii, cl.window_scale, cfg.quadrature,
                               cl.time_panels)
    devs = [abs(v - p_inf) for v in vals]
    rows = [(float(R), v, p_inf, d) for R, v, d in zip(cl.radii, vals, devs)]
    write_table(out / "cone_limit.csv", ("R", "integral", "oracle", "abs_diff"), rows)
    seq = ", ".join(f"R={R:g}: {d:.3g}" for R, d in zip(cl.radii, devs))
    tol = cfg.tolerances.cone_limit_tol
    checks = [
        Check("cone integral final deviation", devs[-1] <= tol,
              f"|integral - oracle| at R={cl.radii[-1]:g} is {devs[-1]:.3g} <= {tol:g}",
              truncation=f"window [t0, {cl.window_scale:g} R]"),
        Check("cone integral deviations decrease", all(b < a for a, b in zip(devs, devs[1:])), seq),
    ]
    return checks, [out / "cone_limit.csv"]


def _residuals(cfg: ExperimentConfig, out: Path, threads):
    model = cfg.model.build()
    rs = cfg.residuals
    tol = cfg.tolerances
    rng = np.random.default_rng([cfg.master_seed, 2])
    ts, xs = an.residual_point_sample(model, rs.n_points, rng, rs.t_span)
    funcs = {"continuity": an.continuity_residual, "duality": an.duality_residual,
             "fokker_planck": an.fokker_planck_residual}
    res = {k: np.array([[f(model, t, x, h) for h in (rs.h, rs.h / 2)] for t, x in zip(ts, xs)])
           for k, f in funcs.items()}
    checks = []
    for k, r in res.items():
        a, b = np.abs(r[:, 0]), np.abs(r[:, 1])
        exact = a <= tol.residual_floor
        ok = exact | (b * tol.residual_ratio <= a)
        ratios = a[~exact] / np.maximum(b[~exact], 1e-300)
        worst = f"min ratio {ratios.min():.3g}" if ratios.size else "all residuals at round-off"
        checks.append(Check(f"{k} residual O(h^2)", bool(ok.all()),
                            f"{int(ok.sum())}/{ok.size} points reduce by >= {tol.residual_ratio:g} "
                            f"on halving h (or sit below {tol.residual_floor:g}); {worst}",
                            discretization=f"h={rs.h:g} -> {rs.h / 2:g}"))
        checks.append(Check(f"{k} residual magnitude", bool(a.max() <= tol.residual_tol),
                            f"max |residual| at h={rs.h:g} is {a.max():.3g} <= {tol.residual_tol:g}"))
    d = model.dim
    header = ("t",) + tuple(f"x{i + 1}" for i in range(d)) + tuple(funcs)
    files = []
    for col, name in ((0, "residuals.csv"), (1, "residuals_half_step.csv")):
        rows = [(float(t),) + tuple(float(v) for v in x) + tuple(float(res[k][j, col]) for k in funcs)
                for j, (t, x) in enumerate(zip(ts, xs))]
        write_table(out / name, header, rows)
        files.append(out / name)
    return checks, files


def _limiting_velocity(cfg: ExperimentConfig, out: Path, threads):
    model = cfg.model.build()
    g = cfg.grid
    cps = tuple(g.checkpoints) or (g.t_end,)
    grid = TimeGrid(g.t_start, g.t_end, g.dt, g.stretch, cps)
    (snap,) = batch_run(model, grid, cfg.n_paths, SeedPolicy(cfg.master_seed),
                        lambda: [ob.SnapshotObserver(cps)], threads)
    law_inf = limiting_velocity_law(model)
    checks, rows = [], []
    disc = _discretization_note(cfg, model)
    for j, t in enumerate(cps):
        law = law_at(model, t)
        for i in range(model.dim):
            y = snap[f"x{i + 1}_t{j}"] / t
            m_est, v_est = summarize(y), variance_summary(y)
            vm = _compare(cfg, m_est, law.mean[i] / t)
            vv = _compare(cfg, v_est, law.variance / t**2)
            checks.append(Check(f"mean of X_t/t [t={t:g}, coord {i + 1}]", vm.passed, vm.report(),
                                statistical=_halfwidth_label(cfg), discretization=disc))
            checks.append(Check(f"variance of X_t/t [t={t:g}, coord {i + 1}]", vv.passed, vv.report(),
                                statistical=_halfwidth_label(cfg), discretization=disc))
            rows.append((float(t), i + 1, m_est.mean, m_est.std_error, float(law.mean[i] / t),
                         v_est.mean, v_est.std_error, float(law.variance / t**2),
                         "pass" if vm.passed and vv.passed else "fail"))
    write_table(out / "limiting_velocity.csv",
                ("t", "coord", "mean_mc", "mean_se", "mean_oracle", "var_mc", "var_se",
                 "var_oracle", "verdict"), rows)
    if law_inf is not None:
        kind = "point mass" if law_inf.deterministic else "Gaussian"
        checks.append(Check("limiting velocity law", True,
                            f"{kind} mean={np.array2string(law_inf.mean, precision=6)} "
                            f"variance={law_inf.variance:.6g}"))
    return checks, [out / "limiting_velocity.csv"]


def _lateral_vanishing(cfg: ExperimentConfig, out: Path, threads):
    model = cfg.model.build()
    cone = cfg.geometry.build_cone()
    cl = cfg.cone_limit or ConeLimitSpec()
    q = cfg.quadrature
    vals = [an.lateral_flux_integral(model, cone, R, cl.r_max_scale * R, model.t0,
                                     cl.window_scale * R, True, q.time_order, q.surface_order,
                                     cl.time_panels) for R in cl.radii]
    rows = [(float(R), v, vals[0] / v if v > 0 else math.inf) for R, v in zip(cl.radii, vals)]
    write_table(out / "lateral.csv", ("R", "lateral_abs", "ratio_to_first"), rows)
    ratio = vals[0] / vals[-1] if vals[-1] > 0 else math.inf
    need = cfg.tolerances.lateral_ratio
    checks = [Check(
        "lateral-wall |rho v.n| decrease", ratio >= need,
        f"R={cl.radii[0]:g} -> R={cl.radii[-1]:g}: {vals[0]:.4g} -> {vals[-1]:.4g}, "
        f"ratio {ratio:.3g} (required >= {need:g})",
        truncation=f"window [t0, {cl.window_scale:g} R], wall cut at {cl.r_max_scale:g} R")]
    return checks, [out / "lateral.csv"]


RUNNERS = {
    "boundary_flux": _boundary_flux,
    "asymptotic_flux": _asymptotic_flux,
    "residuals": _residuals,
    "limiting_velocity": _limiting_velocity,
    "lateral_vanishing": _lateral_vanishing,
}


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> RunResult:
    """Run the configured experiment and write ``report.txt`` plus CSV tables."""
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads if threads is not None else cfg.threads
    head = [f"experiment: {cfg.experiment}", f"model: {cfg.model.kind}",
            f"master_seed: {cfg.master_seed}"]
    if cfg.experiment in ("boundary_flux", "asymptotic_flux", "limiting_velocity"):
        head.append(f"n_paths: {cfg.n_paths}")
    try:
        checks, files = RUNNERS[cfg.experiment](cfg, out, threads)
    except (SimulationFault, BatchFault) as exc:
        log.error("simulation fault: %s", exc)
        report = "\n".join(head + [f"SIMULATION FAULT: {exc}", "RESULT: FAULT"]) + "\n"
        (out / "report.txt").write_text(report)
        return RunResult(EXIT_FAULT, [], [out / "report.txt"], report)
    passed = all(c.passed for c in checks)
    code = EXIT_OK if passed else EXIT_VERDICT
    body = [c.line() for c in checks]
    summary = f"RESULT: {'PASS' if passed else 'FAIL'} ({sum(c.passed for c in checks)}/{len(checks)} checks)"
    report = "\n".join(head + [""] + body + ["", summary]) + "\n"
    (out / "report.txt").write_text(report)
    return RunResult(code, checks, files + [out / "report.txt"], report)
