"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` (lines print live) or
``python3 tests/test_acceptance.py``. The lines are also repeated in the
pytest terminal summary. Full suite takes several minutes on one core.
"""

import csv
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fluxlab import analytic as an
from fluxlab import geometry as geo
from fluxlab import models as md
from fluxlab import observers as ob
from fluxlab.config import load_config
from fluxlab.engine import SeedPolicy, TimeGrid, batch_run
from fluxlab.experiments import EXIT_OK, cone_limit_sequence, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: list[str] = []

pytestmark = pytest.mark.acceptance


def record(n, passed, detail):
    line = f"CRITERION {n}: {'PASS' if passed else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


def run_config(name, out, threads=1):
    cfg = load_config(CONFIGS / name).with_overrides(out=out)
    t = time.perf_counter()
    res = run_experiment(cfg, threads=threads)
    return cfg, res, time.perf_counter() - t


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check(res, prefix):
    return [c for c in res.checks if c.name.startswith(prefix)]


@pytest.fixture(scope="module")
def criterion2_run(tmp_path_factory):
    return run_config("boundary_flux_constant.yaml", tmp_path_factory.mktemp("c2_t1"), threads=1)


def test_criterion_1_telescoping():
    n = 10_000
    ball = geo.Ball([0, 0, 0], 1.0)
    box = geo.Box([-0.7, -0.7, -0.7], [0.7, 0.7, 0.7])
    cone = geo.CapCone([1, 0, 0], math.pi / 3)
    # (name, model, grid, [(observer factory, cone convention)])
    cases = [
        ("constant_drift", md.constant_drift([1, 0, 0], [0, 0, 0], 0.25), TimeGrid(0.0, 2.0, 1e-2),
         [(lambda: ob.DomainFluxObserver(ball), False), (lambda: ob.DomainFluxObserver(box), False),
          (lambda: ob.TruncatedConeObserver(cone, 1.0), True)]),
        ("ray", md.ray_model([1, 0, 0], 0.1), TimeGrid(1.0, 21.0, 1e-1),
         [(lambda: ob.DomainFluxObserver(geo.Ball([0, 0, 0], 3.0)), False),
          (lambda: ob.TruncatedConeObserver(cone, 5.0), True),
          (lambda: ob.TruncatedConeObserver(cone, 10.0), True)]),
        ("stationary_symmetric", md.stationary_symmetric(1.0), TimeGrid(0.0, 2.0, 1e-2),
         [(lambda: ob.DomainFluxObserver(ball), False), (lambda: ob.DomainFluxObserver(box), False)]),
    ]
    t0 = time.perf_counter()
    bad = checked = crossings = 0
    for _, model, grid, regions in cases:
        tables = batch_run(model, grid, n, SeedPolicy(2024), lambda: [f() for f, _ in regions])
        for table, (_, cone_conv) in zip(tables, regions):
            s = table["start_member"].astype(int)
            e = table["end_member"].astype(int)
            expected = e - s if cone_conv else s - e
            bad += int(np.sum(table.net != expected))
            bad += int(np.sum(table.net != table.n_plus - table.n_minus))
            checked += len(table)
            crossings += int(table.n_plus.sum() + table.n_minus.sum())
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 10.0
    record(1, ok, f"{checked} path-region pairs over 3 models, {crossings} crossings, "
                  f"{bad} exceptions, {elapsed:.1f} s (< 10 s)")
    assert ok


def test_criterion_1_conventions_explicit():
    # the sign conventions checked above, on paths with known membership
    ball = geo.Ball([0, 0, 0], 1.0)
    cone = geo.CapCone([1, 0, 0], math.pi / 4)
    d = ob.DomainFluxObserver(ball)
    c = ob.TruncatedConeObserver(cone, 2.0)
    xs = [np.array([[0.0, 0, 0]]), np.array([[5.0, 0, 0]])]
    for o in (d, c):
        o.start(0.0, xs[0])
        o.update(0.0, xs[0], 1.0, xs[1])
    assert d.finish(np.arange(1), 1.0, xs[1]).net[0] == 1
    assert c.finish(np.arange(1), 1.0, xs[1]).net[0] == 1


def test_criterion_2_boundary_flux(criterion2_run):
    cfg, res, elapsed = criterion2_run
    mc = check(res, "MC net flux")[0]
    quad = check(res, "quadrature vs probability")[0]
    tele = check(res, "telescoping")[0]
    # the probability oracle is recomputed here, independent of the runner
    m = cfg.model.build()
    oracle = (an.gaussian_ball_probability(md.law_at(m, 0.0), [0, 0, 0], 1.0)
              - an.gaussian_ball_probability(md.law_at(m, 4.0), [0, 0, 0], 1.0))
    row = read_csv(Path(cfg.output.dir) / "boundary_flux.csv")[0]
    mean, se, integral = float(row["mc_mean"]), float(row["mc_se"]), float(row["oracle"])
    ok_mc = abs(mean - integral) <= 3 * se + 1e-3
    ok_q = abs(integral - oracle) <= 1e-6
    ok = ok_mc and ok_q and mc.passed and quad.passed and tele.passed and elapsed < 300
    record(2, ok, f"MC {mean:.5f} +- {se:.5f} vs integral {integral:.10f} "
                  f"(|diff| {abs(mean - integral):.2e} <= {3 * se + 1e-3:.2e}); "
                  f"integral vs ball oracle {abs(integral - oracle):.1e} <= 1e-6; {elapsed:.0f} s")
    assert ok


def test_criterion_3_zero_flux(tmp_path):
    cfg, res, _ = run_config("zero_flux_stationary.yaml", tmp_path)
    m = cfg.model.build()
    rng = np.random.default_rng(3)
    worst = 0.0
    for order in (8, 24):
        q = geo.boundary_quadrature(geo.Ball([0, 0, 0], 1.0), order)
        for t in rng.uniform(0, 50, 20):
            worst = max(worst, float(np.abs(an.flux_density(m, t, q.nodes, q.normals)).max()))
    x = rng.normal(size=(5000, 3)) * 3
    n = rng.normal(size=(5000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    worst = max(worst, float(np.abs(an.flux_density(m, 1.0, x, n)).max()))
    rows = read_csv(Path(cfg.output.dir) / "boundary_flux.csv")
    within = [abs(float(r["mc_mean"])) <= 3 * float(r["mc_se"]) for r in rows]
    ok = worst <= 1e-12 and all(within) and res.exit_code == EXIT_OK
    detail = ", ".join(f"t={float(r['t_b']):g}: {float(r['mc_mean']):+.5f} (3 SE {3 * float(r['mc_se']):.5f})"
                       for r in rows)
    record(3, ok, f"max |rho v.n| sampled {worst:.1e} <= 1e-12; MC net flux {detail}")
    assert ok


def test_criterion_4_limiting_velocity(tmp_path):
    cfg, res, _ = run_config("limiting_velocity_ray.yaml", tmp_path)
    s0, t0 = 0.1, 1.0
    xbar = np.array([1.0, 0.0, 0.0])
    fails, worst = 0, 0.0
    for r in read_csv(Path(cfg.output.dir) / "limiting_velocity.csv"):
        t, i = float(r["t"]), int(r["coord"]) - 1
        var_oracle = s0 / t0**2 + (1 / t0 - 1 / t)
        dv = abs(float(r["var_mc"]) - var_oracle) / float(r["var_se"])
        dm = abs(float(r["mean_mc"]) - xbar[i] / t0) / float(r["mean_se"])
        worst = max(worst, dv, dm)
        fails += (dv > 4) + (dm > 4)
    ok = fails == 0 and res.exit_code == EXIT_OK
    record(4, ok, f"12 mean/variance checks at t in {{10, 100}}, largest deviation {worst:.2f} SE (<= 4)")
    assert ok


def test_criterion_5_asymptotic_flux(tmp_path):
    cfg, res, _ = run_config("asymptotic_flux_ray.yaml", tmp_path)
    law = md.limiting_velocity_law(cfg.model.build())
    cone = cfg.geometry.build_cone()
    p_inf = an.gaussian_cone_probability(law, cone)
    # brute-force cross-check of the oracle itself
    rng = np.random.default_rng(55)
    draws = law.mean + law.std * rng.standard_normal((2_000_000, 3))
    p_mc = float(np.mean(cone.contains(draws)))
    oracle_ok = abs(p_mc - p_inf) <= 4 * math.sqrt(p_mc * (1 - p_mc) / draws.shape[0])
    row = read_csv(Path(cfg.output.dir) / "asymptotic_flux.csv")[0]
    net, se = float(row["mc_mean"]), float(row["mc_se"])
    ind, ise = float(row["indicator_mean"]), float(row["indicator_se"])
    agree = abs(net - ind) <= 3 * math.hypot(se, ise)
    net_ok = abs(net - p_inf) <= 3 * se + 1e-2
    ind_ok = abs(ind - p_inf) <= 3 * ise + 1e-2
    ok = agree and net_ok and ind_ok and oracle_ok
    record(5, ok, f"R=20, T=100: net mass {net:.5f}, indicator {ind:.5f} "
                  f"(|diff| {abs(net - ind):.1e} <= {3 * math.hypot(se, ise):.1e}); "
                  f"cone probability {p_inf:.5f} (plain MC {p_mc:.5f}); report exit {res.exit_code}")
    assert ok


def test_criterion_6_cone_limit():
    model = md.ray_model([1.0, 0.0, 0.0], 0.1, t0=1.0)
    cone = geo.CapCone([1, 0, 0], math.pi / 3)
    cfg = load_config(CONFIGS / "asymptotic_flux_ray.yaml")
    cl = cfg.cone_limit
    vals = cone_limit_sequence(model, cone, cl.radii, cl.window_scale, cfg.quadrature,
                               cl.time_panels)
    p_inf = an.gaussian_cone_probability(md.limiting_velocity_law(model), cone)
    devs = [abs(v - p_inf) for v in vals]
    ok = devs[-1] <= 1e-2 and all(b < a for a, b in zip(devs, devs[1:]))
    seq = ", ".join(f"R={R:g}: {d:.4f}" for R, d in zip(cl.radii, devs))
    record(6, ok, f"|cone integral - {p_inf:.5f}|: {seq}; windows [1, {cl.window_scale:g} R]")
    assert ok


def test_criterion_7_lateral_vanishing(tmp_path):
    cfg, res, _ = run_config("lateral_vanishing_ray.yaml", tmp_path)
    rows = read_csv(Path(cfg.output.dir) / "lateral.csv")
    vals = [float(r["lateral_abs"]) for r in rows]
    ratio = vals[0] / vals[-1]
    ok = ratio >= 10.0
    record(7, ok, f"lateral |rho v.n| R=10 -> 40: {vals[0]:.4g} -> {vals[-1]:.4g}, "
                  f"ratio {ratio:.2f} (required >= 10)")
    assert ok


def test_criterion_8_residuals(tmp_path):
    summary, ok = [], True
    for name in ("residuals_constant.yaml", "residuals_ray.yaml", "residuals_stationary.yaml"):
        cfg, res, _ = run_config(name, tmp_path / name)
        full = read_csv(Path(cfg.output.dir) / "residuals.csv")
        half = read_csv(Path(cfg.output.dir) / "residuals_half_step.csv")
        assert len(full) == 100
        for kind in ("continuity", "duality", "fokker_planck"):
            a = np.abs([float(r[kind]) for r in full])
            b = np.abs([float(r[kind]) for r in half])
            exact = a <= cfg.tolerances.residual_floor
            good = exact | (a >= 3.5 * b)
            ok &= bool(good.all())
            ratio = (a[~exact] / b[~exact]).min() if (~exact).any() else math.inf
            summary.append(f"{cfg.model.kind}/{kind} "
                           + (f"min ratio {ratio:.2f}" if math.isfinite(ratio) else "round-off"))
        ok &= res.exit_code == EXIT_OK
    record(8, ok, "; ".join(summary))
    assert ok


def test_criterion_9_reproducibility(criterion2_run, tmp_path):
    cfg, _, _ = criterion2_run
    _, _, _ = run_config("boundary_flux_constant.yaml", tmp_path, threads=2)
    names = sorted(p.name for p in Path(cfg.output.dir).glob("*.csv"))
    same = [(Path(cfg.output.dir) / n).read_bytes() == (tmp_path / n).read_bytes() for n in names]
    ok = bool(names) and all(same)
    record(9, ok, f"{len(names)} CSV file(s) byte-identical across 1 and 2 threads: {names}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
