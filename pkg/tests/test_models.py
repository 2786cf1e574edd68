import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxlab import models as md
from fluxlab.engine import SeedPolicy, TimeGrid, batch_run
from fluxlab.observers import SnapshotObserver
from fluxlab.stats import compare, summarize, variance_summary


def closed_form_models():
    return [
        md.constant_drift([1.0, -0.5, 0.25], [0.3, 0.0, -0.2], 0.25),
        md.ray_model([1.0, 0.0, 0.0], 0.1, t0=1.0),
        md.stationary_symmetric(0.7),
    ]


def test_drift_examples():
    assert np.array_equal(md.eval_drift(md.constant_drift([1, 0, 0]), 3.7, [5, 6, 7]), [1, 0, 0])
    ray = md.ray_model([1, 0, 0], 0.1)
    assert np.allclose(md.eval_drift(ray, 2.0, [4, 0, 0]), [2, 0, 0])
    ou = md.stationary_symmetric(1.0)
    assert np.allclose(md.eval_drift(ou, 1.0, [1, 1, 0]), [-1, -1, 0])


def test_drift_domain_errors():
    with pytest.raises(md.ModelDomainError):
        md.eval_drift(md.ray_model([1, 0, 0], 0.1, t0=1.0), 0.5, [1, 0, 0])
    with pytest.raises(md.ModelDomainError):
        md.eval_drift(md.constant_drift([1, 0, 0], t0=2.0), 1.0, [0, 0, 0])
    with pytest.raises(md.ModelDomainError):
        md.ray_model([1, 0, 0], 0.1, t0=0.0)


def test_density_constant_drift_small_variance():
    c = np.array([1.0, 2.0, -1.0])
    m0 = np.array([0.5, 0.0, 0.0])
    m = md.constant_drift(c, m0, 1e-6)
    # variance 1 + 1e-6 at t0 + 1, evaluated at the mean
    expected = (2 * math.pi * (1 + 1e-6)) ** -1.5
    assert md.density(m, 1.0, m0 + c) == pytest.approx(expected, rel=1e-14)
    assert md.density(m, 1.0, m0 + c) == pytest.approx((2 * math.pi) ** -1.5, rel=2e-6)


def test_density_stationary_mode():
    m = md.stationary_symmetric(0.5)
    for t in (0.0, 3.0, 100.0):
        assert md.density(m, t, [0, 0, 0]) == pytest.approx((2 * math.pi) ** -1.5, rel=1e-14)


def test_density_ray_peak():
    m = md.ray_model([1.0, 0.0, 0.0], 1e-12, t0=1.0)
    law = md.law_at(m, 2.0)
    assert law.variance == pytest.approx(2.0, rel=1e-10)
    assert md.density(m, 2.0, [2.0, 0, 0]) == pytest.approx((4 * math.pi) ** -1.5, rel=1e-10)


def test_density_mc_cross_check():
    # sample moments of simulated X_t against the closed-form law
    m = md.ray_model([0.0, 0.0, 0.0], 1e-6, t0=1.0)
    grid = TimeGrid(1.0, 2.0, 1e-3)
    (snap,) = batch_run(m, grid, 4000, SeedPolicy(5), lambda: [SnapshotObserver()])
    law = md.law_at(m, 2.0)
    for i in range(3):
        x = snap[f"x{i + 1}"]
        assert compare(summarize(x), law.mean[i], n_se=4).passed
        assert compare(variance_summary(x), law.variance, n_se=4).passed


def test_point_mass_has_no_density():
    m = md.constant_drift([1, 0, 0], [0, 0, 0], 0.0)
    assert md.law_at(m, 0.0).deterministic
    with pytest.raises(md.ModelDomainError):
        md.density(m, 0.0, [0, 0, 0])
    assert md.density(m, 1.0, [1, 0, 0]) == pytest.approx((2 * math.pi) ** -1.5)


def test_stationary_current_velocity_zero(rng):
    m = md.stationary_symmetric(1.3)
    x = rng.normal(size=(50, 3)) * 4
    for t in (0.0, 1.0, 50.0):
        assert np.array_equal(md.current_velocity(m, t, x), np.zeros_like(x))


def test_constant_drift_current_velocity_at_mean():
    c = np.array([1.0, 0.0, 0.5])
    m = md.constant_drift(c, [1.0, 1.0, 1.0], 0.25)
    for t in (0.1, 1.0, 4.0):
        mean = md.law_at(m, t).mean
        assert np.allclose(md.current_velocity(m, t, mean), c, atol=0, rtol=0)


def test_osmotic_matches_finite_difference(rng):
    m = md.constant_drift([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.25)
    h = 1e-4
    for _ in range(20):
        t = rng.uniform(0.1, 5)
        x = rng.normal(size=3)
        fd = np.array([(md.log_density(m, t, x + h * e) - md.log_density(m, t, x - h * e)) / (2 * h)
                       for e in np.eye(3)])
        assert np.allclose(md.osmotic_velocity(m, t, x), 0.5 * fd, atol=1e-8)


@pytest.mark.parametrize("model", closed_form_models(), ids=lambda m: m.kind.value)
def test_decomposition_exact(model, rng):
    for _ in range(1000):
        t = model.t0 + rng.uniform(1e-6, 10)
        x = rng.normal(size=3) * 5
        u = md.osmotic_velocity(model, t, x)
        v = md.current_velocity(model, t, x)
        b = md.eval_drift(model, t, x)
        bs = md.dual_drift(model, t, x)
        scale = max(1.0, float(np.abs(b).max()), float(np.abs(u).max()))
        assert np.abs(u + v - b).max() <= 4 * np.finfo(float).eps * scale
        assert np.abs(bs - (v - u)).max() <= 4 * np.finfo(float).eps * scale


def test_velocity_field_bundle():
    m = md.ray_model([1, 0, 0], 0.1)
    vf = md.VelocityField(m)
    x = np.array([2.0, 1.0, 0.0])
    assert np.allclose(vf.current(3.0, x) + vf.osmotic(3.0, x), x / 3.0)
    assert np.allclose(vf.dual_drift(3.0, x), md.dual_drift(m, 3.0, x))


def test_limiting_velocity_laws():
    ray = md.ray_model([0.0, 0.0, 0.0], 1e-12, t0=1.0)
    law = md.limiting_velocity_law(ray)
    assert np.allclose(law.mean, 0) and law.variance == pytest.approx(1.0)
    law = md.limiting_velocity_law(md.constant_drift([2.0, 0, 0]))
    assert law.deterministic and np.array_equal(law.mean, [2, 0, 0])
    assert md.limiting_velocity_law(md.stationary_symmetric(1.0)) is None


def test_limiting_velocity_mc_cross_check():
    ray = md.ray_model([0.0, 0.0, 0.0], 1e-12, t0=1.0)
    grid = TimeGrid(1.0, 100.0, 1e-2, stretch=5e-3)
    (snap,) = batch_run(ray, grid, 4000, SeedPolicy(9), lambda: [SnapshotObserver()])
    v = snap["x1"] / 100.0
    # Var(X_T / T) = 1 - 1/T for this law
    assert compare(variance_summary(v), 1 - 1 / 100, n_se=4).passed


def test_custom_model_has_no_analytics():
    m = md.custom_model(lambda t, x: -x ** 3, 3)
    assert np.allclose(m.drift(0.0, np.ones(3)), -1)
    with pytest.raises(md.UnsupportedModelError):
        md.law_at(m, 1.0)
    with pytest.raises(md.UnsupportedModelError):
        md.limiting_velocity_law(m)
    with pytest.raises(md.UnsupportedModelError):
        md.density(m, 1.0, np.zeros(3))


def test_gaussian_law_validation():
    with pytest.raises(ValueError):
        md.GaussianLaw([0, 0], 0.0)
    with pytest.raises(ValueError):
        md.GaussianLaw([0, np.nan], 1.0)
    law = md.GaussianLaw([1.0, 2.0], 4.0)
    assert np.allclose(law.sample(np.ones((2, 2))), [[3, 4], [3, 4]])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 5), st.floats(0.01, 20), st.floats(-3, 3))
def test_ray_law_variance_formula(s0, tau, m):
    model = md.ray_model([m, 0.0, 0.0], s0, t0=1.0)
    t = 1.0 + tau
    law = md.law_at(model, t)
    assert law.variance == pytest.approx(t * t * s0 + t * tau, rel=1e-12)
    assert law.mean[0] == pytest.approx(t * m, rel=1e-12, abs=1e-300)
