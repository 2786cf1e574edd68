"""Deterministic flux integrals and Gaussian oracles for the closed-form models.

A flux integral is ``int_{t_a}^{t_b} int_S rho(t, x) v(t, x) . n(x) dsigma dt``
evaluated with composite Gauss-Legendre in time and a product surface rule.
By the continuity equation the boundary version equals
``P(X_{t_a} in D) - P(X_{t_b} in D)``, which gives an independent check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special, stats
from scipy.stats import qmc

from . import geometry as geo
from .models import (DensityUnderflowError, DiffusionModel, GaussianLaw,
                     UnsupportedModelError, current_velocity, density,
                     dual_drift, law_at, log_density)

LOG_FLUSH = -700.0
DENSITY_FLOOR = 1e-300


def _require(model: DiffusionModel):
    if not model.closed_form:
        raise UnsupportedModelError(f"model {model.name!r} has no closed-form law")
    if model.dim != 3:
        raise geo.GeometryError("surface flux integrals are implemented for d=3")


def flux_density(model: DiffusionModel, t: float, nodes, normals) -> np.ndarray:
    """``rho v . n`` at surface nodes, assembled in log space."""
    logr = log_density(model, t, nodes)
    vn = np.einsum("ij,ij->i", current_velocity(model, t, nodes), normals)
    rho = np.where(logr < LOG_FLUSH, 0.0, np.exp(np.maximum(logr, LOG_FLUSH)))
    return rho * vn


def surface_flux_rate(model, t, quad: geo.SurfaceQuadrature, absolute=False) -> float:
    vals = flux_density(model, t, quad.nodes, quad.normals)
    if absolute:
        vals = np.abs(vals)
    return math.fsum(quad.weights * vals)


def time_panels(t_a, t_b, panels, spacing="auto"):
    """Panel edges on ``[t_a, t_b]``; geometric when the window spans decades."""
    if spacing == "auto":
        spacing = "geometric" if t_a > 0 and t_b / t_a > 10 else "uniform"
    if spacing == "geometric":
        return np.geomspace(t_a, t_b, panels + 1)
    return np.linspace(t_a, t_b, panels + 1)


def _time_integral(rate, t_a, t_b, order, panels, spacing="auto") -> float:
    if t_b < t_a:
        raise ValueError("time window must satisfy t_a <= t_b")
    if t_b == t_a:
        return 0.0
    edges = time_panels(t_a, t_b, panels, spacing)
    parts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        ts, ws = geo.gauss_legendre(order, lo, hi)
        parts.extend(w * rate(t) for t, w in zip(ts, ws))
    return math.fsum(parts)


def _check_window(model, t_a, t_b, time_order, surface_order):
    if t_a < model.t0:
        raise ValueError(f"window start {t_a} precedes model start {model.t0}")
    if time_order < 2 or surface_order < 2:
        raise ValueError("quadrature orders must be at least 2")


def boundary_flux_integral(model: DiffusionModel, domain, t_a: float, t_b: float,
                           time_order: int = 16, surface_order: int = 24,
                           time_panels: int = 8, spacing: str = "auto") -> float:
    """Finite-window outward flux of ``rho v`` through the boundary of ``domain``."""
    _require(model)
    _check_window(model, t_a, t_b, time_order, surface_order)
    quad = geo.boundary_quadrature(domain, surface_order)
    return _time_integral(lambda t: surface_flux_rate(model, t, quad),
                          t_a, t_b, time_order, time_panels, spacing)


def cone_flux_integral(model: DiffusionModel, cone: geo.CapCone, radius: float,
                       t_a: float, t_b: float, time_order: int = 16,
                       surface_order: int = 32, time_panels: int = 16,
                       spacing: str = "auto") -> float:
    """Flux of ``rho v`` through ``cone ∩ S_radius`` along the radial normal."""
    _require(model)
    _check_window(model, t_a, t_b, time_order, surface_order)
    quad = geo.cap_quadrature(cone, radius, surface_order)
    return _time_integral(lambda t: surface_flux_rate(model, t, quad),
                          t_a, t_b, time_order, time_panels, spacing)


def lateral_flux_integral(model: DiffusionModel, cone: geo.CapCone, r_min: float,
                          r_max: float, t_a: float, t_b: float, absolute: bool = True,
                          time_order: int = 16, surface_order: int = 32,
                          time_panels: int = 16, radial_panels: int = 8,
                          spacing: str = "auto") -> float:
    """Integral of ``|rho v . n|`` (or the signed flux) over the cone wall.

    The wall is cut to radii ``[r_min, r_max]``; normals point out of the cone.
    """
    _require(model)
    _check_window(model, t_a, t_b, time_order, surface_order)
    quad = geo.lateral_quadrature(cone, r_min, r_max, surface_order, radial_panels)
    return _time_integral(lambda t: surface_flux_rate(model, t, quad, absolute),
                          t_a, t_b, time_order, time_panels, spacing)


# --------------------------------------------------------------------------
# Gaussian region probabilities


def gaussian_ball_probability(law: GaussianLaw, center, radius: float) -> float:
    """``P(|X - center| < radius)`` via the noncentral chi-square law."""
    center = np.asarray(center, dtype=float)
    if law.deterministic:
        return float(np.sum((law.mean - center) ** 2) < radius**2)
    nc = float(np.sum((law.mean - center) ** 2)) / law.variance
    x = radius**2 / law.variance
    if nc == 0:
        return float(stats.chi2.cdf(x, law.dim))
    return float(stats.ncx2.cdf(x, law.dim, nc))


def gaussian_box_probability(law: GaussianLaw, box: geo.Box) -> float:
    if law.deterministic:
        return float(box.contains(law.mean))
    s = law.std
    p = special.ndtr((box.hi - law.mean) / s) - special.ndtr((box.lo - law.mean) / s)
    return float(np.prod(p))


def region_probability(law: GaussianLaw, domain) -> float:
    if isinstance(domain, geo.Ball):
        return gaussian_ball_probability(law, domain.center, domain.radius)
    if isinstance(domain, geo.Box):
        return gaussian_box_probability(law, domain)
    raise geo.UnsupportedDomainError(f"no Gaussian probability for {type(domain).__name__}")


def flux_tail_bound(model: DiffusionModel, domain, t_b: float) -> float:
    """Mass still inside ``domain`` at ``t_b``: bounds the flux after the window."""
    return region_probability(law_at(model, t_b), domain)


def _angular_density(cos_beta, m_norm: float, a: float) -> np.ndarray:
    """Mass per unit solid angle of ``N(m, I)`` beyond radius ``a``.

    ``cos_beta`` is the cosine of the angle to the mean direction and
    ``m_norm = |m|``; lengths are in units of the standard deviation.
    """
    k = m_norm * np.asarray(cos_beta, dtype=float)
    c = a - k
    radial = (1 + k * k) * special.ndtr(-c) + (c + 2 * k) * np.exp(-0.5 * c * c) / math.sqrt(2 * math.pi)
    return np.exp(-0.5 * (m_norm * m_norm - k * k)) * radial / (2 * math.pi)


def gaussian_truncated_cap_probability(law: GaussianLaw, cone: geo.CapCone, radius: float = 0.0,
                                       order: int = 200) -> float:
    """``P(X in cone, |X| > radius)`` for an isotropic Gaussian in ``R^3``."""
    if cone.dim != 3 or law.dim != 3:
        raise geo.GeometryError("cap probabilities are implemented for d=3")
    if law.deterministic:
        x = law.mean
        return float(cone.contains(x) and float(np.dot(x, x)) > radius**2)
    s = law.std
    m_norm = float(np.linalg.norm(law.mean)) / s
    a = radius / s
    cos_a = math.cos(cone.half_angle)
    if m_norm == 0:
        return float(_angular_density(1.0, 0.0, a)) * 2 * math.pi * (1 - cos_a)
    mhat = law.mean / np.linalg.norm(law.mean)
    along = float(np.dot(mhat, cone.axis))
    if abs(abs(along) - 1) < 1e-13:
        sign = 1.0 if along > 0 else -1.0
        # integrate over u = cos(angle to the cone axis)
        f = lambda u: float(_angular_density(sign * u, m_norm, a))
        val, _ = integrate.quad(f, cos_a, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
        return min(max(2 * math.pi * val, 0.0), 1.0)
    q = geo.cap_quadrature(cone, 1.0, order)
    vals = _angular_density(q.nodes @ mhat, m_norm, a)
    return min(max(math.fsum(q.weights * vals), 0.0), 1.0)


def gaussian_cone_probability(law: GaussianLaw, cone, return_error: bool = False,
                              qmc_points: int = 2**14, qmc_replicates: int = 16,
                              seed: int = 0):
    """``P(X in cone)`` for ``X ~ law``.

    Exact one-dimensional quadrature for circular cones in ``R^3``, the normal
    CDF for half-spaces, randomised quasi-Monte Carlo otherwise; with
    ``return_error=True`` the standard error (0 for deterministic methods) is
    returned too.
    """
    err = 0.0
    if law.deterministic:
        p = float(cone.contains(law.mean))
    elif isinstance(cone, geo.HalfSpaceCone):
        p = float(special.ndtr(float(np.dot(law.mean, cone.normal)) / law.std))
    elif isinstance(cone, geo.CapCone) and law.dim == 3:
        p = gaussian_truncated_cap_probability(law, cone, 0.0)
    else:
        p, err = _qmc_cone_probability(law, cone, qmc_points, qmc_replicates, seed)
    return (p, err) if return_error else p


def _qmc_cone_probability(law, cone, n, reps, seed):
    ests = []
    for r in range(reps):
        u = qmc.Sobol(law.dim, scramble=True, seed=np.random.default_rng([seed, r])).random(n)
        z = special.ndtri(np.clip(u, 1e-16, 1 - 1e-16))
        ests.append(float(np.mean(cone.contains(law.mean + law.std * z))))
    ests = np.array(ests)
    return float(ests.mean()), float(ests.std(ddof=1) / math.sqrt(reps))


# --------------------------------------------------------------------------
# finite-difference residuals of the density/velocity identities


def _guard(model, t, x):
    r = float(density(model, t, x))
    if not r > DENSITY_FLOOR:
        raise DensityUnderflowError(f"density {r:.3g} too small at t={t}")
    return r


def _axis_steps(d, h):
    return [h * e for e in np.eye(d)]


def continuity_residual(model: DiffusionModel, t: float, x, h: float) -> float:
    """``d_t rho + div(rho v)`` by central differences with step ``h``."""
    x = np.asarray(x, dtype=float)
    _guard(model, t, x)
    dt = (density(model, t + h, x) - density(model, t - h, x)) / (2 * h)
    div = 0.0
    for i, e in enumerate(_axis_steps(model.dim, h)):
        fp = density(model, t, x + e) * current_velocity(model, t, x + e)[i]
        fm = density(model, t, x - e) * current_velocity(model, t, x - e)[i]
        div += (fp - fm) / (2 * h)
    return float(dt + div)


def fokker_planck_residual(model: DiffusionModel, t: float, x, h: float) -> float:
    """``d_t rho + div(rho b) - lap(rho) / 2`` by central differences."""
    x = np.asarray(x, dtype=float)
    r0 = _guard(model, t, x)
    dt = (density(model, t + h, x) - density(model, t - h, x)) / (2 * h)
    div = lap = 0.0
    for i, e in enumerate(_axis_steps(model.dim, h)):
        rp, rm = density(model, t, x + e), density(model, t, x - e)
        div += (rp * model.drift(t, x + e)[i] - rm * model.drift(t, x - e)[i]) / (2 * h)
        lap += (rp - 2 * r0 + rm) / (h * h)
    return float(dt + div - 0.5 * lap)


def duality_residual(model: DiffusionModel, t: float, x, h: float) -> float:
    """``|(b - b*) - grad_h log rho|`` with a central-difference gradient."""
    x = np.asarray(x, dtype=float)
    _guard(model, t, x)
    grad = np.array([(log_density(model, t, x + e) - log_density(model, t, x - e)) / (2 * h)
                     for e in _axis_steps(model.dim, h)])
    diff = model.drift(t, x) - dual_drift(model, t, x)
    return float(np.linalg.norm(diff - grad))


def residual_point_sample(model: DiffusionModel, n: int, rng: np.random.Generator,
                          t_span: float = 10.0, t_margin: float = 0.1, spread: float = 2.0):
    """Random ``(t, x)`` with ``t`` in ``(t0 + margin, t0 + span]`` and ``x`` near the bulk."""
    ts = model.t0 + t_margin + (t_span - t_margin) * (1 - rng.random(n))
    xs = np.empty((n, model.dim))
    for j, t in enumerate(ts):
        law = law_at(model, t)
        xs[j] = law.mean + spread * law.std * rng.uniform(-1, 1, model.dim)
    return ts, xs


__all__ = [
    "boundary_flux_integral", "cone_flux_integral", "lateral_flux_integral",
    "gaussian_cone_probability", "gaussian_truncated_cap_probability",
    "gaussian_ball_probability", "gaussian_box_probability", "region_probability",
    "flux_tail_bound", "flux_density", "surface_flux_rate",
    "continuity_residual", "duality_residual", "fokker_planck_residual",
    "residual_point_sample",
]
