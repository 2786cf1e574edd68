"""Bounded domains, open cones and surface quadrature rules.

Membership follows the open-set convention everywhere: boundary points are
outside. All membership tests are vectorised over a trailing coordinate axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class GeometryError(ValueError):
    pass


class UnsupportedDomainError(GeometryError):
    pass


class DegenerateNormalError(GeometryError):
    pass


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    n = np.linalg.norm(v)
    if not n > 0:
        raise GeometryError("direction vector must be nonzero")
    out = v / n
    out.setflags(write=False)
    return out


def _frozen(v) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center))
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def bounding_radius(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def contains(self, x) -> np.ndarray:
        y = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,...i->...", y, y) < self.radius**2

    def outward_normal(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.center
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def surface_measure(self):
        d = self.dim
        return 2 * math.pi ** (d / 2) / math.gamma(d / 2) * self.radius ** (d - 1)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _frozen(self.lo))
        object.__setattr__(self, "hi", _frozen(self.hi))
        if self.lo.shape != self.hi.shape or not np.all(self.lo < self.hi):
            raise GeometryError("box needs lo < hi componentwise")

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def bounding_radius(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lo) & (x < self.hi), axis=-1)

    def outward_normal(self, x) -> np.ndarray:
        # the smallest axis index among the active faces wins at edges and corners
        x = np.asarray(x, dtype=float)
        scale = float(np.max(self.hi - self.lo))
        gap_lo = np.abs(x - self.lo)
        gap_hi = np.abs(x - self.hi)
        gap = np.minimum(gap_lo, gap_hi)
        axis = np.argmax(gap <= 1e-8 * scale, axis=-1)
        if not np.all(np.take_along_axis(gap, axis[..., None], -1) <= 1e-8 * scale):
            raise GeometryError("point is not on the box boundary")
        sign = np.where(
            np.take_along_axis(gap_hi, axis[..., None], -1)[..., 0]
            <= np.take_along_axis(gap_lo, axis[..., None], -1)[..., 0],
            1.0, -1.0,
        )
        n = np.zeros(x.shape)
        np.put_along_axis(n, axis[..., None], sign[..., None], -1)
        return n

    def surface_measure(self):
        side = self.hi - self.lo
        return float(sum(2 * np.prod(np.delete(side, i)) for i in range(self.dim)))


@dataclass(frozen=True)
class Implicit:
    """``{phi < 0}`` for a level-set function ``phi``, inside a bounding ball."""

    phi: Callable[[np.ndarray], np.ndarray]
    dim: int
    bounding_radius: float
    fd_step: float = 1e-6

    def __post_init__(self):
        if not (self.bounding_radius > 0 and math.isfinite(self.bounding_radius)):
            raise GeometryError("implicit domain needs a finite bounding radius")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (np.asarray(self.phi(x)) < 0) & (
            np.sum(x * x, axis=-1) < self.bounding_radius**2
        )

    def outward_normal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = self.fd_step * max(1.0, self.bounding_radius)
        grad = np.empty(x.shape)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            grad[..., i] = (np.asarray(self.phi(x + e)) - np.asarray(self.phi(x - e))) / (2 * h)
        norm = np.linalg.norm(grad, axis=-1, keepdims=True)
        if np.any(norm < 1e-12):
            raise DegenerateNormalError("level-set gradient vanishes")
        return grad / norm


Domain = Ball | Box | Implicit


def contains(domain, x) -> np.ndarray:
    return domain.contains(x)


def outward_normal(domain, x) -> np.ndarray:
    return domain.outward_normal(x)


# --------------------------------------------------------------------------
# cones


def _angle_to(x: np.ndarray, axis: np.ndarray) -> np.ndarray:
    along = x @ axis
    perp = np.linalg.norm(x - along[..., None] * axis, axis=-1)
    return np.arctan2(perp, along)


@dataclass(frozen=True)
class CapCone:
    """Circular cone of half-angle ``half_angle`` around ``axis``."""

    axis: np.ndarray
    half_angle: float

    def __post_init__(self):
        object.__setattr__(self, "axis", _unit(self.axis))
        if not (0 < self.half_angle <= math.pi):
            raise GeometryError("half-angle must lie in (0, pi]")

    @property
    def dim(self):
        return self.axis.shape[0]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        nonzero = np.any(x != 0, axis=-1)
        return nonzero & (_angle_to(x, self.axis) < self.half_angle)


@dataclass(frozen=True)
class HalfSpaceCone:
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "normal", _unit(self.normal))

    @property
    def dim(self):
        return self.normal.shape[0]

    def contains(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.normal > 0


@dataclass(frozen=True)
class PolyCone:
    """Intersection of open half-spaces through the origin."""

    normals: np.ndarray

    def __post_init__(self):
        n = np.array([_unit(v) for v in np.atleast_2d(self.normals)])
        n.setflags(write=False)
        object.__setattr__(self, "normals", n)

    @property
    def dim(self):
        return self.normals.shape[1]

    def contains(self, x) -> np.ndarray:
        return np.all(np.asarray(x, dtype=float) @ self.normals.T > 0, axis=-1)


Cone = CapCone | HalfSpaceCone | PolyCone


def cone_contains(cone, x) -> np.ndarray:
    return cone.contains(x)


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class SurfaceQuadrature:
    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray

    @property
    def measure(self) -> float:
        return math.fsum(self.weights)

    def integrate(self, f) -> float:
        """Integrate ``f(nodes)`` (or precomputed node values) against the weights."""
        vals = f(self.nodes) if callable(f) else np.asarray(f)
        return math.fsum(self.weights * vals)

    def to_csv(self, path):
        d = self.nodes.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(d)] + ["w"] + [f"n{i + 1}" for i in range(d)])
            for x, wt, n in zip(self.nodes, self.weights, self.normals):
                w.writerow([repr(float(v)) for v in x] + [repr(float(wt))]
                           + [repr(float(v)) for v in n])


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _orthonormal_frame(axis: np.ndarray):
    """Two unit vectors completing ``axis`` to a right-handed basis of R^3."""
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def _spherical_patch(axis, cos_lo, radius, order):
    """Product rule on ``{angle(x, axis) < alpha}`` of the sphere ``S_radius``.

    Gauss-Legendre in ``cos(polar angle)`` times a periodic trapezoid in the
    azimuth; the azimuthal rule is exact for trigonometric degree < 2n.
    """
    n = max(int(order), 2)
    u, wu = gauss_legendre(n, cos_lo, 1.0)
    m = 2 * n
    phi = 2 * math.pi * np.arange(m) / m
    U, P = np.meshgrid(u, phi, indexing="ij")
    W = np.outer(wu, np.full(m, 2 * math.pi / m)) * radius**2
    s = np.sqrt(np.clip(1.0 - U * U, 0.0, None))
    e1, e2 = _orthonormal_frame(axis)
    dirs = (U[..., None] * axis + (s * np.cos(P))[..., None] * e1
            + (s * np.sin(P))[..., None] * e2).reshape(-1, 3)
    return SurfaceQuadrature(radius * dirs, W.reshape(-1), dirs)


def boundary_quadrature(domain, order: int) -> SurfaceQuadrature:
    if isinstance(domain, Ball):
        if domain.dim != 3:
            raise UnsupportedDomainError("ball quadrature is implemented for d=3")
        q = _spherical_patch(np.array([0.0, 0.0, 1.0]), -1.0, domain.radius, order)
        return SurfaceQuadrature(q.nodes + domain.center, q.weights, q.normals)
    if isinstance(domain, Box):
        return _box_quadrature(domain, order)
    raise UnsupportedDomainError(f"no boundary quadrature for {type(domain).__name__}")


def _box_quadrature(box: Box, order: int) -> SurfaceQuadrature:
    d = box.dim
    n = max(int(order), 2)
    nodes, weights, normals = [], [], []
    for axis in range(d):
        others = [i for i in range(d) if i != axis]
        rules = [gauss_legendre(n, box.lo[i], box.hi[i]) for i in others]
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrid = np.ones_like(grids[0]) if grids else np.ones(())
        for r, g in zip(rules, np.meshgrid(*[r[1] for r in rules], indexing="ij")):
            wgrid = wgrid * g
        for side, value in ((-1.0, box.lo[axis]), (1.0, box.hi[axis])):
            pts = np.empty(grids[0].shape + (d,))
            for j, i in enumerate(others):
                pts[..., i] = grids[j]
            pts[..., axis] = value
            nrm = np.zeros(d)
            nrm[axis] = side
            nodes.append(pts.reshape(-1, d))
            weights.append(wgrid.reshape(-1))
            normals.append(np.tile(nrm, (pts.size // d, 1)))
    return SurfaceQuadrature(np.vstack(nodes), np.concatenate(weights), np.vstack(normals))


def cap_quadrature(cone: CapCone, radius: float, order: int) -> SurfaceQuadrature:
    """Rule on ``cone ∩ S_radius`` with radial (away from the origin) normals."""
    if cone.dim != 3:
        raise GeometryError("cap quadrature requires d=3")
    return _spherical_patch(cone.axis, math.cos(cone.half_angle), radius, order)


def lateral_quadrature(cone: CapCone, r_min: float, r_max: float, order: int,
                       radial_panels: int = 1) -> SurfaceQuadrature:
    """Rule on the cone wall between radii ``r_min`` and ``r_max``.

    Normals point out of the cone. Radial Gauss-Legendre (composite over
    ``radial_panels`` geometric panels) times an azimuthal trapezoid.
    """
    if cone.dim != 3:
        raise GeometryError("lateral quadrature requires d=3")
    if not 0 < r_min < r_max:
        raise GeometryError("need 0 < r_min < r_max")
    n = max(int(order), 2)
    edges = np.geomspace(r_min, r_max, radial_panels + 1)
    rs, wr = zip(*(gauss_legendre(n, a, b) for a, b in zip(edges[:-1], edges[1:])))
    r, wr = np.concatenate(rs), np.concatenate(wr)
    m = 2 * n
    phi = 2 * math.pi * np.arange(m) / m
    a = cone.half_angle
    e1, e2 = _orthonormal_frame(cone.axis)
    radial = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    gen = math.cos(a) * cone.axis + math.sin(a) * radial      # wall generators
    nrm = math.cos(a) * radial - math.sin(a) * cone.axis      # out of the cone
    nodes = (r[:, None, None] * gen[None]).reshape(-1, 3)
    normals = np.broadcast_to(nrm[None], (r.size, m, 3)).reshape(-1, 3)
    weights = np.outer(wr * r * math.sin(a), np.full(m, 2 * math.pi / m)).reshape(-1)
    return SurfaceQuadrature(nodes, weights, normals.copy())
