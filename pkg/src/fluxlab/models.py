"""Diffusion models with unit noise, ``dX = b(t, X) dt + dW``.

Three closed-form families double as analytic oracles:

* constant drift ``b = c`` (Brownian motion with drift),
* the ray model ``b = x / t`` started at ``t0 > 0``,
* the symmetric Ornstein-Uhlenbeck model ``b = -theta x`` started in its
  invariant law.

For these the law of ``X_t`` stays an isotropic Gaussian, so the density,
the osmotic velocity ``u = grad(log rho) / 2``, the current velocity
``v = b - u`` and the dual drift ``b* = b - grad(log rho)`` are exact.
A ``custom`` model carries only a drift and supports simulation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Drift = Callable[[float, np.ndarray], np.ndarray]


class ModelDomainError(ValueError):
    """Raised when a model is evaluated outside its time domain."""


class UnsupportedModelError(TypeError):
    """Raised when an analytic accessor is requested for a model without one."""


class DensityUnderflowError(FloatingPointError):
    """Raised when a density is too small for finite-difference checks."""


class ModelKind(str, enum.Enum):
    CONSTANT_DRIFT = "constant_drift"
    RAY = "ray"
    STATIONARY_SYMMETRIC = "stationary_symmetric"
    CUSTOM = "custom"


@dataclass(frozen=True)
class GaussianLaw:
    """Isotropic Gaussian ``N(mean, variance * I)``.

    A point mass is written ``variance=0, deterministic=True``; a zero
    variance without the flag is rejected.
    """

    mean: np.ndarray
    variance: float
    deterministic: bool = False

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        var = float(self.variance)
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        if self.deterministic:
            if var != 0.0:
                raise ValueError("a deterministic law has variance 0")
        elif not (var > 0.0 and math.isfinite(var)):
            raise ValueError(
                "variance must be positive; use deterministic=True for a point mass"
            )
        object.__setattr__(self, "variance", var)

    @classmethod
    def point_mass(cls, at) -> "GaussianLaw":
        return cls(np.asarray(at, dtype=float), 0.0, deterministic=True)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_pdf(self, x) -> np.ndarray:
        if self.deterministic:
            raise UnsupportedModelError("a point mass has no density")
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - self.mean) ** 2, axis=-1)
        return -0.5 * r2 / self.variance - 0.5 * self.dim * math.log(
            2.0 * math.pi * self.variance
        )

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))

    def sample(self, z) -> np.ndarray:
        """Map standard normal draws ``z`` (shape ``(..., d)``) onto this law."""
        z = np.asarray(z, dtype=float)
        if self.deterministic:
            return np.broadcast_to(self.mean, z.shape).copy()
        return self.mean + self.std * z


@dataclass(frozen=True)
class DiffusionModel:
    """A diffusion in ``R^d`` with identity diffusion matrix.

    Build instances through :func:`constant_drift`, :func:`ray_model`,
    :func:`stationary_symmetric` or :func:`custom_model`.
    """

    kind: ModelKind
    dim: int
    t0: float
    initial_law: GaussianLaw
    drift_vector: Optional[np.ndarray] = None
    theta: Optional[float] = None
    custom_drift: Optional[Drift] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.t0 < 0:
            raise ValueError("start time must be nonnegative")
        if self.initial_law.dim != self.dim:
            raise ValueError(
                f"initial law has dimension {self.initial_law.dim}, model has {self.dim}"
            )
        if self.kind is ModelKind.RAY and not self.t0 > 0:
            raise ModelDomainError("ray model drift x/t is singular at t=0; need t0 > 0")
        if self.drift_vector is not None:
            c = np.array(self.drift_vector, dtype=float).reshape(-1)
            c.setflags(write=False)
            object.__setattr__(self, "drift_vector", c)

    @property
    def closed_form(self) -> bool:
        return self.kind is not ModelKind.CUSTOM

    def drift(self, t: float, x: np.ndarray) -> np.ndarray:
        """Vectorised drift; ``x`` has shape ``(..., d)``. No domain check."""
        if self.kind is ModelKind.CONSTANT_DRIFT:
            return np.broadcast_to(self.drift_vector, np.shape(x))
        if self.kind is ModelKind.RAY:
            return x / t
        if self.kind is ModelKind.STATIONARY_SYMMETRIC:
            return -self.theta * x
        return np.asarray(self.custom_drift(t, x), dtype=float)


def constant_drift(c, initial_mean=None, initial_variance=1.0, t0=0.0, name=""):
    c = np.asarray(c, dtype=float)
    d = c.shape[0]
    mean = np.zeros(d) if initial_mean is None else initial_mean
    law = _make_law(mean, initial_variance)
    return DiffusionModel(ModelKind.CONSTANT_DRIFT, d, float(t0), law, drift_vector=c,
                          name=name or "constant_drift")


def ray_model(initial_mean, initial_variance, t0=1.0, name=""):
    law = _make_law(initial_mean, initial_variance)
    return DiffusionModel(ModelKind.RAY, law.dim, float(t0), law, name=name or "ray")


def stationary_symmetric(theta, dim=3, t0=0.0, name=""):
    """Ornstein-Uhlenbeck ``b = -theta x`` started in ``N(0, I / (2 theta))``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    law = GaussianLaw(np.zeros(dim), 1.0 / (2.0 * theta))
    return DiffusionModel(ModelKind.STATIONARY_SYMMETRIC, dim, float(t0), law,
                          theta=float(theta), name=name or "stationary_symmetric")


def custom_model(drift: Drift, dim, initial_mean=None, initial_variance=1.0, t0=0.0,
                 name=""):
    mean = np.zeros(dim) if initial_mean is None else initial_mean
    law = _make_law(mean, initial_variance)
    return DiffusionModel(ModelKind.CUSTOM, dim, float(t0), law, custom_drift=drift,
                          name=name or "custom")


def _make_law(mean, variance) -> GaussianLaw:
    if variance == 0:
        return GaussianLaw.point_mass(mean)
    return GaussianLaw(mean, variance)


def _check_time(model: DiffusionModel, t: float):
    if t < model.t0:
        raise ModelDomainError(f"t={t} precedes the model start time t0={model.t0}")
    if model.kind is ModelKind.RAY and t <= 0:
        raise ModelDomainError("ray model drift is singular at t<=0")


def _require_closed_form(model: DiffusionModel):
    if not model.closed_form:
        raise UnsupportedModelError(f"model {model.name!r} has no closed-form law")


def eval_drift(model: DiffusionModel, t: float, x) -> np.ndarray:
    _check_time(model, t)
    return model.drift(t, np.asarray(x, dtype=float))


def law_at(model: DiffusionModel, t: float) -> GaussianLaw:
    """Law of ``X_t``; a point mass only when the model starts deterministic at ``t``."""
    _require_closed_form(model)
    _check_time(model, t)
    m0, s0 = model.initial_law.mean, model.initial_law.variance
    tau = t - model.t0
    if model.kind is ModelKind.CONSTANT_DRIFT:
        mean, var = m0 + model.drift_vector * tau, s0 + tau
    elif model.kind is ModelKind.RAY:
        k = t / model.t0
        mean, var = k * m0, k * k * s0 + t * tau / model.t0
    else:
        mean, var = m0, s0
    if var == 0:
        return GaussianLaw.point_mass(mean)
    return GaussianLaw(mean, var)


def _mean_var(model: DiffusionModel, t: float):
    law = law_at(model, t)
    if law.deterministic:
        raise ModelDomainError(f"law at t={t} is a point mass; no density")
    return law.mean, law.variance


def log_density(model: DiffusionModel, t: float, x) -> np.ndarray:
    mean, var = _mean_var(model, t)
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum((x - mean) ** 2, axis=-1) / var - 0.5 * model.dim * math.log(
        2.0 * math.pi * var
    )


def density(model: DiffusionModel, t: float, x) -> np.ndarray:
    return np.exp(log_density(model, t, x))


def grad_log_density(model: DiffusionModel, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if model.kind is ModelKind.STATIONARY_SYMMETRIC:
        _check_time(model, t)
        return -2.0 * model.theta * x
    mean, var = _mean_var(model, t)
    return -(x - mean) / var


def osmotic_velocity(model: DiffusionModel, t: float, x) -> np.ndarray:
    return 0.5 * grad_log_density(model, t, x)


def current_velocity(model: DiffusionModel, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if model.kind is ModelKind.STATIONARY_SYMMETRIC:
        _check_time(model, t)
        # b = u in the invariant law
        return np.zeros_like(x)
    return model.drift(t, x) - osmotic_velocity(model, t, x)


def dual_drift(model: DiffusionModel, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return model.drift(t, x) - grad_log_density(model, t, x)


@dataclass(frozen=True)
class VelocityField:
    """Bundle of the current, osmotic and dual-drift fields of a model."""

    model: DiffusionModel

    def current(self, t, x):
        return current_velocity(self.model, t, x)

    def osmotic(self, t, x):
        return osmotic_velocity(self.model, t, x)

    def dual_drift(self, t, x):
        return dual_drift(self.model, t, x)


def limiting_velocity_law(model: DiffusionModel) -> Optional[GaussianLaw]:
    """Law of ``lim X_t / t``, or ``None`` when the model has no limiting velocity.

    Constant drift gives the point mass at ``c``. That law is not absolutely
    continuous, so it satisfies the pathwise cone statements but not the
    density requirement on the limiting velocity.
    """
    _require_closed_form(model)
    if model.kind is ModelKind.CONSTANT_DRIFT:
        return GaussianLaw.point_mass(model.drift_vector)
    if model.kind is ModelKind.RAY:
        t0 = model.t0
        m0, s0 = model.initial_law.mean, model.initial_law.variance
        # X_t/t = X_t0/t0 + int_t0^t dW_s / s
        return GaussianLaw(m0 / t0, s0 / t0**2 + 1.0 / t0)
    return None
