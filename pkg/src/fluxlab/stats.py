"""Monte Carlo summaries and oracle comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

DEFAULT_Z = 3.0


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class RunningStats:
    """Mergeable count / mean / centred sum of squares (pairwise update)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, samples) -> "RunningStats":
        a = np.asarray(samples, dtype=float).reshape(-1)
        if a.size == 0:
            return cls()
        mu = float(np.mean(a))
        return cls(int(a.size), mu, float(np.sum((a - mu) ** 2)))

    def push(self, samples) -> "RunningStats":
        return self.merge(RunningStats.of(samples))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return RunningStats(n, mean, m2)

    def summary(self) -> "EstimateSummary":
        if self.n < 2:
            raise InsufficientSamplesError(f"need at least 2 samples, got {self.n}")
        var = self.m2 / (self.n - 1)
        return EstimateSummary(self.n, self.mean, math.sqrt(var / self.n))

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise InsufficientSamplesError(f"need at least 2 samples, got {self.n}")
        return self.m2 / (self.n - 1)


@dataclass(frozen=True)
class EstimateSummary:
    n: int
    mean: float
    std_error: float

    def ci_halfwidth(self, level: float | None = None) -> float:
        """Half-width of the normal CI; ``level=None`` means exactly 3 SE."""
        return z_value(level) * self.std_error


def z_value(level: float | None) -> float:
    if level is None:
        return DEFAULT_Z
    if not 0 < level < 1:
        raise ValueError("confidence level must be in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def summarize(samples) -> EstimateSummary:
    return RunningStats.of(samples).summary()


def variance_summary(samples) -> EstimateSummary:
    """Sample variance and its standard error (fourth-moment formula)."""
    a = np.asarray(samples, dtype=float).reshape(-1)
    n = a.size
    if n < 4:
        raise InsufficientSamplesError("need at least 4 samples for a variance SE")
    c = a - a.mean()
    s2 = float(np.sum(c * c) / (n - 1))
    m4 = float(np.mean(c**4))
    se = math.sqrt(max(m4 - s2 * s2 * (n - 3) / (n - 1), 0.0) / n)
    return EstimateSummary(n, s2, se)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    estimate: float
    oracle: float
    abs_diff: float
    allowance: float
    std_error: float

    @property
    def label(self) -> str:
        return "pass" if self.passed else "fail"

    def report(self, name: str = "") -> str:
        head = f"{name}: " if name else ""
        return (f"{head}{self.label.upper()} estimate={self.estimate:.6g} "
                f"(SE {self.std_error:.3g}) oracle={self.oracle:.6g} "
                f"|diff|={self.abs_diff:.3g} allowance={self.allowance:.3g}")


def compare(estimate: EstimateSummary, oracle: float, extra_tolerance: float = 0.0,
            level: float | None = None, n_se: float | None = None) -> Verdict:
    """Pass iff ``|mean - oracle| <= ci_halfwidth + extra_tolerance``.

    ``n_se`` fixes the half-width at that many standard errors and overrides
    ``level``.
    """
    diff = abs(estimate.mean - oracle)
    half = n_se * estimate.std_error if n_se is not None else estimate.ci_halfwidth(level)
    allowance = half + extra_tolerance
    return Verdict(diff <= allowance, estimate.mean, float(oracle), diff, allowance,
                   estimate.std_error)


def compare_two(a: EstimateSummary, b: EstimateSummary, level: float | None = None,
                extra_tolerance: float = 0.0, n_se: float | None = None) -> Verdict:
    """Agreement of two estimates within their combined standard error."""
    se = math.hypot(a.std_error, b.std_error)
    combined = EstimateSummary(min(a.n, b.n), a.mean, se)
    return compare(combined, b.mean, extra_tolerance, level, n_se)
