"""Euler-Maruyama path simulation with per-path counter-based random streams.

Path ``i`` draws all of its randomness from a Philox stream keyed by
``(master_seed, i)``: first ``d`` normals for the initial state, then the
increments in time order. Paths are simulated in vectorised blocks and
blocks may run on any number of threads; results do not depend on either.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .models import DiffusionModel, law_at
from .observers import PathTable

CHUNK_STEPS = 256
DEFAULT_BLOCK = 2048
THREADS_ENV = "FLUXLAB_THREADS"


class SimulationFault(RuntimeError):
    """Non-finite state produced by a step; ``path_indices`` names the culprits."""

    def __init__(self, message, path_indices=(), t=None):
        super().__init__(message)
        self.path_indices = tuple(int(i) for i in path_indices)
        self.t = t


class BatchFault(RuntimeError):
    def __init__(self, faults: Sequence[SimulationFault]):
        self.faults = list(faults)
        self.fault_count = sum(len(f.path_indices) for f in self.faults)
        first = self.faults[0]
        super().__init__(
            f"{self.fault_count} path(s) faulted in {len(self.faults)} block(s); "
            f"first: {first} (paths {list(first.path_indices)[:5]})"
        )


@dataclass(frozen=True)
class TimeGrid:
    """Time points ``t_start = t_0 < ... < t_n = t_end``.

    Uniform with step ``dt``; with ``stretch > 0`` the step becomes
    ``max(dt, stretch * t)`` so long horizons stay affordable. Checkpoint
    times are inserted as grid points.
    """

    t_start: float
    t_end: float
    dt: float
    stretch: float = 0.0
    checkpoints: tuple = field(default=())

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.stretch < 0:
            raise ValueError("stretch must be nonnegative")
        cps = tuple(sorted(float(c) for c in self.checkpoints))
        if any(c < self.t_start or c > self.t_end for c in cps):
            raise ValueError("checkpoints must lie inside [t_start, t_end]")
        object.__setattr__(self, "checkpoints", cps)

    @cached_property
    def times(self) -> np.ndarray:
        span = self.t_end - self.t_start
        if span == 0:
            return np.array([self.t_start])
        if self.stretch == 0:
            n = max(1, math.ceil(span / self.dt - 1e-9))
            t = self.t_start + np.arange(n + 1) * self.dt
        else:
            pts = [self.t_start]
            while pts[-1] < self.t_end - 1e-12 * max(1.0, abs(self.t_end)):
                pts.append(pts[-1] + max(self.dt, self.stretch * pts[-1]))
            t = np.array(pts)
        t[-1] = self.t_end
        t = t[t <= self.t_end]
        if self.checkpoints:
            tol = 1e-9 * max(1.0, abs(self.t_end))
            cps = np.array(self.checkpoints)
            keep = np.all(np.abs(t[:, None] - cps[None, :]) > tol, axis=1)
            t = np.union1d(t[keep], cps)
            t = np.union1d(t, [self.t_start, self.t_end])
        return t

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1


@dataclass(frozen=True)
class SeedPolicy:
    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def stream(self, path_index: int) -> np.random.Generator:
        if path_index < 0 or path_index >= 2**64:
            raise ValueError("path index out of range")
        key = (int(self.master_seed) << 64) | int(path_index)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class PathState:
    t: float
    x: np.ndarray


def _em_update(model: DiffusionModel, t, x, dt, noise):
    return x + model.drift(t, x) * dt + noise


def euler_maruyama_step(state: PathState, model: DiffusionModel, dt: float, noise) -> PathState:
    """One step ``x + b(t, x) dt + noise``; ``noise`` is an ``N(0, dt I)`` draw."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = _em_update(model, state.t, np.asarray(state.x, dtype=float), dt,
                   np.asarray(noise, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SimulationFault(f"non-finite state after step from t={state.t}", t=state.t)
    return PathState(state.t + dt, x)


def initial_law_at(model: DiffusionModel, t_start: float):
    if t_start == model.t0:
        return model.initial_law
    if t_start < model.t0:
        raise ValueError(f"t_start={t_start} precedes the model start time {model.t0}")
    if not model.closed_form:
        raise ValueError("a custom model must be started at its own t0")
    return law_at(model, t_start)


def run_block(model: DiffusionModel, grid: TimeGrid, path_indices, seeds: SeedPolicy,
              observers, noise: bool = True) -> list[PathTable]:
    """Simulate the given paths together and return each observer's table."""
    idx = np.asarray(path_indices, dtype=np.int64)
    d = model.dim
    gens = [seeds.stream(int(i)) for i in idx]
    law = initial_law_at(model, grid.t_start)
    z0 = np.empty((idx.size, d))
    for j, g in enumerate(gens):
        z0[j] = g.standard_normal(d)
    x = law.sample(z0)
    times = grid.times
    for obs in observers:
        obs.start(times[0], x)
    n = grid.n_steps
    z = None
    for c0 in range(0, n, CHUNK_STEPS):
        m = min(CHUNK_STEPS, n - c0)
        if noise:
            z = np.empty((idx.size, m, d))
            for j, g in enumerate(gens):
                g.standard_normal((m, d), out=z[j])
        for k in range(m):
            t, t_next = times[c0 + k], times[c0 + k + 1]
            h = t_next - t
            dw = math.sqrt(h) * z[:, k, :] if noise else 0.0
            x_new = _em_update(model, t, x, h, dw)
            for obs in observers:
                obs.update(t, x, t_next, x_new)
            x = x_new
        # non-finite values persist, so one check per chunk finds every culprit
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            raise SimulationFault(f"non-finite state by t={times[c0 + m]}", idx[bad],
                                  times[c0 + m])
    return [obs.finish(idx, times[-1], x) for obs in observers]


def simulate_path(model, grid, path_index, seeds, observers, noise=True) -> list[PathTable]:
    try:
        return run_block(model, grid, [path_index], seeds, observers, noise)
    except SimulationFault as exc:
        raise SimulationFault(f"path {path_index}: {exc}", [path_index], exc.t) from exc


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    return max(1, int(threads))


def batch_run(model, grid, n_paths: int, seeds: SeedPolicy,
              observer_factory: Callable[[], list], threads: int | None = None,
              block_size: int = DEFAULT_BLOCK, noise: bool = True,
              first_index: int = 0) -> list[PathTable]:
    """Run ``n_paths`` paths and merge each observer's tables in path order."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    starts = range(first_index, first_index + n_paths, block_size)
    blocks = [np.arange(s, min(s + block_size, first_index + n_paths)) for s in starts]

    def work(ix):
        try:
            return run_block(model, grid, ix, seeds, observer_factory(), noise)
        except SimulationFault as exc:
            return exc

    workers = resolve_threads(threads)
    if workers == 1:
        outs = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(work, blocks))
    faults = [o for o in outs if isinstance(o, SimulationFault)]
    if faults:
        raise BatchFault(faults)
    merged = outs[0]
    for out in outs[1:]:
        merged = [a.merge(b) for a, b in zip(merged, out)]
    return merged
