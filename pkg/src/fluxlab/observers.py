"""Streaming per-path functionals.

Observers work on a batch of paths at once: ``x`` has shape ``(n_paths, d)``.
The engine calls ``start`` with the initial state, ``update`` with every
consecutive pair of grid states, and ``finish`` once, which returns a
:class:`PathTable`. Tables from disjoint path sets merge by concatenation
in path-index order, so the merge is associative and commutative.

Sign conventions:

* domains count outward crossings as +1, so the net count of a path is
  ``chi_D(start) - chi_D(end)``;
* truncated cones ``C ∩ {|x| > R}`` count entries as +1, so the net count is
  ``chi(end) - chi(start)``.
"""

from __future__ import annotations

import csv
import math
from typing import Callable, Sequence

import numpy as np


class PathTable:
    """Per-path columns keyed by path index."""

    def __init__(self, path_index, columns: dict):
        self.path_index = np.asarray(path_index, dtype=np.int64)
        self.columns = {k: np.asarray(v) for k, v in columns.items()}
        for k, v in self.columns.items():
            if v.shape[:1] != self.path_index.shape:
                raise ValueError(f"column {k!r} length does not match path_index")

    def __len__(self):
        return self.path_index.shape[0]

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self)}, columns={list(self.columns)})"

    def merge(self, other: "PathTable") -> "PathTable":
        if set(self.columns) != set(other.columns):
            raise ValueError("cannot merge tables with different columns")
        idx = np.concatenate([self.path_index, other.path_index])
        order = np.argsort(idx, kind="stable")
        cols = {k: np.concatenate([self.columns[k], other.columns[k]])[order]
                for k in self.columns}
        return type(self)(idx[order], cols)

    def to_csv(self, path, columns: Sequence[str] | None = None):
        names = list(columns) if columns is not None else list(self.columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_index"] + names)
            for row in range(len(self)):
                w.writerow([int(self.path_index[row])]
                           + [_fmt(self.columns[k][row]) for k in names])


def _fmt(v):
    if isinstance(v, (np.bool_, bool)):
        return int(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    return repr(float(v))


def merge_all(tables: Sequence[PathTable]) -> PathTable:
    it = iter(tables)
    out = next(it)
    for t in it:
        out = out.merge(t)
    return out


class FluxSamples(PathTable):
    """Columns ``net``, ``n_plus``, ``n_minus``, ``truncation_ok`` (+ checkpoints)."""

    CSV_COLUMNS = ("net", "n_plus", "n_minus", "truncation_ok")

    @property
    def net(self):
        return self.columns["net"]

    @property
    def n_plus(self):
        return self.columns["n_plus"]

    @property
    def n_minus(self):
        return self.columns["n_minus"]

    @property
    def truncation_ok(self):
        return self.columns["truncation_ok"]

    def to_csv(self, path, columns=None):
        super().to_csv(path, self.CSV_COLUMNS if columns is None else columns)


class CrossingCounter:
    """Counts membership flips of a region along a batch of discrete paths."""

    def __init__(self, initial_membership):
        self.initial_membership = np.array(initial_membership, dtype=bool)
        self.membership = self.initial_membership.copy()
        self.n_out = np.zeros(self.membership.shape, dtype=np.int64)
        self.n_in = np.zeros(self.membership.shape, dtype=np.int64)

    def update(self, new_membership):
        new = np.asarray(new_membership, dtype=bool)
        self.n_in += ~self.membership & new
        self.n_out += self.membership & ~new
        self.membership = new
        return self

    @property
    def net_out(self):
        return self.n_out - self.n_in


def update_crossings(counter: CrossingCounter, x_prev, x_next, region: Callable) -> CrossingCounter:
    """Advance ``counter`` across the step ``x_prev -> x_next``.

    Only the membership of ``x_next`` is needed; a flip within the step that
    returns before ``x_next`` is invisible and cancels in the net count.
    """
    del x_prev
    return counter.update(region(x_next))


def _sq_norm(x):
    return np.einsum("...i,...i->...", x, x)


class _CheckpointMixin:
    def _init_checkpoints(self, checkpoints):
        self.checkpoints = tuple(float(c) for c in checkpoints)
        self._snap = {}

    def _maybe_snapshot(self, t, value):
        for i, c in enumerate(self.checkpoints):
            if i not in self._snap and abs(t - c) <= 1e-9 * max(1.0, abs(c)):
                self._snap[i] = value.copy()

    def _snapshot_columns(self):
        missing = [self.checkpoints[i] for i in range(len(self.checkpoints)) if i not in self._snap]
        if missing:
            raise ValueError(f"checkpoints {missing} are not grid points")
        return {f"net_t{i}": self._snap[i] for i in range(len(self.checkpoints))}


class DomainFluxObserver(_CheckpointMixin):
    """Net outward crossings of the boundary of a bounded domain.

    ``truncation_ok`` marks paths that end outside the domain at distance at
    least ``escape_radius`` from the origin (default: the domain's bounding
    radius).
    """

    def __init__(self, domain, escape_radius: float | None = None, checkpoints=()):
        self.domain = domain
        self.escape_radius = domain.bounding_radius if escape_radius is None else escape_radius
        self._init_checkpoints(checkpoints)

    def start(self, t, x):
        self._snap = {}
        self.counter = CrossingCounter(self.domain.contains(x))
        self._maybe_snapshot(t, self.counter.net_out)

    def update(self, t_prev, x_prev, t, x):
        self.counter.update(self.domain.contains(x))
        if self.checkpoints:
            self._maybe_snapshot(t, self.counter.net_out)

    def finish(self, path_index, t, x) -> FluxSamples:
        c = self.counter
        ok = ~c.membership & (_sq_norm(x) >= self.escape_radius**2)
        cols = {"net": c.net_out, "n_plus": c.n_out.copy(), "n_minus": c.n_in.copy(),
                "truncation_ok": ok, "start_member": c.initial_membership.copy(),
                "end_member": c.membership.copy()}
        cols.update(self._snapshot_columns())
        return FluxSamples(path_index, cols)


def domain_flux_observer(domain, **kw) -> DomainFluxObserver:
    return DomainFluxObserver(domain, **kw)


class TruncatedConeObserver:
    """Net entries into ``cone ∩ {|x| > R}``.

    For a transient path this equals ``chi(end) - chi(start)`` of the region
    and, for large horizons, the cone indicator of the limiting velocity.
    ``truncation_ok`` marks paths ending with ``|x| > escape_radius``
    (default ``R``).
    """

    def __init__(self, cone, radius: float, escape_radius: float | None = None):
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.cone = cone
        self.radius = float(radius)
        self.escape_radius = self.radius if escape_radius is None else escape_radius

    def region(self, x):
        return self.cone.contains(x) & (_sq_norm(x) > self.radius**2)

    def start(self, t, x):
        self.counter = CrossingCounter(self.region(x))

    def update(self, t_prev, x_prev, t, x):
        self.counter.update(self.region(x))

    def finish(self, path_index, t, x) -> FluxSamples:
        c = self.counter
        return FluxSamples(path_index, {
            "net": c.n_in - c.n_out, "n_plus": c.n_in.copy(), "n_minus": c.n_out.copy(),
            "truncation_ok": _sq_norm(x) > self.escape_radius**2,
            "start_member": c.initial_membership.copy(), "end_member": c.membership.copy(),
        })


def truncated_cone_observer(cone, radius, **kw) -> TruncatedConeObserver:
    return TruncatedConeObserver(cone, radius, **kw)


class AsymptoticIndicatorObserver:
    """``cone_contains(X_T / T)`` at the end of the horizon."""

    def __init__(self, cone):
        self.cone = cone

    def start(self, t, x):
        pass

    def update(self, t_prev, x_prev, t, x):
        pass

    def finish(self, path_index, t, x) -> PathTable:
        if not t > 0:
            raise ValueError("asymptotic indicator needs a positive final time")
        return PathTable(path_index, {"indicator": self.cone.contains(x / t).astype(np.int8)})


def asymptotic_indicator(cone) -> AsymptoticIndicatorObserver:
    return AsymptoticIndicatorObserver(cone)


class LastExitObserver:
    """Last grid time with ``|X_t| < R``; a lower bound for the last exit time.

    Paths that never enter the ball report the start time with
    ``ever_inside = False``.
    """

    def __init__(self, radius: float):
        self.radius = float(radius)

    def start(self, t, x):
        inside = _sq_norm(x) < self.radius**2
        self.t_start = t
        self.ever = inside.copy()
        self.last = np.full(inside.shape, float(t))

    def update(self, t_prev, x_prev, t, x):
        inside = _sq_norm(x) < self.radius**2
        self.last[inside] = t
        self.ever |= inside

    def finish(self, path_index, t, x) -> PathTable:
        return PathTable(path_index, {"last_inside_time": self.last.copy(),
                                      "ever_inside": self.ever.copy()})


def last_exit_proxy(radius) -> LastExitObserver:
    return LastExitObserver(radius)


class SnapshotObserver:
    """Records ``X_t`` at the given grid times (default: the final time).

    Columns are ``x{i}`` for the final state, or ``x{i}_t{j}`` for the
    ``j``-th checkpoint when ``times`` is given.
    """

    def __init__(self, times=None):
        self.times = None if times is None else tuple(float(t) for t in times)

    def start(self, t, x):
        self._snaps = {}
        self._record(t, x)

    def _record(self, t, x):
        if self.times is None:
            return
        for j, c in enumerate(self.times):
            if j not in self._snaps and abs(t - c) <= 1e-9 * max(1.0, abs(c)):
                self._snaps[j] = x.copy()

    def update(self, t_prev, x_prev, t, x):
        self._record(t, x)

    def finish(self, path_index, t, x) -> PathTable:
        if self.times is None:
            cols = {f"x{i + 1}": x[:, i].copy() for i in range(x.shape[1])}
            return PathTable(path_index, cols)
        missing = [c for j, c in enumerate(self.times) if j not in self._snaps]
        if missing:
            raise ValueError(f"snapshot times {missing} are not grid points")
        cols = {}
        for j, snap in sorted(self._snaps.items()):
            for i in range(snap.shape[1]):
                cols[f"x{i + 1}_t{j}"] = snap[:, i]
        return PathTable(path_index, cols)


def telescoping_holds(samples: FluxSamples, cone_convention=False) -> bool:
    """Exact check of net crossings against the recorded start/end indicators."""
    s = samples["start_member"].astype(np.int64)
    e = samples["end_member"].astype(np.int64)
    expected = e - s if cone_convention else s - e
    return bool(np.array_equal(samples.net, expected))


def escape_fraction(samples: FluxSamples) -> float:
    """Fraction of paths whose truncation diagnostic failed."""
    ok = np.asarray(samples.truncation_ok, dtype=bool)
    return float(np.mean(~ok)) if ok.size else math.nan
