"""YAML experiment configuration: parsing and validation.

Validation collects every problem it finds and reports each one with the
line of the offending key, then raises :class:`ConfigError`. A config that
passes is fully populated with defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

import yaml

from . import geometry as geo
from . import models as mdl
from .engine import TimeGrid

EXPERIMENTS = ("boundary_flux", "asymptotic_flux", "residuals", "limiting_velocity",
               "lateral_vanishing")
MC_EXPERIMENTS = ("boundary_flux", "asymptotic_flux", "limiting_velocity")
MIN_PATHS = 100


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    dim: int = 3
    t0: Optional[float] = None
    drift: Optional[tuple] = None
    theta: Optional[float] = None
    initial_mean: Optional[tuple] = None
    initial_variance: float = 1.0

    def build(self) -> mdl.DiffusionModel:
        mean = self.initial_mean
        if self.kind == "constant_drift":
            return mdl.constant_drift(self.drift, mean, self.initial_variance, self.t0 or 0.0)
        if self.kind == "ray":
            return mdl.ray_model(mean if mean is not None else [0.0] * self.dim,
                                 self.initial_variance, self.t0 if self.t0 is not None else 1.0)
        return mdl.stationary_symmetric(self.theta, self.dim, self.t0 or 0.0)


@dataclass(frozen=True)
class GeometrySpec:
    domain: Optional[dict] = None
    cone: Optional[dict] = None
    radii: tuple = ()
    escape_radius: Optional[float] = None

    def build_domain(self):
        d = self.domain
        if d is None:
            return None
        if d["kind"] == "ball":
            return geo.Ball(d["center"], d["radius"])
        return geo.Box(d["lo"], d["hi"])

    def build_cone(self):
        c = self.cone
        if c is None:
            return None
        if c["kind"] == "cap":
            return geo.CapCone(c["axis"], c["half_angle"])
        if c["kind"] == "halfspace":
            return geo.HalfSpaceCone(c["normal"])
        return geo.PolyCone(c["normals"])


@dataclass(frozen=True)
class GridSpec:
    t_start: float
    t_end: float
    dt: float
    stretch: float = 0.0
    checkpoints: tuple = ()

    def build(self) -> TimeGrid:
        return TimeGrid(self.t_start, self.t_end, self.dt, self.stretch, tuple(self.checkpoints))


@dataclass(frozen=True)
class QuadratureSpec:
    time_order: int = 16
    surface_order: int = 24
    time_panels: int = 8


@dataclass(frozen=True)
class Tolerances:
    extra_tolerance: float = 0.0
    truncation_tol: float = 1e-3
    level: Optional[float] = None
    n_se: Optional[float] = None
    quadrature_tol: float = 1e-6
    residual_ratio: float = 3.5
    residual_tol: float = 1e-3
    residual_floor: float = 1e-11
    cone_limit_tol: float = 1e-2
    lateral_ratio: float = 10.0


@dataclass(frozen=True)
class ResidualSpec:
    n_points: int = 100
    h: float = 1e-2
    t_span: float = 10.0


@dataclass(frozen=True)
class ConeLimitSpec:
    radii: tuple = (10.0, 20.0, 40.0)
    window_scale: float = 25.0
    r_max_scale: float = 50.0
    time_panels: int = 24


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "fluxlab_out"
    per_path_csv: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int
    model: ModelSpec
    n_paths: int = 0
    threads: Optional[int] = None
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    grid: Optional[GridSpec] = None
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    residuals: ResidualSpec = field(default_factory=ResidualSpec)
    cone_limit: Optional[ConeLimitSpec] = None
    output: OutputSpec = field(default_factory=OutputSpec)

    def with_overrides(self, seed=None, paths=None, threads=None, out=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, master_seed=int(seed))
        if paths is not None:
            cfg = replace(cfg, n_paths=int(paths))
        if threads is not None:
            cfg = replace(cfg, threads=int(threads))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
        return cfg


# --------------------------------------------------------------------------
# YAML with line numbers


def _plain(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            lines[sub] = k.start_mark.line + 1
            out[key] = _plain(v, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node)) if node.value != "" else None


def _as_number(v):
    """Numbers, plus strings such as ``1e-3`` that YAML 1.1 leaves unparsed."""
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return v
    if isinstance(v, str):
        try:
            f = float(v)
        except ValueError:
            return None
        return int(f) if f.is_integer() and "." not in v and "e" not in v.lower() else f
    return None


class _Checker:
    def __init__(self, lines):
        self.lines = lines
        self.errors = []

    def err(self, path, msg):
        line = self.lines.get(path)
        while line is None and "." in path:
            path_up = path.rsplit(".", 1)[0]
            line = self.lines.get(path_up)
            path = path_up if line is None else path
        where = f"line {line}: " if line is not None else ""
        self.errors.append(f"{where}{path}: {msg}")

    def mapping(self, raw, path, allowed, required=()):
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            self.err(path, "expected a mapping")
            return {}
        for k in raw:
            if k not in allowed:
                self.err(f"{path}.{k}" if path else k, "unknown field")
        for k in required:
            if k not in raw:
                self.err(f"{path}.{k}" if path else k, "required field missing")
        return raw

    def number(self, raw, path, default=None, positive=False, nonneg=False, integer=False,
               required=False):
        key = path.rsplit(".", 1)[-1]
        if key not in raw or raw[key] is None:
            if required:
                self.err(path, "required field missing")
            return default
        v = _as_number(raw[key])
        if v is None:
            self.err(path, f"expected a number, got {raw[key]!r}")
            return default
        if integer and (not float(v).is_integer()):
            self.err(path, f"expected an integer, got {v!r}")
            return default
        if not math.isfinite(v):
            self.err(path, "must be finite")
            return default
        if positive and not v > 0:
            self.err(path, "must be positive")
        if nonneg and v < 0:
            self.err(path, "must be nonnegative")
        return int(v) if integer else float(v)

    def vector(self, raw, path, dim=None, required=False):
        key = path.rsplit(".", 1)[-1]
        if key not in raw or raw[key] is None:
            if required:
                self.err(path, "required field missing")
            return None
        v = raw[key]
        if not isinstance(v, list) or any(_as_number(a) is None for a in v):
            self.err(path, "expected a list of numbers")
            return None
        if dim is not None and len(v) != dim:
            self.err(path, f"expected {dim} components, got {len(v)}")
            return None
        return tuple(float(_as_number(a)) for a in v)

    def number_list(self, raw, path, default=()):
        key = path.rsplit(".", 1)[-1]
        if key not in raw or raw[key] is None:
            return tuple(default)
        v = raw[key]
        if not isinstance(v, list) or any(_as_number(a) is None for a in v):
            self.err(path, "expected a list of numbers")
            return tuple(default)
        return tuple(float(_as_number(a)) for a in v)


def _field_names(cls):
    return {f.name for f in fields(cls)}


def parse_yaml(text: str):
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError([f"{where}YAML syntax error: {getattr(exc, 'problem', exc)}"]) from exc
    lines: dict[str, int] = {}
    if node is None:
        return {}, lines
    return _plain(node, "", lines), lines


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate config text; raises :class:`ConfigError` listing every problem."""
    raw, lines = parse_yaml(text)
    ck = _Checker(lines)
    top = ck.mapping(raw, "", _field_names(ExperimentConfig), ("experiment", "master_seed", "model"))

    exp = top.get("experiment")
    if "experiment" in top and exp not in EXPERIMENTS:
        ck.err("experiment", f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    seed = ck.number(top, "master_seed", integer=True, nonneg=True)
    if seed is not None and seed >= 2**64:
        ck.err("master_seed", "must fit in 64 bits")
    n_paths = ck.number(top, "n_paths", default=0, integer=True, nonneg=True)
    threads = ck.number(top, "threads", integer=True, positive=True)
    if exp in MC_EXPERIMENTS and n_paths < MIN_PATHS:
        ck.err("n_paths", f"Monte Carlo experiments need n_paths >= {MIN_PATHS}")

    model = _model(ck, top.get("model"))
    dim = model.dim if model else 3
    geometry = _geometry(ck, top.get("geometry"), dim)
    grid = _grid(ck, top.get("grid"))
    quad = _simple(ck, top, "quadrature", QuadratureSpec, ints=("time_order", "surface_order",
                                                                 "time_panels"))
    tol = _simple(ck, top, "tolerances", Tolerances)
    res = _simple(ck, top, "residuals", ResidualSpec, ints=("n_points",))
    cone_limit = None
    if "cone_limit" in top:
        cone_limit = _simple(ck, top, "cone_limit", ConeLimitSpec, ints=("time_panels",),
                             lists=("radii",))
    out_raw = ck.mapping(top.get("output"), "output", _field_names(OutputSpec))
    output = OutputSpec(str(out_raw.get("dir", OutputSpec.dir)),
                        bool(out_raw.get("per_path_csv", False)))
    if quad and (quad.time_order < 2 or quad.surface_order < 2):
        ck.err("quadrature", "quadrature orders must be at least 2")

    if model is not None:
        _semantics(ck, exp, model, geometry, grid, tol, res, cone_limit)
    if ck.errors:
        raise ConfigError(ck.errors)
    return ExperimentConfig(exp, seed, model, n_paths, threads, geometry, grid, quad, tol,
                            res, cone_limit, output)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return validate_config(fh.read())


def _simple(ck, top, name, cls, ints=(), lists=()):
    raw = ck.mapping(top.get(name), name, _field_names(cls))
    kw = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        path = f"{name}.{f.name}"
        if f.name in lists:
            kw[f.name] = ck.number_list(raw, path)
        elif raw[f.name] is None and f.default is None:
            kw[f.name] = None
        else:
            v = ck.number(raw, path, integer=f.name in ints, positive=f.name not in
                          ("extra_tolerance",), nonneg=True)
            if v is not None:
                kw[f.name] = v
    return cls(**kw)


def _model(ck, raw) -> Optional[ModelSpec]:
    if raw is None:
        return None
    raw = ck.mapping(raw, "model", _field_names(ModelSpec), ("kind",))
    kind = raw.get("kind")
    kinds = ("constant_drift", "ray", "stationary_symmetric")
    if kind not in kinds:
        if "kind" in raw:
            ck.err("model.kind", f"unknown model kind {kind!r}; choose from {', '.join(kinds)}")
        return None
    dim = ck.number(raw, "model.dim", default=3, integer=True, positive=True)
    drift = ck.vector(raw, "model.drift", required=kind == "constant_drift")
    if drift is not None and "dim" not in raw:
        dim = len(drift)
    if drift is not None and len(drift) != dim:
        ck.err("model.drift", f"expected {dim} components, got {len(drift)}")
    t0 = ck.number(raw, "model.t0", nonneg=True)
    theta = ck.number(raw, "model.theta", positive=True, required=kind == "stationary_symmetric")
    mean = ck.vector(raw, "model.initial_mean", dim)
    var = ck.number(raw, "model.initial_variance", default=1.0, nonneg=True)
    if kind == "stationary_symmetric":
        for k in ("initial_mean", "initial_variance", "drift"):
            if k in raw:
                ck.err(f"model.{k}", "not allowed: the symmetric model starts in its invariant law")
    if kind == "ray":
        if t0 is not None and not t0 > 0:
            ck.err("model.t0", "ray model drift x/t is singular at t=0; t0 must be positive")
        for k in ("drift", "theta"):
            if k in raw:
                ck.err(f"model.{k}", "not used by the ray model")
    if kind == "constant_drift" and "theta" in raw:
        ck.err("model.theta", "not used by the constant-drift model")
    return ModelSpec(kind, dim, t0, drift, theta, mean, var)


def _geometry(ck, raw, dim) -> GeometrySpec:
    raw = ck.mapping(raw, "geometry", _field_names(GeometrySpec))
    domain = cone = None
    if raw.get("domain") is not None:
        d = ck.mapping(raw["domain"], "geometry.domain", {"kind", "center", "radius", "lo", "hi"},
                       ("kind",))
        if d.get("kind") == "ball":
            center = ck.vector(d, "geometry.domain.center", dim) or (0.0,) * dim
            radius = ck.number(d, "geometry.domain.radius", positive=True, required=True)
            domain = {"kind": "ball", "center": center, "radius": radius}
        elif d.get("kind") == "box":
            lo = ck.vector(d, "geometry.domain.lo", dim, required=True)
            hi = ck.vector(d, "geometry.domain.hi", dim, required=True)
            if lo and hi and not all(a < b for a, b in zip(lo, hi)):
                ck.err("geometry.domain", "box needs lo < hi componentwise")
            domain = {"kind": "box", "lo": lo, "hi": hi}
        elif "kind" in d:
            ck.err("geometry.domain.kind", "domain kind must be 'ball' or 'box'")
    if raw.get("cone") is not None:
        c = ck.mapping(raw["cone"], "geometry.cone", {"kind", "axis", "half_angle", "normal",
                                                      "normals"}, ("kind",))
        kind = c.get("kind")
        if kind == "cap":
            axis = ck.vector(c, "geometry.cone.axis", dim, required=True)
            angle = ck.number(c, "geometry.cone.half_angle", positive=True, required=True)
            if angle is not None and angle > math.pi:
                ck.err("geometry.cone.half_angle", "must lie in (0, pi]")
            cone = {"kind": "cap", "axis": axis, "half_angle": angle}
        elif kind == "halfspace":
            cone = {"kind": "halfspace", "normal": ck.vector(c, "geometry.cone.normal", dim,
                                                             required=True)}
        elif kind == "poly":
            normals = c.get("normals")
            if not isinstance(normals, list) or not normals:
                ck.err("geometry.cone.normals", "expected a nonempty list of vectors")
            else:
                vecs = [ck.vector({"v": v}, "geometry.cone.normals.v", dim) for v in normals]
                cone = {"kind": "poly", "normals": tuple(vecs)}
        elif kind is not None:
            ck.err("geometry.cone.kind", "cone kind must be 'cap', 'halfspace' or 'poly'")
        for key in ("axis", "normal"):
            v = cone and cone.get(key)
            if v is not None and not any(v):
                ck.err(f"geometry.cone.{key}", "must be nonzero")
    radii = ck.number_list(raw, "geometry.radii")
    if any(not r > 0 for r in radii):
        ck.err("geometry.radii", "radii must be positive")
    esc = ck.number(raw, "geometry.escape_radius", positive=True)
    return GeometrySpec(domain, cone, radii, esc)


def _grid(ck, raw) -> Optional[GridSpec]:
    if raw is None:
        return None
    raw = ck.mapping(raw, "grid", _field_names(GridSpec), ("t_start", "t_end", "dt"))
    ts = ck.number(raw, "grid.t_start", nonneg=True)
    te = ck.number(raw, "grid.t_end", nonneg=True)
    dt = ck.number(raw, "grid.dt", positive=True)
    stretch = ck.number(raw, "grid.stretch", default=0.0, nonneg=True)
    cps = ck.number_list(raw, "grid.checkpoints")
    if ts is None or te is None or dt is None:
        return None
    if te < ts:
        ck.err("grid.t_end", "must not precede t_start")
    if any(c < ts or c > te for c in cps):
        ck.err("grid.checkpoints", "checkpoints must lie inside [t_start, t_end]")
    return GridSpec(ts, te, dt, stretch, cps)


def _semantics(ck, exp, model: ModelSpec, geometry: GeometrySpec, grid, tol, res, cone_limit):
    t0 = model.t0 if model.t0 is not None else (1.0 if model.kind == "ray" else 0.0)
    if grid is not None:
        if model.kind == "ray" and grid.t_start <= 0:
            ck.err("grid.t_start", "drift singular at t=0: the ray model needs t_start > 0")
        elif grid.t_start < t0:
            ck.err("grid.t_start", f"precedes the model start time t0={t0}")
    if exp in MC_EXPERIMENTS and grid is None:
        ck.err("grid", "required field missing")
    if exp == "boundary_flux":
        if geometry.domain is None:
            ck.err("geometry.domain", "required for boundary_flux")
        if model.dim != 3:
            ck.err("model.dim", "flux quadrature needs d=3")
    if exp == "asymptotic_flux":
        if geometry.cone is None:
            ck.err("geometry.cone", "required for asymptotic_flux")
        if not geometry.radii:
            ck.err("geometry.radii", "at least one truncation radius is required")
        if model.kind == "stationary_symmetric":
            ck.err("model.kind", "the symmetric model has no limiting velocity")
        if grid is not None and not grid.t_end > 0:
            ck.err("grid.t_end", "must be positive")
    if exp == "limiting_velocity":
        if model.kind == "stationary_symmetric":
            ck.err("model.kind", "the symmetric model has no limiting velocity")
        if grid is not None and not grid.t_end > 0:
            ck.err("grid.t_end", "must be positive")
        if grid is not None and any(not c > 0 for c in grid.checkpoints):
            ck.err("grid.checkpoints", "checkpoint times must be positive")
    if exp in ("lateral_vanishing",) or cone_limit is not None:
        cone = geometry.cone
        if cone is None or cone.get("kind") != "cap":
            ck.err("geometry.cone", "a cap cone is required for surface integrals")
        if model.dim != 3:
            ck.err("model.dim", "cone quadrature needs d=3")
        if model.kind == "stationary_symmetric" and exp == "lateral_vanishing":
            ck.err("model.kind", "lateral vanishing needs a transient model")
    if cone_limit is not None and any(not r > 0 for r in cone_limit.radii):
        ck.err("cone_limit.radii", "radii must be positive")
    if exp == "residuals" and res.n_points < 1:
        ck.err("residuals.n_points", "must be positive")
    if (geometry.cone and geometry.cone.get("kind") == "cap" and model.dim != 3
            and exp == "asymptotic_flux"):
        ck.err("model.dim", "cap cone probabilities are implemented for d=3")


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully defaulted config as YAML (what ``fluxlab validate`` prints)."""
    def conv(obj: Any):
        if hasattr(obj, "__dataclass_fields__"):
            return {f.name: conv(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (tuple, list)):
            return [conv(v) for v in obj]
        if isinstance(obj, dict):
            return {k: conv(v) for k, v in obj.items()}
        return obj
    return yaml.safe_dump(conv(cfg), sort_keys=False)
