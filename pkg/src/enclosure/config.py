"""Run configuration: YAML schema, defaults, validation and echo.

Errors point at the offending line of the source file. A resolved config
contains every default filled in; dumping it with :func:`dump_resolved`
and loading the result gives the same :class:`RunConfig` back.

Schema (all sections optional except ``scene.surface``)::

    seed: 0
    scene:
      obstacle:            # null for free space
        shape: {type: sphere, center: [0, 0, 0], radius: 1.0}
        kind: sound_hard   # or penetrable
        k: null            # contrast, required for penetrable
      surface: {type: sphere, center: [0, 0, 0], radius: 3.0}
      h: 0.1
      patch_resolution: 40
      sponge: {thickness: 12, strength: 0.02, exponent: 3.0, absorbing_wall: true}
    probes:                # a list of balls, or a generator mapping
      - {center: [6, 0, 0], radius: 0.5, amplitude: 1.0}
    solver:
      cfl_factor: 0.9
      subtract_reference: true
      time: {policy: truth, factor: 1.25, T: null, distance_bound: null}
    tau: {min: 1.0, max: 12.0, count: 23, spacing: linear}
    outputs: {dir: out, snapshot_every: 0, record_nodes: 64}
    reconstruct: {safety: 0.02, region_h: null, score: true}

Shapes are ``{type: sphere, center, radius}``, ``{type: box, lo, hi}`` or
``{type: union, parts: [...]}``. A probe generator is
``{placement: axis|sphere, center, distance, radius, amplitude, count, jitter}``.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import AxisBox, GeometryError, Shape, Sphere, Union, dist_sets
from .reconstruct import Obstacle, Scene, TimePolicy, axis_probes, sphere_probes
from .wave import ProbeBall, Sponge

OUTPUT_DIR_ENV = "ENCLOSURE_OUTPUT_DIR"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "scene": {
        "obstacle": None,
        "h": 0.1,
        "patch_resolution": 40,
        "sponge": {"thickness": 12, "strength": 0.02, "exponent": 3.0, "absorbing_wall": True},
    },
    "probes": [],
    "solver": {
        "cfl_factor": 0.9,
        "subtract_reference": True,
        "time": {"policy": "truth", "factor": 1.25, "T": None, "distance_bound": None},
    },
    "tau": {"min": 1.0, "max": 12.0, "count": 23, "spacing": "linear"},
    "outputs": {"dir": "out", "snapshot_every": 0, "record_nodes": 64},
    "reconstruct": {"safety": 0.02, "region_h": None, "score": True},
}


class ConfigError(ValueError):
    """Schema or geometry problem in a run configuration."""

    def __init__(self, message: str, path: str = "", line: int | None = None,
                 source: str | None = None):
        self.path, self.line, self.source = path, line, source
        where = source or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        field = f" [{path}]" if path else ""
        super().__init__(f"{where}:{field} {message}")


class _Lines:
    """Maps dotted key paths to 1-based source lines using the YAML node tree."""

    def __init__(self, text: str):
        self.lines: dict[str, int] = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            node = None
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, path: str) -> None:
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                self.lines[sub] = k.start_mark.line + 1
                self._walk_child(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk_child(v, f"{path}[{i}]")

    def _walk_child(self, node, path: str) -> None:
        line = self.lines.get(path)
        self._walk(node, path)
        if line is not None:
            self.lines[path] = line

    def find(self, path: str) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return self.lines.get("")


def _merge(defaults: dict, data: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in data.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Validated configuration plus the objects built from it."""

    raw: dict
    scene: Scene
    probes: list[ProbeBall]
    taus: np.ndarray
    time_policy: TimePolicy
    seed: int
    output_dir: Path
    snapshot_every: int
    record_nodes: int
    subtract_reference: bool
    safety: float
    region_h: float | None
    score: bool
    source: str | None = None

    def resolved(self) -> dict:
        """The fully defaulted config tree, with the effective output dir."""
        out = copy.deepcopy(self.raw)
        out["outputs"]["dir"] = str(self.output_dir)
        return out


class _Validator:
    def __init__(self, lines: _Lines, source: str | None):
        self.lines, self.source = lines, source

    def fail(self, path: str, message: str):
        raise ConfigError(message, path, self.lines.find(path), self.source)

    def mapping(self, value, path: str, allowed: set[str]) -> dict:
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        for key in value:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else str(key), f"unknown key {key!r}")
        return value

    def number(self, value, path: str, lo: float | None = None, hi: float | None = None,
               lo_open: bool = False, integer: bool = False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer and not float(value).is_integer():
            self.fail(path, f"expected an integer, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "must be finite")
        if lo is not None and (value <= lo if lo_open else value < lo):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {value}")
        if hi is not None and value > hi:
            self.fail(path, f"must be <= {hi}, got {value}")
        return int(value) if integer else float(value)

    def vec3(self, value, path: str) -> tuple[float, float, float]:
        if not isinstance(value, list) or len(value) != 3:
            self.fail(path, "expected a list of three numbers")
        return tuple(self.number(v, f"{path}[{i}]") for i, v in enumerate(value))

    def require(self, mapping: dict, key: str, path: str):
        if key not in mapping or mapping[key] is None:
            self.fail(f"{path}.{key}" if path else key, "required field is missing")
        return mapping[key]

    def choice(self, value, path: str, options: tuple[str, ...]) -> str:
        if value not in options:
            self.fail(path, f"must be one of {', '.join(options)}; got {value!r}")
        return value

    def shape(self, value, path: str) -> Shape:
        m = self.mapping(value, path, {"type", "center", "radius", "lo", "hi", "parts"})
        kind = self.choice(self.require(m, "type", path), f"{path}.type", ("sphere", "box", "union"))
        try:
            if kind == "sphere":
                return Sphere(self.vec3(self.require(m, "center", path), f"{path}.center"),
                              self.number(self.require(m, "radius", path), f"{path}.radius", 0, lo_open=True))
            if kind == "box":
                return AxisBox(self.vec3(self.require(m, "lo", path), f"{path}.lo"),
                               self.vec3(self.require(m, "hi", path), f"{path}.hi"))
            parts = self.require(m, "parts", path)
            if not isinstance(parts, list) or not parts:
                self.fail(f"{path}.parts", "expected a non-empty list of shapes")
            return Union(tuple(self.shape(p, f"{path}.parts[{i}]") for i, p in enumerate(parts)))
        except GeometryError as exc:
            self.fail(path, str(exc))


def _floats(v) -> list[float]:
    return [float(x) for x in v]


def _shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Sphere):
        return {"type": "sphere", "center": _floats(shape.center), "radius": float(shape.radius)}
    if isinstance(shape, AxisBox):
        return {"type": "box", "lo": _floats(shape.lo), "hi": _floats(shape.hi)}
    return {"type": "union", "parts": [_shape_to_dict(p) for p in shape.parts]}


def parse_config(text: str, source: str | None = None, env: dict | None = None) -> RunConfig:
    """Validate YAML text and build the run objects.

    Raises:
        ConfigError: on any schema, range or geometry violation.
    """
    lines = _Lines(text)
    val = _Validator(lines, source)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", "",
                          None if mark is None else mark.line + 1, source) from None
    if data is None:
        data = {}
    val.mapping(data, "", set(DEFAULTS))
    cfg = _merge(DEFAULTS, data)

    seed = val.number(cfg["seed"], "seed", 0, integer=True)

    sc = val.mapping(cfg["scene"], "scene", {"obstacle", "surface", "h", "patch_resolution", "sponge"})
    surface = val.shape(val.require(sc, "surface", "scene"), "scene.surface")
    h = val.number(sc["h"], "scene.h", 0, lo_open=True)
    patch_res = val.number(sc["patch_resolution"], "scene.patch_resolution", 2, integer=True)
    sp = val.mapping(sc["sponge"], "scene.sponge", {"thickness", "strength", "exponent", "absorbing_wall"})
    if not isinstance(sp["absorbing_wall"], bool):
        val.fail("scene.sponge.absorbing_wall", "expected true or false")
    sponge = Sponge(val.number(sp["thickness"], "scene.sponge.thickness", 0, integer=True),
                    val.number(sp["strength"], "scene.sponge.strength", 0),
                    val.number(sp["exponent"], "scene.sponge.exponent", 0, lo_open=True),
                    sp["absorbing_wall"])

    obstacle = None
    if sc["obstacle"] is not None:
        ob = val.mapping(sc["obstacle"], "scene.obstacle", {"shape", "kind", "k"})
        ob.setdefault("kind", "sound_hard")
        ob.setdefault("k", None)
        shape = val.shape(val.require(ob, "shape", "scene.obstacle"), "scene.obstacle.shape")
        kind = val.choice(ob["kind"], "scene.obstacle.kind", ("sound_hard", "penetrable"))
        k = None if ob["k"] is None else val.number(ob["k"], "scene.obstacle.k", 0, lo_open=True)
        try:
            obstacle = Obstacle(shape, kind, k)
        except ValueError as exc:
            val.fail("scene.obstacle.k", str(exc))

    so = val.mapping(cfg["solver"], "solver", {"cfl_factor", "subtract_reference", "time"})
    cfl = val.number(so["cfl_factor"], "solver.cfl_factor", 0, 1, lo_open=True)
    if not isinstance(so["subtract_reference"], bool):
        val.fail("solver.subtract_reference", "expected true or false")
    tm = val.mapping(so["time"], "solver.time", {"policy", "factor", "T", "distance_bound"})
    policy = val.choice(tm["policy"], "solver.time.policy", ("truth", "bound", "sup", "fixed"))
    factor = val.number(tm["factor"], "solver.time.factor", 0, lo_open=True)
    T = None if tm["T"] is None else val.number(tm["T"], "solver.time.T", 0)
    bound = None if tm["distance_bound"] is None else val.number(
        tm["distance_bound"], "solver.time.distance_bound", 0, lo_open=True)
    if policy == "fixed" and T is None:
        val.fail("solver.time.T", "required when policy is fixed")
    if policy == "bound" and bound is None:
        val.fail("solver.time.distance_bound", "required when policy is bound")
    if policy == "truth" and obstacle is None:
        val.fail("solver.time.policy", "policy truth needs scene.obstacle")
    time_policy = TimePolicy(policy, factor, T, bound)

    ta = val.mapping(cfg["tau"], "tau", {"min", "max", "count", "spacing"})
    t_min = val.number(ta["min"], "tau.min", 0, lo_open=True)
    t_max = val.number(ta["max"], "tau.max", t_min)
    count = val.number(ta["count"], "tau.count", 1, integer=True)
    spacing = val.choice(ta["spacing"], "tau.spacing", ("linear", "log"))
    if count == 1:
        taus = np.array([t_max])
    elif spacing == "linear":
        taus = np.linspace(t_min, t_max, count)
    else:
        taus = np.geomspace(t_min, t_max, count)

    probes = _probes(val, cfg["probes"], seed)

    out = val.mapping(cfg["outputs"], "outputs", {"dir", "snapshot_every", "record_nodes"})
    env = os.environ if env is None else env
    out_dir = Path(env.get(OUTPUT_DIR_ENV) or str(out["dir"]))
    snap = val.number(out["snapshot_every"], "outputs.snapshot_every", 0, integer=True)
    record_nodes = val.number(out["record_nodes"], "outputs.record_nodes", 1, integer=True)

    rc = val.mapping(cfg["reconstruct"], "reconstruct", {"safety", "region_h", "score"})
    safety = val.number(rc["safety"], "reconstruct.safety", 0, 0.5)
    region_h = None if rc["region_h"] is None else val.number(
        rc["region_h"], "reconstruct.region_h", 0, lo_open=True)
    if not isinstance(rc["score"], bool):
        val.fail("reconstruct.score", "expected true or false")

    scene = Scene(obstacle, surface, h, sponge, cfl, patch_res)
    if obstacle is not None:
        margin = 2.0 * h
        worst = float(np.max(surface.sdf(obstacle.shape.sample_boundary(32))))
        if worst >= -margin:
            val.fail("scene.obstacle.shape",
                     f"obstacle must lie inside scene.surface with margin {margin:g} (max sdf {worst:g})")
    for i, p in enumerate(probes):
        if dist_sets(p.ball, surface) <= 0.0:
            path = "probes" if isinstance(cfg["probes"], dict) else f"probes[{i}]"
            val.fail(path, f"probe ball at {list(p.center)} touches scene.surface")

    # normalized tree for the echo
    cfg["seed"] = seed
    cfg["scene"]["surface"] = _shape_to_dict(surface)
    cfg["scene"]["h"] = h
    if obstacle is not None:
        cfg["scene"]["obstacle"] = {"shape": _shape_to_dict(obstacle.shape), "kind": obstacle.kind,
                                    "k": obstacle.k}
    if isinstance(cfg["probes"], list):
        cfg["probes"] = [{"center": _floats(p.center), "radius": float(p.radius),
                          "amplitude": float(p.amplitude)}
                         for p in probes]
    return RunConfig(cfg, scene, probes, taus, time_policy, seed, out_dir, snap, record_nodes,
                     so["subtract_reference"], safety, region_h, rc["score"], source)


def _probes(val: _Validator, value, seed: int) -> list[ProbeBall]:
    def ball(m, path, amp_default=1.0):
        c = val.vec3(val.require(m, "center", path), f"{path}.center")
        r = val.number(val.require(m, "radius", path), f"{path}.radius", 0, lo_open=True)
        a = val.number(m.get("amplitude", amp_default), f"{path}.amplitude")
        if a == 0:
            val.fail(f"{path}.amplitude", "must be nonzero")
        return c, r, a

    if isinstance(value, list):
        out = []
        for i, item in enumerate(value):
            path = f"probes[{i}]"
            val.mapping(item, path, {"center", "radius", "amplitude"})
            out.append(ProbeBall(*ball(item, path)))
        return out
    m = val.mapping(value, "probes",
                    {"placement", "center", "distance", "radius", "amplitude", "count", "jitter"})
    placement = val.choice(m.get("placement"), "probes.placement", ("axis", "sphere"))
    c, r, a = ball(m, "probes")
    dist = val.number(val.require(m, "distance", "probes"), "probes.distance", 0, lo_open=True)
    if placement == "axis":
        return axis_probes(c, dist, r, a)
    count = val.number(val.require(m, "count", "probes"), "probes.count", 1, integer=True)
    jitter = val.number(m.get("jitter", 0.0), "probes.jitter", 0)
    return sphere_probes(c, dist, r, count, a, jitter, seed)


def load_config(path: str | Path, env: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return parse_config(text, str(path), env)


def dump_resolved(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.resolved(), sort_keys=True, default_flow_style=None)
