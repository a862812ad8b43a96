"""Single-probe pipeline and multi-probe region carving.

One probe ball gives one number: the distance from its center to the
obstacle. :func:`run_probe` produces it from a simulated measurement;
:func:`run_plan` repeats that for several probes and carves away every
point that some probe proves to be too close.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .fields import (
    Grid3,
    ScalarField3,
    SurfacePatchSet,
    build_material,
    make_surface_patches,
    rasterize_mask,
)
from .geometry import AxisBox, Shape, Sphere, d_point, dist_sets, min_observation_time
from .indicator import (
    IndicatorError,
    IndicatorSeries,
    Verdict,
    build_series,
    compute_indicator,
    extract_distance,
    predicted_sign,
    truncation_floor,
)
from .laplace import SurfaceTransform, TransformAccumulator
from .wave import (
    Penetrable,
    ProbeBall,
    RecorderTap,
    RunReport,
    SolverConfig,
    SoundHard,
    Sponge,
    initialize,
    step,
    warn_if_short,
)

log = logging.getLogger(__name__)


class NoUsableProbes(RuntimeError):
    pass


@dataclass(frozen=True)
class Obstacle:
    shape: Shape
    kind: str = "sound_hard"  # or "penetrable"
    k: float | None = None

    def __post_init__(self):
        predicted_sign(self.kind, self.k)


@dataclass(frozen=True)
class Scene:
    obstacle: Obstacle | None  # None: free space
    surface: Shape
    h: float
    sponge: Sponge = Sponge()
    cfl_factor: float = 0.9
    patch_resolution: int = 40
    gap: float | None = None  # clearance between sponge and Ω / B; default 2 h thickness


@dataclass(frozen=True)
class TimePolicy:
    """How to choose the observation time for a probe.

    ``truth``: ``factor * (2 dist(D,B) - dist(Ω,B))`` using the known obstacle;
    ``bound``: same with ``dist(D,B)`` replaced by ``distance_bound - η``;
    ``sup``: ``factor * (2 sup{|y-x| : y in Ω, x in B} - dist(Ω,B))``;
    ``fixed``: ``T`` as given.
    """

    kind: str = "truth"
    factor: float = 1.25
    T: float | None = None
    distance_bound: float | None = None

    def resolve(self, scene: Scene, probe: ProbeBall) -> float:
        B = probe.ball
        if self.kind == "fixed":
            if self.T is None:
                raise ValueError("fixed time policy needs T")
            return float(self.T)
        d_om = dist_sets(scene.surface, B)
        if self.kind == "truth":
            if scene.obstacle is None:
                raise ValueError("truth time policy needs an obstacle")
            return self.factor * min_observation_time(scene.obstacle.shape, B, scene.surface)
        if self.kind == "bound":
            if self.distance_bound is None:
                raise ValueError("bound time policy needs distance_bound")
            return self.factor * (2.0 * (self.distance_bound - probe.radius) - d_om)
        if self.kind == "sup":
            return self.factor * (2.0 * _sup_distance(scene.surface, B) - d_om)
        raise ValueError(f"unknown time policy {self.kind!r}")


def _sup_distance(surface: Shape, ball: Sphere) -> float:
    if isinstance(surface, Sphere):
        return float(np.linalg.norm(surface.c - ball.c) + surface.radius + ball.radius)
    lo, hi = surface.bounds()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    return float(np.max(np.linalg.norm(corners - ball.c, axis=1)) + ball.radius)


def scene_grid(scene: Scene, probe: ProbeBall) -> Grid3:
    """Box covering ``Ω`` and ``B`` plus clearance and the sponge shell."""
    lo_s, hi_s = scene.surface.bounds()
    lo_b, hi_b = probe.ball.bounds()
    lo = np.minimum(lo_s, lo_b)
    hi = np.maximum(hi_s, hi_b)
    gap = scene.gap if scene.gap is not None else 2.0 * scene.h * scene.sponge.thickness
    return Grid3.covering(lo - gap, hi + gap, scene.h, pad_cells=scene.sponge.thickness)


def solver_config(scene: Scene, grid: Grid3, T: float, with_obstacle: bool,
                   c_max: float | None = None) -> SolverConfig:
    ob = scene.obstacle if with_obstacle else None
    if ob is None or ob.kind == "sound_hard":
        shape = ob.shape if ob is not None else None
        mode = SoundHard(rasterize_mask(grid, shape, scene.sponge.thickness))
    else:
        mode = Penetrable(build_material(grid, ob.shape, ob.k))
    return SolverConfig(grid, mode, T, scene.cfl_factor, scene.sponge, c_max=c_max)


@dataclass
class ProbeRecord:
    probe: ProbeBall
    T: float
    series: IndicatorSeries | None = None
    transform: SurfaceTransform | None = None
    report: RunReport | None = None
    d_hat: float | None = None
    error: str | None = None

    @property
    def verdict(self) -> Verdict:
        return self.series.verdict if self.series is not None else Verdict.INDETERMINATE

    @property
    def usable(self) -> bool:
        return self.d_hat is not None and self.verdict == Verdict.CONSISTENT

    @property
    def point_distance(self) -> float | None:
        return None if self.d_hat is None else self.d_hat + self.probe.radius

    def to_dict(self) -> dict:
        return {
            "center": list(self.probe.center),
            "radius": self.probe.radius,
            "amplitude": self.probe.amplitude,
            "T": self.T,
            "d_hat": self.d_hat,
            "point_distance": self.point_distance,
            "sign_verdict": self.verdict.value,
            "error": self.error,
            "fit": None if self.series is None or self.series.fit is None
            else self.series.summary()["fit"],
        }


def simulate_transform(scene: Scene, probe: ProbeBall, T: float, taus: Sequence[float],
                       grid: Grid3 | None = None, patches: SurfacePatchSet | None = None,
                       subtract_reference: bool = True):
    """Forward-simulate the scene and return the surface transform.

    With ``subtract_reference`` a free-space run with the same grid, time
    step and initial data advances in lockstep and its traces are
    subtracted before transforming. The indicator is linear in ``w`` and
    vanishes for the free probe field, so this removes the discretization
    error of the direct wave, which would otherwise swamp the signal.
    """
    grid = grid or scene_grid(scene, probe)
    patches = patches or make_surface_patches(scene.surface, grid, scene.patch_resolution)
    shape = scene.obstacle.shape if scene.obstacle is not None else None
    patches.validate(grid, shape, scene.sponge.thickness)

    cfg = solver_config(scene, grid, T, with_obstacle=True)
    states = [initialize(cfg, probe, scene.surface)]
    if subtract_reference:
        ref = solver_config(scene, grid, T, with_obstacle=False, c_max=cfg.wave_speed_max)
        states.append(initialize(ref, probe, scene.surface))
    dt = cfg.dt
    pts = patches.tap_points()
    matrix = RecorderTap(grid, pts).matrix
    acc = TransformAccumulator(taus, len(patches), dt, patches.delta)
    t0 = time.perf_counter()
    if cfg.n_steps > 0:
        acc(0.0, np.zeros(len(pts)))
        while True:
            samples = matrix @ states[0].u.ravel()
            if subtract_reference:
                samples = samples - matrix @ states[1].u.ravel()
            acc(states[0].t, samples)
            if states[0].n >= cfg.n_steps:
                break
            for s in states:
                step(s)
    max_abs = float(np.abs(states[0].field).max())
    report = RunReport(cfg.n_steps, dt, T, time.perf_counter() - t0, max_abs, [], grid.to_dict())
    transform = acc.finalize(T) if cfg.n_steps > 0 else None
    return transform, acc.u_last, patches, report


def run_probe(scene: Scene, probe: ProbeBall, taus: Sequence[float],
              time_policy: TimePolicy = TimePolicy(), grid: Grid3 | None = None,
              floor_factor: float = 1e3, subtract_reference: bool = True) -> ProbeRecord:
    """Forward run, transform, indicator series and distance fit for one probe."""
    if scene.obstacle is None:
        raise ValueError("run_probe needs an obstacle")
    T = time_policy.resolve(scene, probe)
    warn_if_short(T, min_observation_time(scene.obstacle.shape, probe.ball, scene.surface))
    record = ProbeRecord(probe, T)
    transform, u_final, patches, report = simulate_transform(
        scene, probe, T, taus, grid=grid, subtract_reference=subtract_reference)
    record.transform, record.report = transform, report
    expected = predicted_sign(scene.obstacle.kind, scene.obstacle.k)
    if transform is None:
        record.series = build_series(taus, np.zeros(len(taus)), expected)
        record.error = "no time steps"
        return record
    values = [compute_indicator(patches, transform, probe, tau) for tau in transform.taus]
    floors = [truncation_floor(patches, probe, tau, T, u_final) for tau in transform.taus]
    series = build_series(transform.taus, values, expected, floors, floor_factor)
    series.meta.update({"T": T, "dt": report.dt, "steps": report.steps,
                        "reference_subtracted": subtract_reference})
    record.series = series
    naive = [e.naive_d for e in series.entries if e.naive_d is not None]
    try:
        record.d_hat = extract_distance(series).d_hat
    except IndicatorError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    # the echo from distance d must fit well inside the window: 2 d <= 0.8 T
    d_guess = record.d_hat if record.d_hat is not None else (naive[-1] if naive else None)
    series.meta["window_check"] = None if d_guess is None else bool(2.0 * d_guess <= 0.8 * T)
    log.info("probe %s: d_hat=%s verdict=%s (%.1fs)", probe.center, record.d_hat,
             series.verdict.value, report.wall_time)
    return record


# ---------------------------------------------------------------------------
# multi-probe
# ---------------------------------------------------------------------------


@dataclass
class ProbePlan:
    scene: Scene
    probes: list[ProbeBall]
    taus: Sequence[float]
    time_policy: TimePolicy = TimePolicy()
    region_h: float | None = None
    safety: float = 0.02

    def validate(self) -> None:
        for p in self.probes:
            if dist_sets(p.ball, self.scene.surface) <= 0.0:
                raise ValueError(f"probe at {p.center} touches the measurement surface")


@dataclass
class EnclosureResult:
    records: list[ProbeRecord]
    region: ScalarField3  # 1 possible, 0 excluded
    metrics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"probes": [r.to_dict() for r in self.records], "metrics": self.metrics,
                "region_grid": self.region.grid.to_dict()}

    def write(self, directory: str | Path) -> None:
        import csv

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "enclosure.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        self.region.write_raw(directory / "region")
        with open(directory / "probes.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["px", "py", "pz", "eta", "d_hat", "point_distance", "sign_verdict"])
            for r in self.records:
                wr.writerow([*map(repr, r.probe.center), repr(r.probe.radius),
                             "" if r.d_hat is None else repr(r.d_hat),
                             "" if r.point_distance is None else repr(r.point_distance),
                             r.verdict.value])


def region_grid(surface: Shape, h: float) -> Grid3:
    lo, hi = surface.bounds()
    return Grid3.covering(lo, hi, h, pad_cells=2)


def carve_region(records: Sequence[ProbeRecord], grid: Grid3, safety: float = 0.02,
                 within: Shape | None = None) -> ScalarField3:
    """A cell is excluded iff some usable probe ``j`` has
    ``|x - p_j| < (1 - safety) * point_distance_j``.

    With ``within`` given, cells outside that shape are excluded as well.
    """
    usable = [r for r in records if r.usable]
    if not usable:
        raise NoUsableProbes("no probe produced a usable distance")
    c = grid.centers()
    possible = np.ones(grid.shape, dtype=bool)
    for r in usable:
        dist = np.linalg.norm(c - np.asarray(r.probe.center), axis=-1)
        possible &= dist >= (1.0 - safety) * r.point_distance
    if within is not None:
        possible &= grid.sdf(within) <= 0.0
    return ScalarField3(grid, possible.astype(float), "region")


def _boundary_cells(mask: np.ndarray) -> np.ndarray:
    """Cells of ``mask`` with a 6-neighbour outside it (the grid edge is not
    a boundary)."""
    m = mask.astype(bool)
    edge = np.zeros_like(m)
    for axis in range(3):
        for shift in (1, -1):
            nb = np.roll(m, shift, axis=axis)
            sl = [slice(None)] * 3
            sl[axis] = 0 if shift == 1 else -1
            nb[tuple(sl)] = True
            edge |= m & ~nb
    return edge


def score_against_truth(result: EnclosureResult, D: Shape) -> dict:
    """Per-probe distance errors, containment and Hausdorff distances between
    the carved region boundary and ``∂D``."""
    per = []
    for r in result.records:
        true = d_point(D, r.probe.center)
        if r.point_distance is None:
            per.append({"center": list(r.probe.center), "true": true, "estimate": None,
                        "abs_error": None, "rel_error": None})
            continue
        err = abs(r.point_distance - true)
        per.append({"center": list(r.probe.center), "true": true,
                    "estimate": r.point_distance, "abs_error": err, "rel_error": err / true})
    grid = result.region.grid
    region = result.region.values > 0.5
    sdf_d = grid.sdf(D)
    inside = sdf_d < 0.0
    contained = bool(np.all(region[inside]))
    c = grid.centers()
    rb = c[_boundary_cells(region)]
    db = c[_boundary_cells(inside)]
    if len(rb) and len(db):
        d_rb = cKDTree(db).query(rb)[0]
        d_db = cKDTree(rb).query(db)[0]
        h_rd, h_dr = float(d_rb.max()), float(d_db.max())
    else:
        h_rd = h_dr = math.inf
    rel = [p["rel_error"] for p in per if p["rel_error"] is not None]
    metrics = {
        "per_probe": per,
        "median_rel_error": float(np.median(rel)) if rel else None,
        "max_rel_error": float(np.max(rel)) if rel else None,
        "contains_truth": contained,
        "hausdorff": max(h_rd, h_dr),
        "directed_region_to_obstacle": h_rd,
        "directed_obstacle_to_region": h_dr,
    }
    result.metrics = metrics
    return metrics


def run_plan(plan: ProbePlan, truth: Shape | None = None) -> EnclosureResult:
    """One forward solve per probe (tau batched inside), then carving.

    Probe failures are recorded, not raised.
    """
    plan.validate()
    records = []
    for probe in plan.probes:
        try:
            rec = run_probe(plan.scene, probe, plan.taus, plan.time_policy)
        except Exception as exc:  # one bad probe must not sink the plan
            log.warning("probe %s failed: %s", probe.center, exc)
            rec = ProbeRecord(probe, float("nan"), error=f"{type(exc).__name__}: {exc}")
        records.append(rec)
    grid = region_grid(plan.scene.surface, plan.region_h or plan.scene.h)
    region = carve_region(records, grid, plan.safety, within=plan.scene.surface)
    result = EnclosureResult(records, region)
    if truth is not None:
        score_against_truth(result, truth)
    return result


def axis_probes(center, distance: float, radius: float, amplitude: float = 1.0) -> list[ProbeBall]:
    """Six probes on the +-x, +-y, +-z axes through ``center``."""
    c = np.asarray(center, float)
    out = []
    for axis in range(3):
        for s in (1.0, -1.0):
            p = c.copy()
            p[axis] += s * distance
            out.append(ProbeBall(tuple(p), radius, amplitude))
    return out


def sphere_probes(center, distance: float, radius: float, count: int, amplitude: float = 1.0,
                  jitter: float = 0.0, seed: int = 0) -> list[ProbeBall]:
    """``count`` probes spread over a sphere (Fibonacci lattice), optionally
    jittered by a seeded random rotation angle."""
    from .geometry import _fibonacci_sphere

    dirs = _fibonacci_sphere(count)
    if jitter:
        rng = np.random.default_rng(seed)
        dirs = dirs + jitter * rng.normal(size=dirs.shape)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    c = np.asarray(center, float)
    return [ProbeBall(tuple(c + distance * d), radius, amplitude) for d in dirs]
