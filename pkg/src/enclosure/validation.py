"""Oracle and property suites shared by the CLI and the acceptance tests.

Each suite returns a :class:`SuiteReport`: a list of named checks with the
measured value, the tolerance it was held to and the verdict.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .fields import Grid3, rasterize_mask
from .geometry import Sphere, broken_path_length, min_observation_time
from .probe import ProbeField, weighted_energies, v_closed, v_quadrature
from .wave import (
    ProbeBall,
    RecorderTap,
    SolverConfig,
    SoundHard,
    Sponge,
    free_space_oracle,
    initialize,
    run,
    step,
)


class UnknownSuite(KeyError):
    pass


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    relation: str = "<="


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, value: float, tolerance: float, relation: str = "<=") -> Check:
        ops = {"<=": np.less_equal, "<": np.less, ">=": np.greater_equal, ">": np.greater}
        ok = bool(ops[relation](value, tolerance))
        c = Check(name, float(value), float(tolerance), ok, relation)
        self.checks.append(c)
        return c

    def to_dict(self, timing: bool = False) -> dict:
        out = {"suite": self.suite, "passed": self.passed,
               "checks": [asdict(c) for c in self.checks], "details": self.details}
        if timing:
            out["runtime"] = self.runtime
        return out


def yukawa(seed: int = 0, n: int = 20, tol: float = 1e-6) -> SuiteReport:
    """Closed-form probe field against direct shell quadrature."""
    rep = SuiteReport("yukawa")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    probe = ProbeBall((0.0, 0.0, 0.0), 0.5, 1.0)
    worst = 0.0
    for _ in range(n):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        x = direction * rng.uniform(0.0, 5.0)
        tau = rng.uniform(1.0, 12.0)
        ref = v_quadrature(probe, tau, x)
        worst = max(worst, abs(v_closed(ProbeField(probe, tau), x) - ref) / abs(ref))
    rep.runtime = time.perf_counter() - t0
    rep.add("max_rel_error", worst, tol)
    rep.add("runtime_s", rep.runtime, 10.0, "<")
    return rep


def observation_bound(seed: int = 0, n: int = 200) -> SuiteReport:
    """Observation-time bound against the broken-path length on random spheres."""
    rep = SuiteReport("prop11")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    held = 0
    worst = np.inf
    for _ in range(n):
        R = rng.uniform(2.0, 4.0)
        om = Sphere((0.0, 0.0, 0.0), R)
        rd = rng.uniform(0.2, 0.45 * R)
        cd = rng.normal(size=3)
        cd *= rng.uniform(0.0, R - rd - 0.05) / np.linalg.norm(cd)
        D = Sphere(tuple(cd), rd)
        rb = rng.uniform(0.2, 1.0)
        db = rng.normal(size=3)
        cb = db / np.linalg.norm(db) * (R + rb + rng.uniform(0.05, 3.0))
        B = Sphere(tuple(cb), rb)
        scale = float(np.linalg.norm(cb) + R)
        lhs = min_observation_time(D, B, om)
        l, _ = broken_path_length(B, D, om, n=32)
        margin = lhs - (l - 1e-6 * scale)
        worst = min(worst, margin)
        held += margin >= 0
    rep.runtime = time.perf_counter() - t0
    rep.add("fraction_holding", held / n, 1.0, ">=")
    rep.details = {"configurations": n, "min_margin": float(worst)}
    return rep


def energy_bands(h: float = 0.05, taus=(4.0, 6.0, 8.0, 10.0, 12.0), band: float = 10.0) -> SuiteReport:
    """Weighted interior energies of the probe field on a unit-sphere obstacle."""
    rep = SuiteReport("lemma-bands")
    t0 = time.perf_counter()
    D = Sphere((0.0, 0.0, 0.0), 1.0)
    probe = ProbeBall((6.0, 0.0, 0.0), 0.5)
    grid = Grid3.covering((-1.2,) * 3, (1.2,) * 3, h)
    vals = [weighted_energies(ProbeField(probe, t), D, grid) for t in taus]
    for key in ("J0", "J1"):
        arr = np.array([v[key] for v in vals])
        rep.add(f"{key}_min", arr.min(), 0.0, ">")
        rep.add(f"{key}_max_over_min", arr.max() / arr.min(), band, "<")
        rep.details[key] = arr.tolist()
    rep.details["taus"] = list(taus)
    rep.runtime = time.perf_counter() - t0
    return rep


def energy(h: float = 0.1, tol: float = 1e-9) -> SuiteReport:
    """Discrete energy of a sound-hard run with the obstacle present, up to
    just before the field can reach the absorbing shell."""
    rep = SuiteReport("energy")
    t0 = time.perf_counter()
    sponge = Sponge()
    half = 5.0
    grid = Grid3.covering((-half,) * 3, (half,) * 3, h, pad_cells=sponge.thickness)
    D = Sphere((0.0, 0.0, 0.0), 1.0)
    probe = ProbeBall((1.8, 0.0, 0.0), 0.5)
    # physical front stops 0.5 short of the shell
    T = half - 0.5 - (1.8 + 0.5)
    cfg = SolverConfig(grid, SoundHard(rasterize_mask(grid, D, sponge.thickness)), T, 0.9, sponge)
    st = initialize(cfg, probe)
    e = [st.energy()]
    while st.n < cfg.n_steps:
        step(st)
        e.append(st.energy())
    e = np.array(e)
    rep.add("max_rel_drift_per_step", np.max(np.abs(np.diff(e))) / e[0], tol, "<")
    rep.details = {"steps": int(cfg.n_steps), "h": h, "T": T,
                   "total_rel_drift": float(abs(e[-1] - e[0]) / e[0])}
    rep.runtime = time.perf_counter() - t0
    return rep


def free_space(eta: float = 0.5, refine: int = 8, tol: float = 0.02,
               ratio_band=(3.2, 4.8)) -> SuiteReport:
    """Recorded traces against the spherical-mean solution at ``h = eta/refine``
    and ``h/2``; relative L2-in-time error and the convergence ratio."""
    rep = SuiteReport("free-space")
    t0 = time.perf_counter()
    probe = ProbeBall((0.0, 0.0, 0.0), eta, 1.0)
    rng = np.random.default_rng(8)
    dirs = rng.normal(size=(8, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * (3.0 * eta)
    T = 4.0 * eta + 0.1
    half = 4.2 * eta
    errs = []
    for h in (eta / refine, eta / (2 * refine)):
        sponge = Sponge()
        grid = Grid3.covering((-half,) * 3, (half,) * 3, h, pad_cells=sponge.thickness)
        cfg = SolverConfig(grid, SoundHard(rasterize_mask(grid, None, sponge.thickness)), T, 0.9, sponge)
        tap = RecorderTap(grid, pts, keep=True)
        run(cfg, probe, [tap])
        t, u = tap.series()
        ex = np.stack([free_space_oracle(p, t, probe) for p in pts], axis=1)
        err = np.sqrt(np.sum((u - ex) ** 2, axis=0) / np.sum(ex**2, axis=0))
        errs.append(float(err.max()))
        rep.details[f"grid_{grid.dims[0]}"] = {"h": h, "max_rel_l2": float(err.max())}
    rep.add("rel_l2_error_coarse", errs[0], tol)
    ratio = errs[0] / errs[1]
    rep.add("ratio_low", ratio, ratio_band[0], ">=")
    rep.add("ratio_high", ratio, ratio_band[1], "<=")
    rep.runtime = time.perf_counter() - t0
    return rep


SUITES: dict[str, Callable[..., SuiteReport]] = {
    "yukawa": yukawa,
    "prop11": observation_bound,
    "lemma-bands": energy_bands,
    "energy": energy,
    "free-space": free_space,
}


def run_suite(name: str, seed: int = 0) -> SuiteReport:
    if name not in SUITES:
        raise UnknownSuite(name)
    fn = SUITES[name]
    if name in ("yukawa", "prop11"):
        return fn(seed=seed)
    return fn()
