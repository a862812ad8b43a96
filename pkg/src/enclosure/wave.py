"""Explicit leapfrog solver for the scalar wave equation on a cell grid.

Two modes share one finite-volume kernel. The 7-point Laplacian is written
as a sum of face fluxes ``g_f (u_nb - u) / h^2``:

* sound-hard: ``g_f = 0`` on faces touching a SOLID cell (zero-flux Neumann
  closure on the staircase boundary), 1 elsewhere;
* penetrable: ``g_f`` is the harmonic mean of the two cell coefficients.

The outer shell damps the field with ``u_tt + sigma u_t = L u``, discretized
so that cells with ``sigma = 0`` reduce bit-for-bit to plain leapfrog.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .fields import (
    SOLID,
    CellMask,
    FieldError,
    Grid3,
    ScalarField3,
    sponge_depth,
    trilinear_matrix,
    write_snapshot,
)
from .geometry import Shape, Sphere, dist_sets

PAD = 1


class SolverError(RuntimeError):
    pass


class NaNDetected(SolverError):
    pass


class ProbeOutsideGrid(SolverError):
    pass


class ProbeIntersectsSurface(SolverError):
    pass


@dataclass(frozen=True)
class ProbeBall:
    """Initial velocity ``f = C * indicator(B)`` on the ball ``B(p, eta)``."""

    center: tuple[float, float, float]
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if not self.radius > 0:
            raise ValueError("probe radius must be positive")
        if self.amplitude == 0:
            raise ValueError("probe amplitude must be nonzero")

    @property
    def ball(self) -> Sphere:
        return Sphere(self.center, self.radius)

    @property
    def l1_norm(self) -> float:
        return abs(self.amplitude) * 4.0 / 3.0 * math.pi * self.radius**3

    def rasterize(self, grid: Grid3) -> np.ndarray:
        return np.where(grid.sdf(self.ball) < 0.0, self.amplitude, 0.0)


@dataclass(frozen=True)
class Sponge:
    """Graded damping shell ``sigma(d) = sigma_max (d / thickness)^exponent``.

    ``strength`` is ``sigma_max * dt`` at the outermost cell. With
    ``absorbing_wall`` the grid edge carries a first-order one-way wave
    condition underneath the shell; otherwise the box is closed (zero flux).
    """

    thickness: int = 12
    strength: float = 0.02
    exponent: float = 3.0
    absorbing_wall: bool = True


@dataclass
class SoundHard:
    mask: CellMask


@dataclass
class Penetrable:
    gamma: ScalarField3


@dataclass
class SolverConfig:
    grid: Grid3
    mode: SoundHard | Penetrable
    T: float
    cfl_factor: float = 0.9
    sponge: Sponge = field(default_factory=Sponge)
    c_max: float | None = None  # override, e.g. to share a time step between runs

    def __post_init__(self):
        if not 0 < self.cfl_factor <= 1:
            raise ValueError("cfl_factor must lie in (0, 1]")
        if self.T < 0:
            raise ValueError("T must be non-negative")

    @property
    def wave_speed_max(self) -> float:
        if self.c_max is not None:
            return float(self.c_max)
        if isinstance(self.mode, Penetrable):
            return max(1.0, math.sqrt(float(self.mode.gamma.values.max())))
        return 1.0

    @property
    def n_steps(self) -> int:
        dt_cfl = self.cfl_factor * self.grid.h / (math.sqrt(3.0) * self.wave_speed_max)
        return int(math.ceil(self.T / dt_cfl - 1e-12))

    @property
    def dt(self) -> float:
        """CFL step, shortened so that an integer number of steps lands on T."""
        dt_cfl = self.cfl_factor * self.grid.h / (math.sqrt(3.0) * self.wave_speed_max)
        n = self.n_steps
        return self.T / n if n > 0 else dt_cfl


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@numba.njit(parallel=True, cache=True)
def _leapfrog_kernel(u, u_old, gx, gy, gz, fixed, dx, dy, dz, thick, smax, expo, c2):
    """Write ``u^{n+1}`` into ``u_old``. Arrays carry one ghost layer."""
    nx, ny, nz = u.shape[0] - 2, u.shape[1] - 2, u.shape[2] - 2
    for i in numba.prange(1, nx + 1):
        di = dx[i - 1]
        for j in range(1, ny + 1):
            dij = max(di, dy[j - 1])
            for k in range(1, nz + 1):
                if fixed[i, j, k]:
                    continue
                c = u[i, j, k]
                lap = (
                    gx[i, j, k] * (u[i + 1, j, k] - c)
                    - gx[i - 1, j, k] * (c - u[i - 1, j, k])
                    + gy[i, j, k] * (u[i, j + 1, k] - c)
                    - gy[i, j - 1, k] * (c - u[i, j - 1, k])
                    + gz[i, j, k] * (u[i, j, k + 1] - c)
                    - gz[i, j, k - 1] * (c - u[i, j, k - 1])
                )
                d = max(dij, dz[k - 1])
                if d == 0:
                    u_old[i, j, k] = 2.0 * c - u_old[i, j, k] + c2 * lap
                else:
                    sdt = smax * (d / thick) ** expo
                    u_old[i, j, k] = (
                        2.0 * c - (1.0 - sdt) * u_old[i, j, k] + c2 * lap
                    ) / (1.0 + sdt)


@numba.njit(cache=True)
def _mur_kernel(u, u_new, r):
    """First-order one-way update of the six ghost faces.

    ``u`` holds level ``n`` and ``u_new`` the freshly computed level
    ``n+1``; ``r = (c dt - h) / (c dt + h)``.
    """
    nx, ny, nz = u.shape[0] - 2, u.shape[1] - 2, u.shape[2] - 2
    for j in range(1, ny + 1):
        for k in range(1, nz + 1):
            u_new[0, j, k] = u[1, j, k] + r * (u_new[1, j, k] - u[0, j, k])
            u_new[nx + 1, j, k] = u[nx, j, k] + r * (u_new[nx, j, k] - u[nx + 1, j, k])
    for i in range(1, nx + 1):
        for k in range(1, nz + 1):
            u_new[i, 0, k] = u[i, 1, k] + r * (u_new[i, 1, k] - u[i, 0, k])
            u_new[i, ny + 1, k] = u[i, ny, k] + r * (u_new[i, ny, k] - u[i, ny + 1, k])
    for i in range(1, nx + 1):
        for j in range(1, ny + 1):
            u_new[i, j, 0] = u[i, j, 1] + r * (u_new[i, j, 1] - u[i, j, 0])
            u_new[i, j, nz + 1] = u[i, j, nz] + r * (u_new[i, j, nz] - u[i, j, nz + 1])


@numba.njit(cache=True)
def _energy_kernel(u_new, u, gx, gy, gz, fixed, inv_dt2):
    """Leapfrog-conserved energy (without the h^3/2 factor).

    Kinetic part uses the time difference; the potential part is the
    cross product of face gradients at the two time levels.
    """
    nx, ny, nz = u.shape[0] - 2, u.shape[1] - 2, u.shape[2] - 2
    kin = 0.0
    pot = 0.0
    for i in range(1, nx + 1):
        for j in range(1, ny + 1):
            for k in range(1, nz + 1):
                if fixed[i, j, k]:
                    continue
                dt_u = u_new[i, j, k] - u[i, j, k]
                kin += dt_u * dt_u * inv_dt2
                a = u_new[i, j, k]
                b = u[i, j, k]
                pot += gx[i, j, k] * (u_new[i + 1, j, k] - a) * (u[i + 1, j, k] - b)
                pot += gy[i, j, k] * (u_new[i, j + 1, k] - a) * (u[i, j + 1, k] - b)
                pot += gz[i, j, k] * (u_new[i, j, k + 1] - a) * (u[i, j, k + 1] - b)
    return kin, pot


def _face_coefficients(cell: np.ndarray, harmonic: bool,
                       open_wall: bool = False) -> tuple[np.ndarray, ...]:
    """Padded face coefficient arrays; ``g[a][i]`` couples cells ``i`` and ``i+1``
    along axis ``a``. Faces touching the grid boundary are zero (closed box)
    unless ``open_wall``, in which case they couple to the ghost layer with
    the adjacent cell's coefficient."""
    shape = tuple(n + 2 * PAD for n in cell.shape)
    out = []
    for axis in range(3):
        g = np.zeros(shape)
        a = cell
        b = np.roll(cell, -1, axis=axis)
        if harmonic:
            s = a + b
            with np.errstate(invalid="ignore", divide="ignore"):
                face = np.where(s > 0, 2.0 * a * b / np.where(s > 0, s, 1.0), 0.0)
        else:
            face = np.minimum(a, b)
        sl = [slice(PAD, -PAD)] * 3
        # the last face along the axis is the grid boundary
        idx = [slice(None)] * 3
        idx[axis] = slice(0, cell.shape[axis] - 1)
        tgt = list(sl)
        tgt[axis] = slice(PAD, PAD + cell.shape[axis] - 1)
        g[tuple(tgt)] = face[tuple(idx)]
        if open_wall:
            for ghost_face, edge_cell in ((0, 0), (cell.shape[axis], cell.shape[axis] - 1)):
                gsl = list(sl)
                gsl[axis] = ghost_face
                csl = [slice(None)] * 3
                csl[axis] = edge_cell
                g[tuple(gsl)] = cell[tuple(csl)]
        out.append(g)
    return tuple(out)


@dataclass
class SolverState:
    config: SolverConfig
    u: np.ndarray  # level n, padded
    u_old: np.ndarray  # level n-1, padded
    n: int
    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray
    fixed: np.ndarray
    depth: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def t(self) -> float:
        return self.n * self.dt

    @property
    def field(self) -> np.ndarray:
        """Interior view of the current level."""
        return self.u[PAD:-PAD, PAD:-PAD, PAD:-PAD]

    def energy(self, u_next: np.ndarray | None = None) -> float:
        """Discrete energy between levels ``n-1`` and ``n`` (or ``n`` and the
        supplied next level), including the ``h^3 / 2`` factor."""
        h = self.config.grid.h
        a, b = (self.u, self.u_old) if u_next is None else (u_next, self.u)
        kin, pot = _energy_kernel(a, b, self.gx, self.gy, self.gz, self.fixed, 1.0 / self.dt**2)
        return 0.5 * h**3 * (kin + pot / h**2)


def initialize(config: SolverConfig, probe: ProbeBall, surface: Shape | None = None,
               velocity: np.ndarray | None = None) -> SolverState:
    """Level 0 is zero; level 1 is ``dt * f`` (exact to O(dt^3) since the
    initial displacement vanishes).

    Args:
        config: Grid, mode, final time and sponge.
        probe: The probe ball; its placement is checked against the grid and
            ``surface``.
        surface: Optional measurement surface that the ball must not touch.
        velocity: Optional cell array replacing ``C * 1_B`` as initial
            velocity (used for smooth-data convergence studies).
    """
    grid = config.grid
    ball = probe.ball
    lo, hi = ball.bounds()
    margin = (config.sponge.thickness + 1) * grid.h
    if np.any(lo < grid.lo + margin) or np.any(hi > grid.hi - margin):
        raise ProbeOutsideGrid("probe ball must lie inside the grid, clear of the sponge")
    if surface is not None and dist_sets(ball, surface) <= 0.0:
        raise ProbeIntersectsSurface("probe ball touches the measurement surface")

    if isinstance(config.mode, SoundHard):
        mask = config.mode.mask
        if mask.grid != grid:
            raise FieldError("mask grid differs from solver grid")
        cell = np.where(mask.labels == SOLID, 0.0, 1.0)
        gx, gy, gz = _face_coefficients(cell, harmonic=False, open_wall=config.sponge.absorbing_wall)
        solid = mask.labels == SOLID
    else:
        gamma = config.mode.gamma
        if gamma.grid != grid:
            raise FieldError("material grid differs from solver grid")
        if np.any(gamma.values <= 0):
            raise FieldError("material coefficient must be positive")
        gx, gy, gz = _face_coefficients(gamma.values, harmonic=True,
                                        open_wall=config.sponge.absorbing_wall)
        solid = np.zeros(grid.shape, dtype=bool)

    shape = tuple(n + 2 * PAD for n in grid.dims)
    fixed = np.ones(shape, dtype=np.bool_)
    fixed[PAD:-PAD, PAD:-PAD, PAD:-PAD] = solid

    f = probe.rasterize(grid) if velocity is None else np.array(velocity, dtype=float)
    if f.shape != grid.shape:
        raise FieldError(f"initial velocity shape {f.shape} != grid {grid.shape}")
    f[solid] = 0.0
    dt = config.dt
    u = np.zeros(shape)
    u[PAD:-PAD, PAD:-PAD, PAD:-PAD] = dt * f
    depth = tuple(
        np.maximum(config.sponge.thickness - np.minimum(np.arange(n), n - 1 - np.arange(n)), 0).astype(float)
        for n in grid.dims
    )
    if config.sponge.thickness == 0:
        depth = tuple(np.zeros(n) for n in grid.dims)
    return SolverState(config, u, np.zeros(shape), 1, gx, gy, gz, fixed, depth)


def _edge_speed(config: SolverConfig) -> float:
    if isinstance(config.mode, Penetrable):
        g = config.mode.gamma.values
        return math.sqrt(float(np.mean([g[0].mean(), g[-1].mean(), g[:, 0].mean(),
                                        g[:, -1].mean(), g[:, :, 0].mean(), g[:, :, -1].mean()])))
    return 1.0


def step(state: SolverState) -> SolverState:
    """Advance one level in place; raises NaNDetected on a blow-up."""
    cfg = state.config
    sp = cfg.sponge
    _leapfrog_kernel(
        state.u, state.u_old, state.gx, state.gy, state.gz, state.fixed,
        *state.depth, float(max(sp.thickness, 1)), float(sp.strength), float(sp.exponent),
        state.dt**2 / cfg.grid.h**2,
    )
    if sp.absorbing_wall:
        c_dt = state.dt * _edge_speed(cfg)
        _mur_kernel(state.u, state.u_old, (c_dt - cfg.grid.h) / (c_dt + cfg.grid.h))
    state.u, state.u_old = state.u_old, state.u
    state.n += 1
    if state.n % 32 == 0 and not np.isfinite(state.u[PAD:-PAD, PAD:-PAD, PAD:-PAD].max()):
        raise NaNDetected(f"non-finite field at step {state.n}")
    return state


# ---------------------------------------------------------------------------
# recording and driving
# ---------------------------------------------------------------------------


class RecorderTap:
    """Samples the field at fixed points by trilinear interpolation and hands
    ``(t, values)`` to ``callback`` at every time level."""

    def __init__(self, grid: Grid3, points: np.ndarray, callback: Callable | None = None,
                 keep: bool = False):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.matrix = trilinear_matrix(grid, self.points, pad=PAD)
        self.callback = callback
        self.keep = keep
        self.times: list[float] = []
        self.samples: list[np.ndarray] = []

    def sample(self, state: SolverState) -> np.ndarray:
        return self.matrix @ state.u.ravel()

    def __call__(self, t: float, values: np.ndarray) -> None:
        if self.keep:
            self.times.append(t)
            self.samples.append(values.copy())
        if self.callback is not None:
            self.callback(t, values)

    def series(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.times), np.asarray(self.samples)


@dataclass
class RunReport:
    steps: int
    dt: float
    T: float
    wall_time: float
    max_abs_u: float
    energy_trace: list[tuple[float, float]] = field(default_factory=list)
    grid: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "dt": self.dt,
            "T": self.T,
            "wall_time": self.wall_time,
            "max_abs_u": self.max_abs_u,
            "energy_trace": [list(e) for e in self.energy_trace],
            "grid": self.grid,
        }


@dataclass
class SnapshotPolicy:
    every: int = 0  # 0 disables
    directory: str = "."
    prefix: str = "u"


def run(config: SolverConfig, probe: ProbeBall, taps: Sequence[RecorderTap] = (),
        snapshots: SnapshotPolicy | None = None, energy_every: int = 0,
        surface: Shape | None = None, state: SolverState | None = None) -> RunReport:
    """Run to ``T``. Taps fire at every time level ``t_n = n dt``, n = 0..N.

    ``T = 0`` executes nothing and never fires the taps.
    """
    t0 = _time.perf_counter()
    n_total = config.n_steps
    if config.T == 0 or n_total == 0:
        return RunReport(0, config.dt, config.T, 0.0, 0.0, [], config.grid.to_dict())
    if state is None:
        state = initialize(config, probe, surface)
    dt = state.dt
    for tap in taps:
        tap(0.0, np.zeros(tap.matrix.shape[0]))
    energy: list[tuple[float, float]] = []
    max_abs = 0.0

    def emit(s: SolverState):
        nonlocal max_abs
        for tap in taps:
            tap(s.t, tap.sample(s))
        if snapshots is not None and snapshots.every > 0 and s.n % snapshots.every == 0:
            path = f"{snapshots.directory}/{snapshots.prefix}_{s.n:06d}"
            write_snapshot(path, config.grid, s.field, snapshots.prefix, s.t)

    emit(state)
    while state.n < n_total:
        if energy_every and state.n % energy_every == 0:
            energy.append((state.t - 0.5 * dt, state.energy()))
        step(state)
        emit(state)
    max_abs = float(np.abs(state.field).max())
    if not np.isfinite(max_abs):
        raise NaNDetected(f"non-finite field at step {state.n}")
    return RunReport(n_total, dt, config.T, _time.perf_counter() - t0, max_abs, energy,
                     config.grid.to_dict())


# ---------------------------------------------------------------------------
# analytic free-space solution
# ---------------------------------------------------------------------------


def free_space_oracle(x, t, probe: ProbeBall) -> np.ndarray:
    """Kirchhoff spherical-mean solution for ``u(0)=0, u_t(0)=C 1_B``.

    ``u(x,t) = C * Area(S(x,t) ∩ B) / (4 pi t)``, which reduces to
    ``C t`` while the sphere lies inside ``B``, to
    ``C (eta^2 - (d - t)^2) / (4 d)`` on the lens interval
    ``|d - eta| < t < d + eta``, and to 0 otherwise.
    """
    d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(probe.center)))
    eta, C = probe.radius, probe.amplitude
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = t + d <= eta
    out[inside] = C * t[inside]
    if d > 0:
        lens = (~inside) & (t > abs(d - eta)) & (t < d + eta)
        out[lens] = C * (eta**2 - (d - t[lens]) ** 2) / (4.0 * d)
    return out if out.ndim else float(out)


def lens_area(d: float, s, eta: float) -> np.ndarray:
    """Area of the sphere ``|y - x| = s`` inside a ball of radius ``eta`` whose
    center lies at distance ``d`` from ``x``."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s + d <= eta
    out[inside] = 4.0 * np.pi * s[inside] ** 2
    if d > 0:
        lens = (~inside) & (s > abs(d - eta)) & (s < d + eta)
        out[lens] = np.pi * s[lens] * (eta**2 - (d - s[lens]) ** 2) / d
    return out


def warn_if_short(T: float, t_min: float) -> None:
    if T <= t_min:
        warnings.warn(
            f"observation time T={T:g} does not exceed 2 dist(D,B) - dist(Ω,B) = {t_min:g}",
            stacklevel=2,
        )
