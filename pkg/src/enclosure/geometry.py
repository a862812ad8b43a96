"""Shapes, set distances and the reflected-path functional.

Every shape answers a signed distance ``sdf(x)`` (negative inside) that is
exact outside the shape. Distances between shapes use closed forms where
they exist and fall back to boundary sampling plus local refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union as _TypingUnion

import numpy as np
from scipy.optimize import minimize

__all__ = [
    "Sphere",
    "AxisBox",
    "Union",
    "Point",
    "Shape",
    "SceneGeometry",
    "GeometryError",
    "dist_sets",
    "dist_sets_numeric",
    "d_point",
    "broken_path_length",
    "min_observation_time",
]


class GeometryError(ValueError):
    pass


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite coordinates: {v!r}")
    return a


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Near-uniform unit vectors, ``n`` of them."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5.0**0.5) * k
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(_vec(self.center)))
        if not self.radius > 0:
            raise GeometryError(f"sphere radius must be positive, got {self.radius}")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)

    def sdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.c, axis=-1) - self.radius

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.c - self.radius, self.c + self.radius

    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius**3

    def sample_boundary(self, n: int = 64) -> np.ndarray:
        return self.c + self.radius * _fibonacci_sphere(n * n)

    def project(self, x: np.ndarray) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.c
        nrm = np.linalg.norm(d)
        if nrm == 0.0:
            d, nrm = np.array([1.0, 0.0, 0.0]), 1.0
        return self.c + self.radius * d / nrm

    def normal(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.c
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class AxisBox:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo, hi = _vec(self.lo), _vec(self.hi)
        if not np.all(lo < hi):
            raise GeometryError(f"box requires lo < hi componentwise: {lo} vs {hi}")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))

    def sdf(self, x) -> np.ndarray:
        q = np.abs(np.asarray(x, dtype=float) - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo), np.asarray(self.hi)

    def area(self) -> float:
        a, b, c = 2.0 * self.half
        return 2.0 * (a * b + b * c + a * c)

    def volume(self) -> float:
        return float(np.prod(2.0 * self.half))

    def sample_boundary(self, n: int = 64) -> np.ndarray:
        # n x n midpoint samples per face
        s = (np.arange(n) + 0.5) / n
        u, v = np.meshgrid(s, s, indexing="ij")
        u, v = u.ravel(), v.ravel()
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        pts = []
        for axis in range(3):
            a1, a2 = [ax for ax in range(3) if ax != axis]
            for side in (lo[axis], hi[axis]):
                p = np.empty((u.size, 3))
                p[:, axis] = side
                p[:, a1] = lo[a1] + u * (hi[a1] - lo[a1])
                p[:, a2] = lo[a2] + v * (hi[a2] - lo[a2])
                pts.append(p)
        return np.concatenate(pts)

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        p = np.clip(x, lo, hi)
        if np.any(p != x):
            return p
        # interior point: push to the nearest face
        gaps = np.concatenate([x - lo, hi - x])
        k = int(np.argmin(gaps))
        p = x.copy()
        p[k % 3] = lo[k % 3] if k < 3 else hi[k % 3]
        return p


@dataclass(frozen=True)
class Point:
    """Degenerate shape holding a single point (used for point-set distances)."""

    center: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(_vec(self.center)))

    def sdf(self, x) -> np.ndarray:
        return np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(self.center), axis=-1)

    def bounds(self):
        c = np.asarray(self.center)
        return c, c

    def sample_boundary(self, n: int = 64) -> np.ndarray:
        return np.asarray(self.center)[None, :]

    def project(self, x):
        return np.asarray(self.center, dtype=float)


@dataclass(frozen=True)
class Union:
    """Union of shapes. The sdf is the min over parts: exact outside, and
    only conservative inside when parts overlap (see ``overlapping``)."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise GeometryError("Union needs at least one part")
        object.__setattr__(self, "parts", parts)

    def sdf(self, x) -> np.ndarray:
        return np.min(np.stack([p.sdf(x) for p in self.parts]), axis=0)

    def bounds(self):
        bs = [p.bounds() for p in self.parts]
        return np.min([b[0] for b in bs], axis=0), np.max([b[1] for b in bs], axis=0)

    @property
    def overlapping(self) -> bool:
        n = len(self.parts)
        return any(
            dist_sets(self.parts[i], self.parts[j]) == 0.0
            for i in range(n)
            for j in range(i + 1, n)
        )

    def volume(self) -> float:
        if self.overlapping:
            raise GeometryError("volume of overlapping union is not available")
        return float(sum(p.volume() for p in self.parts))

    def sample_boundary(self, n: int = 64) -> np.ndarray:
        pts = np.concatenate([p.sample_boundary(n) for p in self.parts])
        keep = self.sdf(pts) > -1e-9
        return pts[keep]


Shape = _TypingUnion[Sphere, AxisBox, Union, Point]


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def d_point(A: Shape, p) -> float:
    """Distance from point ``p`` to the closed set ``A`` (0 if inside)."""
    p = _vec(p)
    if isinstance(A, Union):
        return min(d_point(part, p) for part in A.parts)
    return float(max(0.0, A.sdf(p)))


def _box_box(a: AxisBox, b: AxisBox) -> float:
    gap = np.maximum(0.0, np.maximum(np.asarray(b.lo) - a.hi, np.asarray(a.lo) - b.hi))
    return float(np.linalg.norm(gap))


def dist_sets(A: Shape, B: Shape) -> float:
    """``inf {|x - y| : x in A, y in B}``; 0 when the sets touch or overlap.

    Closed forms cover every pair of primitives; unions reduce to their parts.
    """
    if isinstance(A, Union):
        return min(dist_sets(p, B) for p in A.parts)
    if isinstance(B, Union):
        return min(dist_sets(A, p) for p in B.parts)
    if isinstance(A, Point):
        return d_point(B, A.center)
    if isinstance(B, Point):
        return d_point(A, B.center)
    if isinstance(A, Sphere) and isinstance(B, Sphere):
        return float(max(0.0, np.linalg.norm(A.c - B.c) - A.radius - B.radius))
    if isinstance(A, Sphere) and isinstance(B, AxisBox):
        return float(max(0.0, B.sdf(A.c) - A.radius))
    if isinstance(A, AxisBox) and isinstance(B, Sphere):
        return float(max(0.0, A.sdf(B.c) - B.radius))
    if isinstance(A, AxisBox) and isinstance(B, AxisBox):
        return _box_box(A, B)
    return dist_sets_numeric(A, B)[0]


def dist_sets_numeric(A: Shape, B: Shape, n: int = 64) -> tuple[float, float]:
    """Sampled set distance refined by Nelder-Mead.

    Minimizes ``d_B(x)`` over ``x`` on the boundary of ``A`` (the infimum of
    a distance between disjoint compact sets is attained on the boundary).
    ``d_B`` is exact outside ``B`` because every primitive sdf is.

    Returns:
        ``(distance, error_bound)``; the bound is the boundary sample spacing.
    """
    pa = A.sample_boundary(n)
    pb = B.sample_boundary(n)
    if np.any(B.sdf(pa) <= 0.0) or np.any(A.sdf(pb) <= 0.0):
        return 0.0, 0.0
    vals = B.sdf(pa)
    spacing = _sample_spacing(A, n)
    best = float(vals.min())
    if isinstance(A, Point):
        return best, 0.0
    x0 = pa[int(np.argmin(vals))]

    def objective(x):
        return float(B.sdf(A.project(x)))

    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    best = min(best, max(0.0, float(res.fun)))
    return best, spacing


def _sample_spacing(A: Shape, n: int) -> float:
    if isinstance(A, Point):
        return 0.0
    if isinstance(A, Union):
        return max(_sample_spacing(p, n) for p in A.parts)
    lo, hi = A.bounds()
    return float(np.max(hi - lo)) * np.pi / n


def _boundary_distance(S: Shape, y: np.ndarray) -> np.ndarray:
    """Distance from points ``y`` to the boundary of ``S``."""
    return np.abs(S.sdf(y))


def broken_path_length(B: Shape, D: Shape, Omega: Shape, n: int = 64) -> tuple[float, float]:
    """Shortest path leaving ``∂B``, touching ``∂D`` and ending on ``∂Ω``.

    For a fixed reflection point ``y`` the two legs decouple, so the
    minimization runs over ``y`` on ``∂D`` only:
    ``l = min_y (dist(y, ∂B) + dist(y, ∂Ω))``.

    Returns:
        ``(length, error_bound)`` where the bound is the ``∂D`` sample spacing
        (the refined value is never below the true minimum by construction).
    """
    parts = D.parts if isinstance(D, Union) else (D,)
    best = np.inf
    for part in parts:
        ys = part.sample_boundary(n)
        if isinstance(D, Union):
            ys = ys[D.sdf(ys) > -1e-9]
            if ys.size == 0:
                continue
        vals = _boundary_distance(B, ys) + _boundary_distance(Omega, ys)
        best = min(best, float(vals.min()))
        if isinstance(part, Point):
            continue
        order = np.argsort(vals)[:4]

        def objective(x, part=part):
            y = part.project(x)
            pen = 0.0
            if isinstance(D, Union):
                pen = max(0.0, -float(D.sdf(y))) * 10.0
            return float(_boundary_distance(B, y) + _boundary_distance(Omega, y)) + pen

        for idx in order:
            res = minimize(objective, ys[idx], method="Nelder-Mead",
                           options={"xatol": 1e-11, "fatol": 1e-13, "maxiter": 6000})
            y = part.project(res.x)
            if isinstance(D, Union) and D.sdf(y) < -1e-9:
                continue
            best = min(best, float(_boundary_distance(B, y) + _boundary_distance(Omega, y)))
    return best, _sample_spacing(D, n)


def min_observation_time(D: Shape, B: Shape, Omega: Shape) -> float:
    """Lower bound ``2 dist(D,B) - dist(Ω,B)`` on the observation time.

    Callers must pick ``T`` strictly above this value.
    """
    return 2.0 * dist_sets(D, B) - dist_sets(Omega, B)


@dataclass(frozen=True)
class SceneGeometry:
    obstacle: Shape
    surface: Shape
    probe: Sphere

    def validate(self, h: float | None = None) -> None:
        """Check ``closure(D) ⊂ Ω`` (with a 2-cell margin when ``h`` is given)
        and ``closure(B) ∩ closure(Ω) = ∅``."""
        margin = 2.0 * h if h is not None else 0.0
        pts = self.obstacle.sample_boundary(32)
        worst = float(np.max(self.surface.sdf(pts)))
        if worst >= -margin:
            raise GeometryError(
                f"obstacle must lie inside the surface with margin {margin:g} (max sdf {worst:g})"
            )
        if dist_sets(self.probe, self.surface) <= 0.0:
            raise GeometryError("probe ball must not touch the measurement surface")
