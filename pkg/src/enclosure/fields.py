"""Uniform cell-centered grids, rasterization and surface quadrature."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import AxisBox, Shape, Sphere

FLUID, SOLID, SPONGE = 0, 1, 2


class FieldError(ValueError):
    pass


class UnderresolvedObstacle(FieldError):
    pass


class NonPositiveContrast(FieldError):
    pass


class UnsupportedSurfaceShape(FieldError):
    pass


class OutOfBounds(FieldError):
    pass


@dataclass(frozen=True)
class Grid3:
    """Isotropic cell-centered grid; cell ``(i, j, k)`` sits at
    ``origin + h * (i + 1/2, j + 1/2, k + 1/2)``."""

    origin: tuple[float, float, float]
    h: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if not self.h > 0:
            raise FieldError(f"grid spacing must be positive, got {self.h}")
        if min(self.dims) < 8:
            raise FieldError(f"grid needs at least 8 cells per axis, got {self.dims}")

    @classmethod
    def covering(cls, lo, hi, h: float, pad_cells: int = 0) -> "Grid3":
        """Smallest grid of spacing ``h`` covering ``[lo, hi]`` plus ``pad_cells``
        on every side."""
        lo = np.asarray(lo, float) - pad_cells * h
        hi = np.asarray(hi, float) + pad_cells * h
        dims = np.ceil((hi - lo) / h - 1e-9).astype(int)
        dims = np.maximum(dims, 8)
        center = 0.5 * (lo + hi)
        origin = center - 0.5 * dims * h
        return cls(tuple(origin), h, tuple(dims))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.h * np.asarray(self.dims)

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.h * (np.arange(self.dims[a]) + 0.5)

    def centers(self) -> np.ndarray:
        """All cell centers, shape ``(nx, ny, nz, 3)``."""
        x, y, z = np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def sdf(self, shape: Shape) -> np.ndarray:
        """Shape sdf at cell centers, evaluated slab by slab."""
        out = np.empty(self.dims)
        ys, zs = np.meshgrid(self.axis(1), self.axis(2), indexing="ij")
        pts = np.empty(ys.shape + (3,))
        pts[..., 1], pts[..., 2] = ys, zs
        for i, x in enumerate(self.axis(0)):
            pts[..., 0] = x
            out[i] = shape.sdf(pts)
        return out

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "spacing": self.h, "dims": list(self.dims)}


@dataclass
class ScalarField3:
    grid: Grid3
    values: np.ndarray
    name: str = "field"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise FieldError(f"values shape {self.values.shape} != grid {self.grid.shape}")

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise FieldError(f"non-finite values in {self.name}")

    def write_raw(self, path: str | Path, time: float | None = None) -> Path:
        """Write ``<path>.raw`` (little-endian float32, x fastest) and a JSON
        sidecar ``<path>.json``."""
        return write_snapshot(path, self.grid, self.values, self.name, time)


def write_snapshot(path, grid: Grid3, values: np.ndarray, name: str, time=None) -> Path:
    path = Path(path)
    raw = path.with_suffix(".raw")
    np.asarray(values, dtype="<f4").ravel(order="F").tofile(raw)
    meta = {
        "dims": list(grid.dims),
        "origin": list(grid.origin),
        "spacing": grid.h,
        "time": time,
        "name": name,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return raw


def read_snapshot(path) -> ScalarField3:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = Grid3(tuple(meta["origin"]), meta["spacing"], tuple(meta["dims"]))
    data = np.fromfile(path.with_suffix(".raw"), dtype="<f4")
    values = data.reshape(grid.dims, order="F").astype(float)
    return ScalarField3(grid, values, meta.get("name", "field"))


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


@dataclass
class CellMask:
    grid: Grid3
    labels: np.ndarray  # int8, FLUID / SOLID / SPONGE
    sponge_thickness: int

    @property
    def solid(self) -> np.ndarray:
        return self.labels == SOLID

    @property
    def solid_count(self) -> int:
        return int(np.count_nonzero(self.labels == SOLID))


def sponge_depth(grid: Grid3, thickness: int) -> np.ndarray:
    """Depth (in cells, 1..thickness) of each cell inside the outer absorbing
    shell; 0 in the interior."""
    depths = []
    for n in grid.dims:
        i = np.arange(n)
        edge = np.minimum(i, n - 1 - i)
        depths.append(np.maximum(thickness - edge, 0))
    dx, dy, dz = depths
    return np.maximum(np.maximum(dx[:, None, None], dy[None, :, None]), dz[None, None, :])


def _check_resolved(grid: Grid3, D: Shape, min_cells: int = 6) -> None:
    lo, hi = D.bounds()
    span = (np.asarray(hi) - np.asarray(lo)) / grid.h
    if np.any(span < min_cells):
        raise UnderresolvedObstacle(
            f"obstacle spans {span.min():.1f} cells on its thinnest axis (< {min_cells})"
        )


def rasterize_mask(grid: Grid3, D: Shape | None, sponge_thickness: int = 12) -> CellMask:
    """Label cells SOLID (obstacle sdf < 0 at the center), SPONGE (outer shell)
    or FLUID. ``D=None`` means free space."""
    labels = np.zeros(grid.shape, dtype=np.int8)
    if sponge_thickness > 0:
        labels[sponge_depth(grid, sponge_thickness) > 0] = SPONGE
    if D is not None:
        _check_resolved(grid, D)
        labels[grid.sdf(D) < 0.0] = SOLID
    return CellMask(grid, labels, sponge_thickness)


def build_material(grid: Grid3, D: Shape | None, k: float) -> ScalarField3:
    """Scalar coefficient: ``k`` inside ``D``, 1 elsewhere."""
    if not k > 0:
        raise NonPositiveContrast(f"contrast must be positive, got {k}")
    gamma = np.ones(grid.shape)
    if D is not None and k != 1.0:
        gamma[grid.sdf(D) < 0.0] = k
    return ScalarField3(grid, gamma, "gamma")


def volume_fraction(sdf: np.ndarray, h: float) -> np.ndarray:
    """Linear estimate of the fraction of each cell inside the zero level set."""
    return np.clip(0.5 - sdf / h, 0.0, 1.0)


# ---------------------------------------------------------------------------
# surface quadrature
# ---------------------------------------------------------------------------


@dataclass
class SurfacePatchSet:
    positions: np.ndarray  # (n, 3)
    normals: np.ndarray  # (n, 3), unit, outward
    weights: np.ndarray  # (n,) area elements
    delta: float  # normal offset distance

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def inner(self) -> np.ndarray:
        return self.positions - self.delta * self.normals

    @property
    def outer(self) -> np.ndarray:
        return self.positions + self.delta * self.normals

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def tap_points(self) -> np.ndarray:
        """Stacked ``[on; inner; outer]`` positions, shape ``(3n, 3)``."""
        return np.concatenate([self.positions, self.inner, self.outer])

    def validate(self, grid: Grid3, D: Shape | None, sponge_thickness: int) -> None:
        """All nodes (with offsets) lie outside ``D`` and inside the
        non-sponge part of the grid."""
        pts = self.tap_points()
        if D is not None and np.any(D.sdf(pts) <= 0.0):
            raise FieldError("surface nodes intersect the obstacle")
        margin = (sponge_thickness + 1) * grid.h
        if np.any(pts < grid.lo + margin) or np.any(pts > grid.hi - margin):
            raise FieldError("surface nodes reach into the sponge shell or off the grid")


def make_surface_patches(Omega: Shape, grid: Grid3, resolution: int = 48) -> SurfacePatchSet:
    """Quadrature nodes on ``∂Ω`` with normal-offset pairs at distance ``h``.

    Spheres use Gauss-Legendre in ``cos θ`` times a uniform ``φ`` rule
    (``resolution x 2*resolution`` nodes). Boxes use midpoint cells,
    ``resolution`` per edge on every face.
    """
    if isinstance(Omega, Sphere):
        mu, wmu = np.polynomial.legendre.leggauss(resolution)
        nphi = 2 * resolution
        phi = (np.arange(nphi) + 0.5) * 2.0 * np.pi / nphi
        M, P = np.meshgrid(mu, phi, indexing="ij")
        W = np.repeat(wmu[:, None], nphi, axis=1) * (2.0 * np.pi / nphi)
        s = np.sqrt(1.0 - M**2)
        normals = np.stack([s * np.cos(P), s * np.sin(P), M], axis=-1).reshape(-1, 3)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        positions = Omega.c + Omega.radius * normals
        weights = (Omega.radius**2 * W).ravel()
    elif isinstance(Omega, AxisBox):
        lo, hi = np.asarray(Omega.lo), np.asarray(Omega.hi)
        s = (np.arange(resolution) + 0.5) / resolution
        U, V = np.meshgrid(s, s, indexing="ij")
        pos, nrm, wts = [], [], []
        for axis in range(3):
            a1, a2 = [a for a in range(3) if a != axis]
            da, db = hi[a1] - lo[a1], hi[a2] - lo[a2]
            for side, sign in ((lo[axis], -1.0), (hi[axis], 1.0)):
                p = np.empty((U.size, 3))
                p[:, axis] = side
                p[:, a1] = lo[a1] + U.ravel() * da
                p[:, a2] = lo[a2] + V.ravel() * db
                n = np.zeros((U.size, 3))
                n[:, axis] = sign
                pos.append(p)
                nrm.append(n)
                wts.append(np.full(U.size, da * db / resolution**2))
        positions, normals, weights = map(np.concatenate, (pos, nrm, wts))
    else:
        raise UnsupportedSurfaceShape(f"surface must be a Sphere or AxisBox, got {type(Omega).__name__}")
    return SurfacePatchSet(positions, normals, weights, grid.h)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def _trilinear_stencil(grid: Grid3, points: np.ndarray):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = (pts - grid.lo) / grid.h - 0.5
    i0 = np.floor(s).astype(np.int64)
    dims = np.asarray(grid.dims)
    if np.any(i0 < 0) or np.any(i0 + 1 > dims - 1):
        raise OutOfBounds("interpolation point outside the grid interior")
    frac = s - i0
    return i0, frac


def trilinear_matrix(grid: Grid3, points: np.ndarray, pad: int = 0) -> sp.csr_matrix:
    """Sparse operator mapping flattened cell values to trilinear samples.

    With ``pad > 0`` the column indices address an array padded by ``pad``
    ghost cells on every side (as used by the solver).
    """
    i0, frac = _trilinear_stencil(grid, points)
    n = len(i0)
    shape = tuple(d + 2 * pad for d in grid.dims)
    rows, cols, vals = [], [], []
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                idx = np.ravel_multi_index(
                    (i0[:, 0] + dx + pad, i0[:, 1] + dy + pad, i0[:, 2] + dz + pad), shape
                )
                rows.append(np.arange(n))
                cols.append(idx)
                vals.append(wx * wy * wz)
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, int(np.prod(shape))),
    )
    m.sum_duplicates()
    return m


def sample_trilinear(field: ScalarField3, p) -> float | np.ndarray:
    """Trilinear interpolation of cell-centered values at ``p`` (one point or
    an ``(n, 3)`` array)."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    i0, f = _trilinear_stencil(field.grid, p)
    v = field.values
    out = np.zeros(len(i0))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                out += wx * wy * wz * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return float(out[0]) if single else out
