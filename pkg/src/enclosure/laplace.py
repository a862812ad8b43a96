"""Streaming finite-time Laplace transform of recorded surface traces."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TransformError(RuntimeError):
    pass


class NonMonotoneTime(TransformError):
    pass


class IncompleteRun(TransformError):
    pass


@dataclass
class SurfaceTransform:
    """``w(x; τ) = ∫_0^T e^{-τt} u(x, t) dt`` at every node and its two
    normal offsets, for a batch of ``τ`` values (rows)."""

    taus: np.ndarray  # (m,)
    w_on: np.ndarray  # (m, n)
    w_inner: np.ndarray
    w_outer: np.ndarray
    delta: float

    @property
    def dwdn(self) -> np.ndarray:
        return (self.w_outer - self.w_inner) / (2.0 * self.delta)

    def index(self, tau: float) -> int:
        hits = np.flatnonzero(np.isclose(self.taus, tau, rtol=1e-12, atol=0.0))
        if hits.size == 0:
            raise KeyError(tau)
        return int(hits[0])

    def __sub__(self, other: "SurfaceTransform") -> "SurfaceTransform":
        if not np.array_equal(self.taus, other.taus) or self.delta != other.delta:
            raise TransformError("transforms differ in tau list or offset")
        return SurfaceTransform(self.taus, self.w_on - other.w_on,
                                self.w_inner - other.w_inner,
                                self.w_outer - other.w_outer, self.delta)

    def to_csv(self, path: str | Path, positions: np.ndarray) -> None:
        dwdn = self.dwdn
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["node_id", "x", "y", "z", "tau", "w_on", "dwdn"])
            for m, tau in enumerate(self.taus):
                for i, p in enumerate(positions):
                    wr.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
                                 repr(float(tau)), repr(float(self.w_on[m, i])),
                                 repr(float(dwdn[m, i]))])


class TransformAccumulator:
    """Trapezoidal accumulation of ``e^{-τt} u(t)`` one time level at a time.

    Samples arrive as stacked ``[on; inner; outer]`` vectors (length
    ``3 * n_nodes``) at ``t_k = k * dt``. Every level gets weight ``dt``
    except the first and last, which get ``dt / 2``; the last correction is
    applied in :meth:`finalize`.
    """

    def __init__(self, taus, n_nodes: int, dt: float, delta: float):
        taus = np.sort(np.asarray(taus, dtype=float))
        if taus.size == 0 or np.any(taus <= 0):
            raise ValueError("tau values must be positive")
        self.taus = taus
        self.n_nodes = int(n_nodes)
        self.dt = float(dt)
        self.delta = float(delta)
        self.sums = np.zeros((taus.size, 3 * self.n_nodes))
        self.t_last: float | None = None
        self.u_last: np.ndarray | None = None
        self.count = 0

    def accumulate(self, t: float, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (3 * self.n_nodes,):
            raise ValueError(f"expected {3 * self.n_nodes} samples, got {values.shape}")
        if self.t_last is not None and not t > self.t_last:
            raise NonMonotoneTime(f"time {t} does not advance past {self.t_last}")
        w = 0.5 * self.dt if abs(t) < 0.5 * self.dt else self.dt
        self.sums += np.outer(np.exp(-self.taus * t) * w, values)
        self.t_last = float(t)
        self.u_last = values.copy()
        self.count += 1

    __call__ = accumulate

    def finalize(self, T: float | None = None) -> SurfaceTransform:
        if self.t_last is None:
            raise IncompleteRun("no samples accumulated")
        if T is not None and self.t_last < T - self.dt * (1.0 + 1e-9):
            raise IncompleteRun(f"run stopped at t={self.t_last:g} before T={T:g}")
        sums = self.sums - np.outer(0.5 * self.dt * np.exp(-self.taus * self.t_last), self.u_last)
        n = self.n_nodes
        return SurfaceTransform(self.taus.copy(), sums[:, :n], sums[:, n:2 * n],
                                sums[:, 2 * n:], self.delta)
