"""Yukawa potential of a uniformly charged ball.

``v`` solves ``(Δ - τ²) v + C 1_B = 0`` in free space. Radially about the
ball center ``p`` with ``r = |x - p|``::

    r >= η:  v = C/τ² (τη cosh τη - sinh τη) e^{-τr} / (τr)
    r <  η:  v = C/τ² (1 - (1 + τη) e^{-τη} sinh(τr) / (τr))

Exponentials are regrouped so nothing overflows for large ``τ``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .fields import Grid3, volume_fraction
from .geometry import Shape, dist_sets
from .wave import ProbeBall, lens_area


class OverlapError(ValueError):
    pass


class SingularPoint(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeField:
    probe: ProbeBall
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def __call__(self, x) -> np.ndarray:
        return v_closed(self, x)

    def grad(self, x) -> np.ndarray:
        return grad_v_closed(self, x)


def _radius(field: ProbeField, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    rel = x - np.asarray(field.probe.center)
    return rel, np.linalg.norm(rel, axis=-1)


def _sinhc(z: np.ndarray) -> np.ndarray:
    """``sinh(z) / z`` for ``z >= 0``, without cancellation near 0."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-3
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z * z / 6.0 + z**4 / 120.0, np.sinh(zs) / zs)


def radial_profile(probe: ProbeBall, tau: float, r) -> tuple[np.ndarray, np.ndarray]:
    """``(v(r), dv/dr(r))`` of the ball potential."""
    r = np.asarray(r, dtype=float)
    C, eta, t = probe.amplitude, probe.radius, tau
    te = t * eta
    v = np.empty_like(r)
    dv = np.empty_like(r)
    out = r >= eta
    if np.any(out):
        ro = r[out]
        if te < 0.1:
            # te cosh te - sinh te = te^3/3 + te^5/30 + te^7/840 + ..., which
            # cancels catastrophically in the exponential form
            poly = te**3 * (1.0 / 3.0 + te**2 / 30.0 + te**4 / 840.0 + te**6 / 45360.0)
            core = poly * np.exp(-t * ro)
        else:
            # (te cosh te - sinh te) e^{-t r} regrouped into decaying exponentials
            core = 0.5 * ((te - 1.0) * np.exp(t * (eta - ro)) + (te + 1.0) * np.exp(-t * (eta + ro)))
        v[out] = C / t**2 * core / (t * ro)
        dv[out] = -C / t**3 * core * (t * ro + 1.0) / ro**2
    if np.any(~out):
        ri = r[~out]
        z = t * ri
        # (1 + te) e^{-te} sinh(z)/z, with sinh(z) e^{-te} kept bounded
        amp = (1.0 + te) * np.exp(-te)
        v[~out] = C / t**2 * (1.0 - amp * _sinhc(z))
        # d/dr [sinh(z)/z] = t (z cosh z - sinh z) / z^2
        small = z < 1e-3
        zs = np.where(small, 1.0, z)
        g = np.where(small, z / 3.0 + z**3 / 30.0, (zs * np.cosh(zs) - np.sinh(zs)) / zs**2)
        dv[~out] = -C / t**2 * amp * t * g
    return v, dv


def v_closed(field: ProbeField, x) -> np.ndarray:
    """Closed-form ``v(x; τ)`` at one point or an ``(n, 3)`` array."""
    _, r = _radius(field, x)
    v, _ = radial_profile(field.probe, field.tau, np.atleast_1d(r))
    return v.reshape(np.shape(r)) if np.ndim(r) else float(v[0])


def grad_v_closed(field: ProbeField, x) -> np.ndarray:
    """Analytic gradient; zero at the ball center by symmetry."""
    rel, r = _radius(field, x)
    r1 = np.atleast_1d(r)
    _, dv = radial_profile(field.probe, field.tau, r1)
    rel1 = np.atleast_2d(rel)
    safe = np.where(r1 > 0, r1, 1.0)
    g = np.where((r1 > 0)[:, None], rel1 / safe[:, None] * dv[:, None], 0.0)
    return g.reshape(np.shape(rel))


def v_quadrature(probe: ProbeBall, tau: float, x, tol: float = 1e-10) -> float:
    """Direct evaluation of ``(1/4π) ∫_B e^{-τ|x-y|} / |x-y| f(y) dy``.

    Integrates over spheres ``|y - x| = s``: each shell contributes
    ``C e^{-τs} / s * Area(S(x, s) ∩ B)``. The ``1/s`` singularity cancels
    against the ``s^2`` area growth for ``x`` inside ``B``.
    """
    if not 1e-12 <= tol <= 1e-3:
        raise ValueError("tol must lie in [1e-12, 1e-3]")
    d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(probe.center)))
    eta = probe.radius
    lo, hi = max(0.0, d - eta), d + eta

    def integrand(s):
        if s <= 0.0:
            return 0.0
        return np.exp(-tau * s) / s * float(lens_area(d, np.array([s]), eta)[0])

    pts = [p for p in (abs(d - eta), eta - d) if lo < p < hi]
    val, err = integrate.quad(integrand, lo, hi, points=pts or None,
                              epsabs=0.0, epsrel=tol, limit=400)
    if not np.isfinite(val) or (val != 0 and err > 10 * tol * abs(val)):
        raise SingularPoint(f"quadrature did not converge at distance {d}")
    return probe.amplitude * val / (4.0 * np.pi)


def weighted_energies(field: ProbeField, D: Shape, grid: Grid3) -> dict:
    """Weighted interior energies of the probe field on the obstacle.

    ``J0 = τ⁶ e^{2τd} ∫_D v²`` and ``J1 = τ⁴ e^{2τd} ∫_D |∇v|²`` with
    ``d = dist(D, B)``; both stay bounded away from zero as ``τ`` grows.
    Integrals use the midpoint rule with linear volume fractions on cut cells.
    """
    d = dist_sets(D, field.probe.ball)
    if d <= 0.0:
        raise OverlapError("obstacle and probe ball overlap")
    sdf = grid.sdf(D)
    frac = volume_fraction(sdf, grid.h)
    sel = frac > 0
    pts = grid.centers()[sel]
    w = frac[sel] * grid.h**3
    tau = field.tau
    # scale out the dominant exponential before squaring
    rel = pts - np.asarray(field.probe.center)
    r = np.linalg.norm(rel, axis=1)
    v, dv = radial_profile(field.probe, tau, r)
    scale = np.exp(tau * d)
    i0 = float(np.sum(w * (v * scale) ** 2))
    i1 = float(np.sum(w * (dv * scale) ** 2))
    return {"J0": tau**6 * i0, "J1": tau**4 * i1, "dist": d,
            "int_v2": i0 / scale**2, "int_grad2": i1 / scale**2}
