"""Boundary indicator, sign classification and distance fit.

The indicator pairs the probe field ``v`` with the transformed data ``w``::

    I(τ) = ∫_{∂Ω} (∂_ν v · w − ∂_ν w · v) dS

For large ``τ`` it behaves like ``± τ^q e^{-2 τ dist(D, B)}``: positive for
sound-hard obstacles and for penetrable ones with contrast ``k < 1``,
negative for ``k > 1``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .fields import SurfacePatchSet
from .laplace import SurfaceTransform
from .probe import ProbeField, grad_v_closed, v_closed
from .wave import ProbeBall

FLOOR_FACTOR = 1e3


class IndicatorError(RuntimeError):
    pass


class MissingTau(IndicatorError):
    pass


class InsufficientData(IndicatorError):
    pass


class SignInconsistent(IndicatorError):
    pass


class Verdict(str, Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"
    INDETERMINATE = "indeterminate"


def predicted_sign(obstacle: str, k: float | None = None) -> int:
    """+1 for sound-hard and for ``k < 1``; -1 for ``k > 1``."""
    if obstacle == "sound_hard":
        return 1
    if obstacle == "penetrable":
        if k is None or k == 1.0:
            raise ValueError("penetrable obstacles need a contrast k != 1")
        return 1 if k < 1.0 else -1
    raise ValueError(f"unknown obstacle type {obstacle!r}")


def _probe_terms(patches: SurfacePatchSet, field: ProbeField) -> tuple[np.ndarray, np.ndarray]:
    v = v_closed(field, patches.positions)
    dvn = np.sum(grad_v_closed(field, patches.positions) * patches.normals, axis=1)
    return v, dvn


def compute_indicator(patches: SurfacePatchSet, transform: SurfaceTransform,
                      probe: ProbeBall, tau: float) -> float:
    """Quadrature of ``∂_ν v w − ∂_ν w v`` over the surface nodes."""
    try:
        m = transform.index(tau)
    except KeyError:
        raise MissingTau(f"tau={tau} not in transform") from None
    v, dvn = _probe_terms(patches, ProbeField(probe, tau))
    return float(np.sum(patches.weights * (dvn * transform.w_on[m] - transform.dwdn[m] * v)))


def truncation_floor(patches: SurfacePatchSet, probe: ProbeBall, tau: float, T: float,
                     u_final: np.ndarray | None) -> float:
    """Size of the indicator change caused by cutting the time integral at T.

    Uses ``∫_T^∞ e^{-τt} u dt ≈ e^{-τT} u(T) / τ`` with the recorded final
    samples (stacked on/inner/outer) and weights it by the probe field, so
    the estimate has the units of ``I``.
    """
    if u_final is None:
        return 0.0
    n = len(patches)
    u_on = np.abs(u_final[:n])
    du = np.abs(u_final[2 * n:] - u_final[n:2 * n]) / (2.0 * patches.delta)
    v, dvn = _probe_terms(patches, ProbeField(probe, tau))
    local = np.abs(dvn) * u_on + np.abs(v) * du
    return float(np.exp(-tau * T) / tau * np.sum(patches.weights * local))


@dataclass
class Entry:
    tau: float
    I: float
    log_abs_I: float
    naive_d: float | None
    floor: float
    above_floor: bool
    sign_ok: bool
    used_in_fit: bool = False


@dataclass
class Fit:
    d_hat: float
    q_hat: float
    c_hat: float
    residual: float
    tau_window: tuple[float, float]
    naive_d_at_tau_max: float | None = None


@dataclass
class IndicatorSeries:
    entries: list[Entry]
    expected_sign: int
    sign_consensus: str = "mixed"
    verdict: Verdict = Verdict.INDETERMINATE
    fit: Fit | None = None
    meta: dict = field(default_factory=dict)

    @property
    def taus(self) -> np.ndarray:
        return np.array([e.tau for e in self.entries])

    @property
    def values(self) -> np.ndarray:
        return np.array([e.I for e in self.entries])

    def usable(self) -> list[Entry]:
        return [e for e in self.entries if e.above_floor]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["tau", "I", "log_abs_I", "naive_d", "used_in_fit"])
            for e in self.entries:
                wr.writerow([repr(e.tau), repr(e.I), repr(e.log_abs_I),
                             "" if e.naive_d is None else repr(e.naive_d), int(e.used_in_fit)])

    def summary(self) -> dict:
        return {
            "expected_sign": self.expected_sign,
            "sign_consensus": self.sign_consensus,
            "verdict": self.verdict.value,
            "fit": None if self.fit is None else asdict(self.fit),
            "meta": self.meta,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def build_series(taus, values, expected_sign: int, floors=None,
                 floor_factor: float = FLOOR_FACTOR) -> IndicatorSeries:
    """Assemble sorted entries; entries with ``|I| <= floor_factor * floor``
    (or exactly zero) are flagged and never enter the fit."""
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    floors = np.zeros_like(taus) if floors is None else np.asarray(floors, dtype=float)
    order = np.argsort(taus)
    entries = []
    for i in order:
        tau, I, fl = float(taus[i]), float(values[i]), float(floors[i])
        above = bool(np.isfinite(I) and abs(I) > floor_factor * fl and I != 0.0)
        log_abs = float(np.log(abs(I))) if I != 0.0 and np.isfinite(I) else float("-inf")
        sign_ok = bool(np.sign(I) == expected_sign)
        naive = -log_abs / (2.0 * tau) if (sign_ok and above) else None
        entries.append(Entry(tau, I, log_abs, naive, fl, above, sign_ok))
    series = IndicatorSeries(entries, expected_sign, meta={"floor_factor": floor_factor})
    series.verdict = classify_sign(series)
    signs = {int(np.sign(e.I)) for e in series.usable()}
    series.sign_consensus = (
        "positive" if signs == {1} else "negative" if signs == {-1} else "mixed"
    )
    return series


def classify_sign(series: IndicatorSeries, min_entries: int = 4) -> Verdict:
    """Compare the sign of every above-floor entry with the prediction."""
    usable = series.usable()
    if len(usable) < min_entries:
        return Verdict.INDETERMINATE
    if all(np.sign(e.I) == series.expected_sign for e in usable):
        return Verdict.CONSISTENT
    return Verdict.INCONSISTENT


def extract_distance(series: IndicatorSeries, min_entries: int = 4) -> Fit:
    """Least squares ``log|I| = -2 d τ + q log τ + c`` over usable entries.

    The free ``log τ`` coefficient absorbs the unknown power prefactor, which
    removes most of the finite-``τ`` bias of ``-log|I| / (2τ)``.
    """
    usable = series.usable()
    if len(usable) < min_entries:
        naive = [e.naive_d for e in series.entries if e.naive_d is not None]
        raise InsufficientData(
            f"{len(usable)} usable entries (< {min_entries}); naive estimate {naive[-1] if naive else None}"
        )
    if any(np.sign(e.I) != series.expected_sign for e in usable):
        raise SignInconsistent("indicator sign disagrees with the prediction")
    tau = np.array([e.tau for e in usable])
    y = np.array([e.log_abs_I for e in usable])
    A = np.stack([-2.0 * tau, np.log(tau), np.ones_like(tau)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    for e in usable:
        e.used_in_fit = True
    fit = Fit(
        d_hat=float(coef[0]),
        q_hat=float(coef[1]),
        c_hat=float(coef[2]),
        residual=float(np.sqrt(np.mean(resid**2))),
        tau_window=(float(tau.min()), float(tau.max())),
        naive_d_at_tau_max=usable[-1].naive_d,
    )
    series.fit = fit
    return fit
