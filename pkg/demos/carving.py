"""
Carving a region from probe distances
=====================================

Every usable probe gives the distance from its centre to the obstacle, so
no part of the obstacle can lie closer than that. Removing those balls
from the measurement region leaves a set that still contains the obstacle.
More probes leave less room.

Simulating each probe takes a minute or more, so this script feeds the
carving step exact distances instead. That isolates the geometric limit
of carving from the estimation error.

Run with ``python3 demos/carving.py``.
"""

import numpy as np

from enclosure.geometry import Sphere, d_point
from enclosure.indicator import build_series
from enclosure.reconstruct import (
    EnclosureResult,
    ProbeRecord,
    carve_region,
    region_grid,
    score_against_truth,
    sphere_probes,
)

D = Sphere((0.0, 0.0, 0.0), 1.0)
OMEGA = Sphere((0.0, 0.0, 0.0), 3.0)
grid = region_grid(OMEGA, 0.06)


def exact_record(probe):
    """A record whose fitted distance is the true one."""
    d = d_point(D, probe.center) - probe.radius
    taus = np.linspace(4.0, 10.0, 7)
    series = build_series(taus, np.exp(-2.0 * d * taus), 1)
    return ProbeRecord(probe, 10.0, series=series, d_hat=d)


# %%
# Hausdorff distance between the carved region boundary and the sphere,
# for growing numbers of probes spread over a sphere of radius 6.
print(f"{'probes':>6} {'volume':>8} {'Hausdorff':>10} {'contains D':>11}")
for count in (6, 14, 26, 50, 100):
    records = [exact_record(p) for p in sphere_probes((0, 0, 0), 6.0, 0.5, count)]
    result = EnclosureResult(records, carve_region(records, grid, safety=0.0, within=OMEGA))
    m = score_against_truth(result, D)
    volume = result.region.values.sum() * grid.h**3
    print(f"{count:6d} {volume:8.2f} {m['hausdorff']:10.3f} {str(m['contains_truth']):>11}")
print(f"\nvolume of D: {4.0 / 3.0 * np.pi:.2f}")
