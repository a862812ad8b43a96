"""
The probe field and how fast it decays
======================================

The probe field ``v`` solves ``(Δ - τ²) v + f = 0`` in all of space, where
``f`` is the indicator of the probe ball times an amplitude. For a ball it
has a closed form. This script checks it against brute-force quadrature and
shows the exponential decay that turns the indicator into a distance meter.

Run with ``python3 demos/probe_field.py``.
"""

import numpy as np

from enclosure.probe import ProbeField, v_closed, v_quadrature
from enclosure.wave import ProbeBall

# %%
# A unit-amplitude ball of radius 0.5 at the origin.
probe = ProbeBall((0.0, 0.0, 0.0), 0.5, 1.0)

# %%
# Closed form against quadrature at a few points inside and outside the ball.
print(f"{'r':>5} {'tau':>5} {'closed form':>14} {'quadrature':>14} {'rel. diff':>10}")
for r, tau in [(0.0, 2.0), (0.3, 5.0), (0.5, 1.0), (1.5, 4.0), (4.0, 10.0)]:
    x = (r, 0.0, 0.0)
    a = v_closed(ProbeField(probe, tau), x)
    b = v_quadrature(probe, tau, x)
    print(f"{r:5.2f} {tau:5.1f} {a:14.6e} {b:14.6e} {abs(a - b) / abs(b):10.1e}")

# %%
# Outside the ball, log v falls off like -tau * (distance to the ball).
# The slope of log v against tau approaches that distance once the
# algebraic prefactor is divided out.
x = (3.0, 0.0, 0.0)
taus = np.linspace(6.0, 12.0, 7)
logv = np.log([v_closed(ProbeField(probe, t), x) for t in taus])
prefactor = np.log((probe.radius * taus - 1.0) / taus**3)
slope = -np.polyfit(taus, logv - prefactor, 1)[0]
print(f"\ndecay rate at |x| = 3: {slope:.4f} (distance to the ball: {3.0 - probe.radius})")
