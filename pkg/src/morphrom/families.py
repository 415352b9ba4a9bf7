"""Deterministic synthetic shape families (plates and NACA airfoils).

Airfoil shape parameters and flow parameters come from scrambled Halton
sequences, so a seed fully determines a family.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc

# sampling boxes; the reference airfoil is NACA 0012
AIRFOIL_BOX = {"m": (0.0, 0.05), "p": (0.3, 0.6), "t": (0.09, 0.15)}
FLOW_BOX = {"v0": (0.5, 1.5), "theta0": (-0.2, 0.2)}
REFERENCE_AIRFOIL = (0.0, 0.4, 0.12)
REFERENCE_PLATE_RADIUS = 0.5


def plate_radii(n):
    """R_i = 0.2 + 0.6 i / n for i = 1..n."""
    if n < 1:
        raise ValueError("n must be positive")
    return 0.2 + 0.6 * np.arange(1, n + 1) / n


def _halton(n, box, seed):
    if n < 1:
        raise ValueError("n must be positive")
    lo = np.array([b[0] for b in box.values()])
    hi = np.array([b[1] for b in box.values()])
    u = qmc.Halton(d=len(box), scramble=True, seed=seed).random(n)
    return lo + (hi - lo) * u


def airfoil_params(n, seed=0):
    """``(n, 3)`` NACA parameters (m, p, t)."""
    return _halton(n, AIRFOIL_BOX, seed)


def flow_params(n, seed=0):
    """``(n, 2)`` flow parameters (v0, theta0); independent stream from the shapes."""
    return _halton(n, FLOW_BOX, seed + 1)
