"""Built-in initial data.

Each builder returns (DistributionField, support_radius); the harness
enforces v_max >= sqrt(2) * support_radius so pairwise collisions cannot
scatter mass outside the velocity box.
"""

import numpy as np

from .field import DistributionField
from .grid import PhaseGrid


def _smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    def g(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out
    a = g(t)
    return a / (a + g(1.0 - t))


def _x_factor(grid: PhaseGrid, x_mod):
    """1 + amp * cos(2 pi k.x / L + phase) on the position grid."""
    if not x_mod:
        return np.ones((grid.n_x,) * grid.d)
    mesh = grid.x_mesh()
    k = np.asarray(x_mod.get("k", [1] + [0] * (grid.d - 1)), dtype=float)
    amp = float(x_mod.get("amplitude", 0.0))
    phase = float(x_mod.get("phase", 0.0))
    arg = 2.0 * np.pi * np.einsum("i...,i->...", mesh, k) / grid.length + phase
    return 1.0 + amp * np.cos(arg)


def maxwellian(grid: PhaseGrid, density=1.0, theta=0.25, v_center=None,
               x_mod=None):
    """Gaussian rho (2 pi theta)^{-d/2} exp(-|v-v0|^2 / 2 theta); nominal
    support radius 3 sqrt(theta) + |v0|."""
    d = grid.d
    v0 = np.zeros(d) if v_center is None else np.asarray(v_center, dtype=float)
    mesh = grid.v_mesh()
    r2 = np.sum((mesh - v0.reshape((d,) + (1,) * d)) ** 2, axis=0)
    fv = density * (2.0 * np.pi * theta) ** (-d / 2.0) * np.exp(-r2 / (2.0 * theta))
    vals = _x_factor(grid, x_mod).reshape((grid.n_x,) * d + (1,) * d) * fv
    radius = 3.0 * np.sqrt(theta) + float(np.linalg.norm(v0))
    return DistributionField(grid, np.ascontiguousarray(
        np.broadcast_to(vals, grid.shape))), radius


def smooth_box(grid: PhaseGrid, density=1.0, inner=0.45, outer=1.05,
               v_center=None, x_mod=None):
    """Radial plateau in v: 1 inside radius `inner`, smooth roll to 0 at
    `outer`.  The smoothest compact profile here; the default for transport
    and solver scenarios."""
    d = grid.d
    v0 = np.zeros(d) if v_center is None else np.asarray(v_center, dtype=float)
    mesh = grid.v_mesh()
    r = np.sqrt(np.sum((mesh - v0.reshape((d,) + (1,) * d)) ** 2, axis=0))
    fv = density * _smoothstep((outer - r) / (outer - inner))
    vals = _x_factor(grid, x_mod).reshape((grid.n_x,) * d + (1,) * d) * fv
    radius = outer + float(np.linalg.norm(v0))
    return DistributionField(grid, np.ascontiguousarray(
        np.broadcast_to(vals, grid.shape))), radius


def double_bump(grid: PhaseGrid, density=1.0, separation=0.7, width=0.55,
                axis=0, x_mod=None):
    """Two smooth bumps at +/- separation/2 along a velocity axis; the
    standard out-of-equilibrium datum for collision dynamics."""
    d = grid.d
    mesh = grid.v_mesh()
    vals_v = np.zeros((grid.n_v,) * d)
    for sgn in (+1.0, -1.0):
        c = np.zeros(d)
        c[axis] = sgn * separation / 2.0
        q = np.sum((mesh - c.reshape((d,) + (1,) * d)) ** 2, axis=0) / width**2
        inside = q < 1.0
        bump = np.zeros_like(q)
        bump[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside]))
        vals_v += density * bump
    vals = _x_factor(grid, x_mod).reshape((grid.n_x,) * d + (1,) * d) * vals_v
    radius = separation / 2.0 + width
    return DistributionField(grid, np.ascontiguousarray(
        np.broadcast_to(vals, grid.shape))), radius


BUILDERS = {
    "maxwellian": maxwellian,
    "box": smooth_box,
    "double_bump": double_bump,
}


def build_initial(grid: PhaseGrid, spec):
    """Build f0 from a config spec {type, params...}."""
    kind = spec["type"]
    if kind not in BUILDERS:
        raise ValueError(f"unknown initial datum {kind!r}; "
                         f"available: {sorted(BUILDERS)}")
    params = {k: v for k, v in spec.items() if k != "type"}
    return BUILDERS[kind](grid, **params)
