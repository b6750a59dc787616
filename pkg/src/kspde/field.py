"""Density fields on a phase grid: interpolation, composition, weighted integrals."""

from dataclasses import dataclass

import numpy as np

from .grid import PhaseGrid


@dataclass
class DistributionField:
    """Nonnegative density f(t, x, v) sampled on grid nodes.

    values has shape grid.shape with index order (x1..xd, v1..vd).
    """

    grid: PhaseGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self, t=None):
        return DistributionField(self.grid, self.values.copy(),
                                 self.t if t is None else t)

    def xv_view(self):
        """Flattened (n_x^d, n_v^d) view: x-major, v-minor."""
        g = self.grid
        return self.values.reshape(g.n_x**g.d, g.n_v**g.d)

    def mass(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def l1(self):
        return float(np.abs(self.values).sum() * self.grid.cell_volume)

    def l2(self):
        return float(np.sqrt((self.values**2).sum() * self.grid.cell_volume))

    def linf(self):
        return float(np.abs(self.values).max())

    def clamp_nonnegative(self):
        """Zero out negative values in place; returns the clamped mass (>= 0)."""
        neg = np.minimum(self.values, 0.0)
        clamped = abs(float(neg.sum() * self.grid.cell_volume))
        if clamped > 0.0:
            np.maximum(self.values, 0.0, out=self.values)
        return clamped


def _axis_weights(t):
    """Split fractional index t into (lower index, upper weight)."""
    i0 = np.floor(t).astype(np.int64)
    return i0, t - i0


def interpolate(f: DistributionField, points):
    """Multilinear interpolation at phase points (n, 2d).

    Positions wrap on the torus; velocities outside the box contribute 0
    (zero extension).
    """
    g = f.grid
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != 2 * g.d:
        raise ValueError(f"points must have {2 * g.d} columns")

    idx0 = []
    wts = []
    valid_hi = []  # per velocity axis: validity of the i0 / i0+1 nodes
    for ax in range(g.d):  # position axes, periodic
        t = pts[:, ax] / g.h_x
        i0, w = _axis_weights(t)
        idx0.append(np.mod(i0, g.n_x))
        wts.append(w)
        valid_hi.append(None)
    for ax in range(g.d):  # velocity axes, zero-extended
        t = (pts[:, g.d + ax] + g.v_max) / g.h_v - 0.5
        i0, w = _axis_weights(t)
        idx0.append(i0)
        wts.append(w)
        valid_hi.append(True)

    vals = f.values
    out = np.zeros(pts.shape[0])
    n_ax = 2 * g.d
    for corner in range(1 << n_ax):
        w = np.ones(pts.shape[0])
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        ok = np.ones(pts.shape[0], dtype=bool)
        for ax in range(n_ax):
            hi = (corner >> ax) & 1
            w = w * (wts[ax] if hi else (1.0 - wts[ax]))
            i = idx0[ax] + hi
            if ax < g.d:
                i = np.mod(i, g.n_x)
                size = g.n_x
            else:
                ok &= (i >= 0) & (i < g.n_v)
                i = np.clip(i, 0, g.n_v - 1)
                size = g.n_v
            flat = flat * size + i
        contrib = np.where(ok, vals.ravel()[flat], 0.0)
        out += w * contrib
    return out


def compose(f: DistributionField, flow_map, t=None, clamp=True):
    """Sample f along a flow map: g(node) = f(map(node)).

    For densities (clamp=True) tiny negative interpolation artifacts are
    clamped to zero and the clamped mass is stored on the result as
    .clamped_mass.  Signed fields (e.g. collision sources) must pass
    clamp=False.
    """
    vals = interpolate(f, flow_map.points).reshape(f.grid.shape)
    out = DistributionField(f.grid, vals, f.t if t is None else t)
    out.clamped_mass = out.clamp_nonnegative() if clamp else 0.0
    return out


_WEIGHT_NAMES = ("mass", "v1", "v2", "speed_sq", "x_sq", "weighted")


def moment_weight(grid: PhaseGrid, weight):
    """Weight array on the full grid for a named or callable weight.

    Named weights: "mass" (1), "v1", "v2", "speed_sq" (|v|^2), "x_sq" (|x|^2),
    "weighted" (1+|x|^2+|v|^2).  A callable is applied to the velocity mesh.
    """
    d = grid.d
    shape_x = (grid.n_x,) * d + (1,) * d
    shape_v = (1,) * d + (grid.n_v,) * d
    if callable(weight):
        return np.broadcast_to(weight(grid.v_mesh()).reshape(shape_v), grid.shape)
    if weight == "mass":
        return np.ones(grid.shape)
    if weight == "v1":
        w = grid.v_mesh()[0]
    elif weight == "v2":
        if d < 2:
            raise ValueError("v2 weight needs d >= 2")
        w = grid.v_mesh()[1]
    elif weight == "speed_sq":
        w = grid.v_speed_sq()
    elif weight == "x_sq":
        return np.broadcast_to(grid.x_radius_sq().reshape(shape_x), grid.shape)
    elif weight == "weighted":
        return (1.0 + grid.x_radius_sq().reshape(shape_x)
                + grid.v_speed_sq().reshape(shape_v))
    else:
        raise ValueError(f"unknown weight {weight!r}; use one of {_WEIGHT_NAMES}")
    return np.broadcast_to(w.reshape(shape_v), grid.shape)


def moment(f: DistributionField, weight="mass"):
    """Midpoint-rule integral of f times a weight over phase space."""
    w = moment_weight(f.grid, weight)
    return float((f.values * w).sum() * f.grid.cell_volume)


def momentum(f: DistributionField):
    """First velocity moment as a length-d vector."""
    if f.grid.d == 1:
        return np.array([moment(f, "v1")])
    return np.array([moment(f, "v1"), moment(f, "v2")])


def kinetic_energy(f: DistributionField):
    return 0.5 * moment(f, "speed_sq")


def _xlogx(values):
    out = np.zeros_like(values)
    pos = values > 0.0
    out[pos] = values[pos] * np.log(values[pos])
    return out


def entropy(f: DistributionField):
    """Integral of f log f with the convention 0 log 0 = 0."""
    return float(_xlogx(f.values).sum() * f.grid.cell_volume)


def entropy_pm(f: DistributionField):
    """Positive and negative parts of the entropy integrand, both >= 0."""
    s = _xlogx(f.values)
    pos = float(np.maximum(s, 0.0).sum() * f.grid.cell_volume)
    neg = float(-np.minimum(s, 0.0).sum() * f.grid.cell_volume)
    return pos, neg


def velocity_marginal(f: DistributionField):
    """<f>(x) = integral of f over v, shape (n_x,)*d."""
    g = f.grid
    axes = tuple(range(g.d, 2 * g.d))
    return f.values.sum(axis=axes) * g.v_cell
