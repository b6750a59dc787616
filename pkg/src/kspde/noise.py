"""Transport-noise coefficients sigma_k and derived Ito-form quantities.

Each built-in mode is sigma_k(x,v) = c_k(x) * rot(psi_k)(v), where rot is the
perpendicular velocity gradient (-d/dv2, d/dv1) of a compactly supported
stream function, so Div_v sigma_k = 0 holds analytically.  The spatial factor
c_k is a smooth periodic function on the position torus.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import PhaseGrid

COLLAR_CELLS = 2  # stream support must stay this many v-cells away from the box edge

TWO_PI = 2.0 * np.pi


class StreamProfile:
    """Radial stream function psi(v) = F(q), q = |v - center|^2 / width^2.

    Subclasses provide F, F', F'' on q in [0, 1); psi vanishes for q >= 1.
    """

    def __init__(self, center, width):
        self.center = np.asarray(center, dtype=np.float64)
        self.width = float(width)
        if self.width <= 0:
            raise ValueError("stream width must be positive")

    def _f(self, q):
        raise NotImplementedError

    def _df(self, q):
        raise NotImplementedError

    def _d2f(self, q):
        raise NotImplementedError

    def _uq(self, v):
        u = (np.asarray(v, dtype=np.float64) - self.center) / self.width
        q = np.sum(u * u, axis=-1)
        return u, q

    def value(self, v):
        u, q = self._uq(v)
        out = np.zeros_like(q)
        inside = q < 1.0
        out[inside] = self._f(q[inside])
        return out

    def grad(self, v):
        """d psi / dv, shape (..., 2)."""
        u, q = self._uq(v)
        out = np.zeros_like(u)
        inside = q < 1.0
        df = self._df(q[inside])
        out[inside] = (2.0 / self.width) * df[..., None] * u[inside]
        return out

    def hess(self, v):
        """d^2 psi / dv^2, shape (..., 2, 2)."""
        u, q = self._uq(v)
        out = np.zeros(u.shape + (2,))
        inside = q < 1.0
        ui = u[inside]
        df = self._df(q[inside])
        d2f = self._d2f(q[inside])
        w2 = self.width**2
        outer = ui[..., :, None] * ui[..., None, :]
        eye = np.eye(2)
        out[inside] = (4.0 / w2) * d2f[..., None, None] * outer \
            + (2.0 / w2) * df[..., None, None] * eye
        return out

    def support_reach(self):
        """Max per-axis |v| over the support ball."""
        return np.max(np.abs(self.center)) + self.width


class BumpProfile(StreamProfile):
    """Classic C-infinity bump: F(q) = exp(1 - 1/(1-q))."""

    def _f(self, q):
        return np.exp(1.0 - 1.0 / (1.0 - q))

    def _df(self, q):
        return -self._f(q) / (1.0 - q) ** 2

    def _d2f(self, q):
        return self._f(q) * (2.0 * q - 1.0) / (1.0 - q) ** 4


class GaussTaperedProfile(StreamProfile):
    """Gaussian with cubic taper, C^2 at the support edge:
    F(q) = exp(-2q) (1-q)^3."""

    def _f(self, q):
        return np.exp(-2.0 * q) * (1.0 - q) ** 3

    def _df(self, q):
        return -np.exp(-2.0 * q) * (1.0 - q) ** 2 * (5.0 - 2.0 * q)

    def _d2f(self, q):
        return np.exp(-2.0 * q) * (2.0 * (1.0 - q) ** 2 * (5.0 - 2.0 * q)
                                   + 6.0 * (1.0 - q) * (2.0 - q))


_PROFILES = {"bump": BumpProfile, "gauss_tapered": GaussTaperedProfile}


@dataclass
class StreamMode:
    """One noise mode: spatial wavevector, stream profile, amplitude, phase."""

    kx: np.ndarray
    amplitude: float
    phase: float
    profile: StreamProfile
    length: float  # torus period, for the spatial factor

    def c(self, x):
        """Spatial factor amp * cos(2 pi kx.x / L + phase); periodic exactly."""
        x = np.asarray(x, dtype=np.float64)
        arg = TWO_PI * (x @ self.kx) / self.length + self.phase
        return self.amplitude * np.cos(arg)

    def grad_c(self, x):
        x = np.asarray(x, dtype=np.float64)
        arg = TWO_PI * (x @ self.kx) / self.length + self.phase
        return (-self.amplitude * np.sin(arg))[..., None] * (TWO_PI * self.kx / self.length)

    def vpart(self, v):
        """rot(psi)(v) = (-d2 psi, d1 psi), shape (..., 2)."""
        g = self.profile.grad(v)
        return np.stack([-g[..., 1], g[..., 0]], axis=-1)

    def dvpart(self, v):
        """Velocity Jacobian of the v-part, shape (..., 2, 2), [i, j] = d_j (rot psi)_i."""
        h = self.profile.hess(v)
        out = np.empty(h.shape)
        out[..., 0, :] = -h[..., 1, :]
        out[..., 1, :] = h[..., 0, :]
        return out

    def sigma(self, x, v):
        return self.c(x)[..., None] * self.vpart(v)

    def dsigma_dv(self, x, v):
        return self.c(x)[..., None, None] * self.dvpart(v)


@dataclass
class ConstantMode:
    """Test-only constant field sigma_k = vector (bypasses the collar rule)."""

    vector: np.ndarray

    def c(self, x):
        return np.ones(np.asarray(x).shape[:-1])

    def grad_c(self, x):
        x = np.asarray(x)
        return np.zeros(x.shape[:-1] + (x.shape[-1],))

    def vpart(self, v):
        v = np.asarray(v)
        return np.broadcast_to(self.vector, v.shape[:-1] + (2,)).copy()

    def dvpart(self, v):
        v = np.asarray(v)
        return np.zeros(v.shape[:-1] + (2, 2))

    def sigma(self, x, v):
        return self.vpart(v)

    def dsigma_dv(self, x, v):
        return self.dvpart(v)


class NoiseModel:
    """Finite family {sigma_k} with precomputed Ito quantities on a grid.

    confined=True means every mode vanishes in the velocity collar, so
    characteristics cannot leave the box.
    """

    def __init__(self, grid: PhaseGrid, modes, confined=True):
        self.grid = grid
        self.modes = list(modes)
        self.confined = confined
        self._grid_fields = None

    @property
    def n_modes(self):
        return len(self.modes)

    def sigma(self, k, x, v):
        """sigma_k at scattered points; x (..., d), v (..., d) -> (..., d)."""
        return self.modes[k].sigma(x, v)

    def dsigma_dv(self, k, x, v):
        return self.modes[k].dsigma_dv(x, v)

    def sigma_dot_grad_sigma(self, k, x, v):
        """(sigma_k . grad_v) sigma_k at scattered points."""
        s = self.modes[k].sigma(x, v)
        ds = self.modes[k].dsigma_dv(x, v)
        return np.einsum("...ij,...j->...i", ds, s)

    def ito_drift(self, x, v):
        """h = 1/2 sum_k (sigma_k . grad_v) sigma_k."""
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros(v.shape)
        for k in range(self.n_modes):
            out += self.sigma_dot_grad_sigma(k, x, v)
        return 0.5 * out

    def diffusion(self, x, v):
        """a = 1/2 sum_k sigma_k (x) sigma_k, shape (..., 2, 2)."""
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros(v.shape + (2,))
        for k in range(self.n_modes):
            s = self.modes[k].sigma(x, v)
            out += 0.5 * s[..., :, None] * s[..., None, :]
        return out

    def sigma_sq_sum(self, x, v):
        """S^2 = sum_k |sigma_k|^2."""
        v = np.asarray(v, dtype=np.float64)
        out = np.zeros(v.shape[:-1])
        for k in range(self.n_modes):
            s = self.modes[k].sigma(x, v)
            out += np.sum(s * s, axis=-1)
        return out

    def lsigma(self, x, v, grad_phi, hess_phi):
        """L_sigma phi = Div_v(a grad_v phi) at points, from analytic derivatives.

        Uses the div-free identity L_sigma phi =
        1/2 sum_k [(sigma_k . grad sigma_k) . grad phi + sigma_k^T hess phi sigma_k].
        """
        out = np.zeros(np.asarray(grad_phi).shape[:-1])
        for k in range(self.n_modes):
            s = self.modes[k].sigma(x, v)
            sds = self.sigma_dot_grad_sigma(k, x, v)
            out += 0.5 * (np.sum(sds * grad_phi, axis=-1)
                          + np.einsum("...i,...ij,...j->...", s, hess_phi, s))
        return out

    # -- precomputed grid fields ------------------------------------------

    def grid_fields(self):
        """Dict of fields on the full grid: drift h, S^2, per-mode sigma,
        v.sigma_k and v.h weights used by the balance diagnostics."""
        if self._grid_fields is not None:
            return self._grid_fields
        g = self.grid
        pts = g.node_points()
        x, v = pts[:, :g.d], pts[:, g.d:]
        shape = g.shape
        h = self.ito_drift(x, v)
        sig = np.stack([self.modes[k].sigma(x, v) for k in range(self.n_modes)]) \
            if self.n_modes else np.zeros((0, pts.shape[0], g.d))
        fields = {
            "drift": h.reshape(shape + (g.d,)),
            "sigma_sq": self.sigma_sq_sum(x, v).reshape(shape),
            "v_dot_drift": np.sum(v * h, axis=-1).reshape(shape),
            "sigma": sig.reshape((self.n_modes,) + shape + (g.d,)),
            "v_dot_sigma": np.einsum("kni,ni->kn", sig, v).reshape(
                (self.n_modes,) + shape),
        }
        self._grid_fields = fields
        return fields

    # -- hypothesis norms ---------------------------------------------------

    def coloring_report(self, epsilon=1.0):
        """Grid estimates of the coloring norms (H1) and the Sobolev-type
        norms (H3)/(H4), evaluated at the given epsilon."""
        g = self.grid
        pts = g.node_points()
        x, v = pts[:, :g.d], pts[:, g.d:]
        vol = g.cell_volume
        p3 = 2.0 + epsilon
        p4 = 1.0 + epsilon

        sup_sig_sq = 0.0
        sup_grad_sq = 0.0
        h3_sq_sum = 0.0
        h4_sum = 0.0
        sds_total = np.zeros(v.shape)
        for k in range(self.n_modes):
            s = self.modes[k].sigma(x, v)
            ds = self.modes[k].dsigma_dv(x, v)
            dc = self.modes[k].grad_c(x)
            vp = self.modes[k].vpart(v)
            dx_sigma = dc[..., None, :] * vp[..., :, None]  # [i, j] = d_{x_j} sigma_i
            s_norm = np.sqrt(np.sum(s * s, axis=-1))
            grad_norm = np.sqrt(np.sum(ds * ds, axis=(-2, -1))
                                + np.sum(dx_sigma * dx_sigma, axis=(-2, -1)))
            sup_sig_sq += float(np.max(s_norm)) ** 2
            sup_grad_sq += float(np.max(np.sqrt(np.sum(ds * ds, axis=(-2, -1))))) ** 2
            w1p = (np.sum(s_norm**p3) + np.sum(grad_norm**p3)) * vol
            h3_sq_sum += w1p ** (2.0 / p3)

            sds = np.einsum("...ij,...j->...i", ds, s)
            sds_total += sds
            sds_field = sds.reshape(g.shape + (g.d,))
            grad_sds = _grid_gradient(sds_field, g)
            sds_norm = np.sqrt(np.sum(sds * sds, axis=-1))
            gnorm = np.sqrt(np.sum(grad_sds**2, axis=(-2, -1))).ravel()
            h4_sum += (np.sum(sds_norm**p4) * vol
                       + np.sum(gnorm**p4) * vol) ** (1.0 / p4)

        return {
            "n_modes": self.n_modes,
            "sum_sup_sigma_sq": sup_sig_sq,
            "sum_sup_grad_v_sigma_sq": sup_grad_sq,
            "h1_total": sup_sig_sq + sup_grad_sq,
            "h3_l2_w1p": float(np.sqrt(h3_sq_sum)),
            "h4_l1_w1p": float(h4_sum),
            "epsilon": epsilon,
        }


def _grid_gradient(vec_field, grid):
    """Centered-difference (x, v) gradient of a vector field sampled on the
    grid; x axes periodic, v axes one-sided at the box edge.
    Returns shape grid.shape + (d, 2d): [..., i, j] = d_j (field_i)."""
    d = grid.d
    comps = []
    for i in range(vec_field.shape[-1]):
        f = vec_field[..., i]
        grads = []
        for ax in range(2 * d):
            h = grid.h_x if ax < d else grid.h_v
            if ax < d:
                gplus = np.roll(f, -1, axis=ax)
                gminus = np.roll(f, 1, axis=ax)
                grads.append((gplus - gminus) / (2 * h))
            else:
                grads.append(np.gradient(f, h, axis=ax))
        comps.append(np.stack(grads, axis=-1))
    return np.stack(comps, axis=-2)


def make_stream_noise(grid: PhaseGrid, mode_specs):
    """Build a NoiseModel from mode specs.

    Each spec is a dict {kx: [int]*d, amplitude, phase, stream: {type, center,
    width}}.  Rejects stream supports that touch the velocity collar, and
    d != 2.
    """
    if grid.d != 2:
        raise ValueError("stream noise constructor requires d = 2")
    collar = COLLAR_CELLS * grid.h_v
    modes = []
    for spec in mode_specs:
        stream = spec["stream"]
        kind = stream["type"]
        if kind not in _PROFILES:
            raise ValueError(f"unknown stream type {kind!r}")
        profile = _PROFILES[kind](stream["center"], stream["width"])
        reach = profile.support_reach()
        if reach > grid.v_max - collar:
            raise ValueError(
                f"stream support reach {reach:.4g} enters the velocity collar "
                f"(limit {grid.v_max - collar:.4g})")
        modes.append(StreamMode(
            kx=np.asarray(spec["kx"], dtype=np.float64),
            amplitude=float(spec.get("amplitude", 1.0)),
            phase=float(spec.get("phase", 0.0)),
            profile=profile,
            length=grid.length,
        ))
    return NoiseModel(grid, modes, confined=True)


def constant_noise(grid: PhaseGrid, vectors):
    """Test-only model with constant sigma_k; characteristics may leave the box."""
    modes = [ConstantMode(np.asarray(vec, dtype=np.float64)) for vec in vectors]
    return NoiseModel(grid, modes, confined=False)


def no_noise(grid: PhaseGrid):
    return NoiseModel(grid, [], confined=True)
