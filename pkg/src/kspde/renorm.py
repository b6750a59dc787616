"""Renormalizations, weak-form residuals, mollification commutators, and the
velocity-averaging regularity estimator."""

from dataclasses import dataclass

import numpy as np

from .field import DistributionField
from .grid import PhaseGrid
from .noise import NoiseModel, StreamProfile, BumpProfile, COLLAR_CELLS


# -- renormalization functions -------------------------------------------


@dataclass
class Renormalization:
    tag: str
    gamma: callable
    dgamma: callable

    def __call__(self, z):
        return self.gamma(z)


def identity_renorm():
    return Renormalization("identity", lambda z: np.asarray(z, dtype=float),
                           lambda z: np.ones_like(np.asarray(z, dtype=float)))


def gamma_m(z, m):
    """Truncation renormalization z / (1 + z/m)."""
    z = np.asarray(z, dtype=float)
    return z / (1.0 + z / m)


def gamma_m_prime(z, m):
    z = np.asarray(z, dtype=float)
    return (1.0 + z / m) ** -2


def gamma_m_lower(z, m):
    """gamma_m(z) = z Gamma_m'(z) = z (1 + z/m)^-2, the lower envelope used
    in the limit identification."""
    z = np.asarray(z, dtype=float)
    return z * (1.0 + z / m) ** -2


def truncation_renorm(m):
    return Renormalization(f"gamma_{m}", lambda z: gamma_m(z, m),
                           lambda z: gamma_m_prime(z, m))


def beta_delta(z, delta):
    """log-type renormalization log(1 + delta z) / delta."""
    z = np.asarray(z, dtype=float)
    return np.log1p(delta * z) / delta


def log_renorm(delta):
    return Renormalization(f"beta_{delta}", lambda z: beta_delta(z, delta),
                           lambda z: 1.0 / (1.0 + delta * np.asarray(z, dtype=float)))


def admissibility_sup(renorm, z_max=1e6, n=20001):
    """sup (1+z) |Gamma'(z)| over a log-spaced grid (reported, not asserted)."""
    z = np.concatenate([[0.0], np.geomspace(1e-8, z_max, n)])
    return float(np.max((1.0 + z) * np.abs(renorm.dgamma(z))))


def renorm_gap_bound(f: DistributionField, m):
    """(lhs, rhs) of ||f - Gamma_m(f)||_1 <= m^-1/2 ||f||_1 + ||f 1_{f>=sqrt m}||_1."""
    vol = f.grid.cell_volume
    vals = f.values
    lhs = float(np.abs(vals - gamma_m(vals, m)).sum() * vol)
    rhs = float(vals.sum() * vol / np.sqrt(m)
                + vals[vals >= np.sqrt(m)].sum() * vol)
    return lhs, rhs


# -- test functions for the weak form ------------------------------------


class TestFunction:
    """phi(x, v) = (1 + a cos(2 pi k.x / L + p)) * bump(v), with analytic
    x-gradient, v-gradient and v-Hessian."""

    def __init__(self, grid: PhaseGrid, kx=(1, 0), x_amp=0.5, x_phase=0.0,
                 v_center=(0.0, 0.0), v_width=0.6):
        self.grid = grid
        self.kx = np.asarray(kx, dtype=float)
        self.x_amp = float(x_amp)
        self.x_phase = float(x_phase)
        self.profile = BumpProfile(v_center, v_width)
        collar = COLLAR_CELLS * grid.h_v
        if self.profile.support_reach() > grid.v_max - collar:
            raise ValueError("test function support meets the velocity collar")

    def _xfactor(self, x):
        arg = 2.0 * np.pi * (x @ self.kx) / self.grid.length + self.x_phase
        return 1.0 + self.x_amp * np.cos(arg), \
            (-self.x_amp * np.sin(arg))[..., None] * (
                2.0 * np.pi * self.kx / self.grid.length)

    def __call__(self, x, v):
        xf, _ = self._xfactor(np.asarray(x, dtype=float))
        return xf * self.profile.value(np.asarray(v, dtype=float))

    def grad_x(self, x, v):
        _, dxf = self._xfactor(np.asarray(x, dtype=float))
        return dxf * self.profile.value(np.asarray(v, dtype=float))[..., None]

    def grad_v(self, x, v):
        xf, _ = self._xfactor(np.asarray(x, dtype=float))
        return xf[..., None] * self.profile.grad(np.asarray(v, dtype=float))

    def hess_v(self, x, v):
        xf, _ = self._xfactor(np.asarray(x, dtype=float))
        return xf[..., None, None] * self.profile.hess(np.asarray(v, dtype=float))

    def grid_weights(self, model: NoiseModel):
        """Precomputed grid fields needed by the weak-form residual:
        phi, v . grad_x phi, L_sigma phi, and sigma_k . grad_v phi per mode."""
        g = self.grid
        pts = g.node_points()
        x, v = pts[:, :g.d], pts[:, g.d:]
        phi = self(x, v)
        vgradx = np.sum(v * self.grad_x(x, v), axis=-1)
        lsig = model.lsigma(x, v, self.grad_v(x, v), self.hess_v(x, v))
        gv = self.grad_v(x, v)
        mode_w = np.stack([np.sum(model.sigma(k, x, v) * gv, axis=-1)
                           for k in range(model.n_modes)]) \
            if model.n_modes else np.zeros((0, pts.shape[0]))
        shape = g.shape
        return {
            "phi": phi.reshape(shape),
            "v_grad_x": vgradx.reshape(shape),
            "lsigma": lsig.reshape(shape),
            "mode": mode_w.reshape((model.n_modes,) + shape),
        }


def weak_residual(traj, renorm: Renormalization, phi: TestFunction,
                  eval_times=None):
    """Discrete residual of the renormalized weak form along a trajectory.

    Requires a dense trajectory (fields at every step) carrying its realized
    collision driver.  All terms are rebuilt with the same increments that
    drove the solver, so the residual probes discretization error only.
    Returns (times, residuals).
    """
    if traj.dense_fields is None:
        raise ValueError("weak_residual needs a dense trajectory "
                         "(store_dense=True)")
    g = traj.grid
    model = traj.model
    path = traj.path
    vol = g.cell_volume
    w = phi.grid_weights(model)
    n_steps = len(traj.dense_times) - 1
    driver = traj.driver_fields

    gamma_f = [renorm.gamma(traj.dense_fields[j]) for j in range(n_steps + 1)]
    pair_phi = np.array([(gf * w["phi"]).sum() * vol for gf in gamma_f])
    s_transport = np.array([(gamma_f[j] * w["v_grad_x"]).sum() * vol
                            for j in range(n_steps)])
    s_lsigma = np.array([(gamma_f[j] * w["lsigma"]).sum() * vol
                         for j in range(n_steps)])
    if driver is not None:
        s_coll = np.array([
            (renorm.dgamma(traj.dense_fields[j]) * driver[j] * w["phi"]).sum()
            * vol for j in range(n_steps)])
    else:
        s_coll = np.zeros(n_steps)
    s_mart = np.zeros(n_steps)
    for k in range(model.n_modes):
        wk = w["mode"][k]
        vals = np.array([(gamma_f[j] * wk).sum() * vol for j in range(n_steps)])
        s_mart += vals * path.increments[:n_steps, k]

    drift_cum = np.concatenate([[0.0], np.cumsum(
        (s_transport + s_lsigma + s_coll) * path.dt)])
    mart_cum = np.concatenate([[0.0], np.cumsum(s_mart)])
    residual = pair_phi - pair_phi[0] - drift_cum - mart_cum

    times = traj.dense_times
    if eval_times is not None:
        idx = [path.step_index(t) for t in eval_times]
        return times[idx], residual[idx]
    return times, residual


# -- DiPerna-Lions commutators -------------------------------------------


def _mollifier_1d(eps, h):
    """Discrete 1-D kernel from eta(t) ~ (1-t^2)^3 on |t| < 1, normalized to
    sum to one (so mollification reproduces constants exactly)."""
    m = int(np.floor(eps / h))
    if m < 1:
        raise ValueError("mollifier width below resolvable grid scale")
    t = (np.arange(-m, m + 1) * h) / eps
    w = np.maximum(1.0 - t * t, 0.0) ** 3
    return w / w.sum()


def _smooth_v(field, grid, kernel1d):
    """Tensor mollification along the velocity axes, zero extension."""
    out = field
    for ax in range(grid.d, 2 * grid.d):
        out = _conv_axis(out, kernel1d, ax)
    return out


def _conv_axis(arr, kernel, axis):
    m = (len(kernel) - 1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (m, m)
    padded = np.pad(arr, pad)
    out = np.zeros_like(arr)
    sl = [slice(None)] * arr.ndim
    for i, w in enumerate(kernel):
        sl[axis] = slice(i, i + arr.shape[axis])
        out += w * padded[tuple(sl)]
    return out


def _v_gradient(field, grid):
    """Centered differences along the velocity axes, shape (..., d)."""
    return np.stack([np.gradient(field, grid.h_v, axis=ax)
                     for ax in range(grid.d, 2 * grid.d)], axis=-1)


def _shift_v(field, grid, steps):
    """field(x, v + steps*h_v) with zero extension outside the box."""
    out = field
    for ax, s in zip(range(grid.d, 2 * grid.d), steps):
        if s == 0:
            continue
        shifted = np.zeros_like(out)
        src = [slice(None)] * out.ndim
        dst = [slice(None)] * out.ndim
        n = out.shape[ax]
        if s > 0:
            src[ax] = slice(s, n)
            dst[ax] = slice(0, n - s)
        else:
            src[ax] = slice(0, n + s)
            dst[ax] = slice(-s, n)
        shifted[tuple(dst)] = out[tuple(src)]
        out = shifted
    return out


def commutator_norms(f: DistributionField, model: NoiseModel, eps_list):
    """Mollification-defect norms for each eps: L2 of the single commutator
    [eta_eps, sigma_k . grad_v](f) and L1 of the double commutator in the
    translation form of the renormalization proof, summed over modes.

    The mollifier is a tensor-product kernel in the velocity variables (the
    coefficients are Lipschitz in v only), with derivatives by centered
    differences.  Returns a dict with per-eps norms and log-log slopes.
    """
    g = f.grid
    if g.d != 2:
        raise ValueError("commutator diagnostics require d = 2")
    pts = g.node_points()
    x, v = pts[:, :2], pts[:, 2:]
    vol = g.cell_volume
    grad_f = _v_gradient(f.values, g)

    vflat = g.v_mesh().reshape(2, -1).T
    single = []
    double = []
    for eps in eps_list:
        kern = _mollifier_1d(eps, g.h_v)
        m = (len(kern) - 1) // 2
        s_tot = 0.0
        d_tot = 0.0
        f_eps = _smooth_v(f.values, g, kern)
        grad_f_eps = _v_gradient(f_eps, g)
        for k in range(model.n_modes):
            sig = model.sigma(k, x, v).reshape(g.shape + (2,))
            adv = np.sum(sig * grad_f, axis=-1)
            comm = _smooth_v(adv, g, kern) - np.sum(sig * grad_f_eps, axis=-1)
            s_tot += float(np.sqrt((comm**2).sum() * vol))
            d_tot += _double_commutator_l1(f, model, k, eps, kern, m, vflat)
        single.append(s_tot)
        double.append(d_tot)
    eps_arr = np.asarray(eps_list, dtype=float)
    return {
        "eps": eps_arr,
        "single_l2": np.array(single),
        "double_l1": np.array(double),
        "single_slope": _loglog_slope(eps_arr, np.array(single)),
        "double_slope": _loglog_slope(eps_arr, np.array(double)),
    }


def _double_commutator_l1(f, model, k, eps, kern1d, m, vflat):
    """[[eta_eps, sigma_k.grad_v], sigma_k.grad_v](f) in the translation form

        int d2_eta(w) : (dw sigma (x) dw sigma) dw_f + int d_eta(w) .
        dw(sigma.grad sigma) dw_f,

    exploiting the separable structure sigma = c(x) * Psi(v): every shifted
    coefficient difference factors through the velocity part, so the x
    dependence enters only through c(x)^2.
    """
    g = f.grid
    mode = model.modes[k]
    x_nodes = g.x_mesh().reshape(2, -1).T
    c2 = (mode.c(x_nodes) ** 2).reshape((g.n_x,) * 2 + (1, 1))

    psi = mode.vpart(vflat)                     # (NV, 2)
    dpsi = mode.dvpart(vflat)
    psi_adv = np.einsum("nij,nj->ni", dpsi, psi)  # (Psi . grad) Psi

    # continuum-normalized eta_eps and derivatives on the offset lattice
    c1d = 35.0 / 32.0
    offsets = np.arange(-m, m + 1)
    acc = np.zeros(g.shape)
    hv = g.h_v
    for du1 in offsets:
        u1 = du1 * hv / eps
        e1 = max(1.0 - u1 * u1, 0.0) ** 3
        de1 = -6.0 * u1 * max(1.0 - u1 * u1, 0.0) ** 2 / eps
        d2e1 = (30.0 * u1 * u1 - 6.0) * max(1.0 - u1 * u1, 0.0) / eps**2 \
            if abs(u1) < 1.0 else 0.0
        for du2 in offsets:
            if du1 == 0 and du2 == 0:
                continue
            u2 = du2 * hv / eps
            e2 = max(1.0 - u2 * u2, 0.0) ** 3
            de2 = -6.0 * u2 * max(1.0 - u2 * u2, 0.0) ** 2 / eps
            d2e2 = (30.0 * u2 * u2 - 6.0) * max(1.0 - u2 * u2, 0.0) / eps**2 \
                if abs(u2) < 1.0 else 0.0
            if e1 == 0.0 or e2 == 0.0:
                continue  # one vanishing axis kills kernel and derivatives
            scale = (c1d / eps) ** 2
            hess = scale * np.array([[d2e1 * e2, de1 * de2],
                                     [de1 * de2, e1 * d2e2]])
            grad = scale * np.array([de1 * e2, e1 * de2])
            if not (np.any(hess) or np.any(grad)):
                continue
            shift = np.array([du1 * hv, du2 * hv])
            dpsi_sh = mode.vpart(vflat + shift) - psi
            dadv_sh = (np.einsum(
                "nij,nj->ni", mode.dvpart(vflat + shift),
                mode.vpart(vflat + shift)) - psi_adv)
            s_v = (np.einsum("ij,ni,nj->n", hess, dpsi_sh, dpsi_sh)
                   + dadv_sh @ grad).reshape((g.n_v,) * 2)
            df = _shift_v(f.values, g, (du1, du2)) - f.values
            acc += s_v[None, None] * df
    acc *= c2 * hv * hv
    return float(np.abs(acc).sum() * g.cell_volume)


def _loglog_slope(xs, ys):
    live = ys > 0
    if live.sum() < 2:
        return float("nan")
    lx, ly = np.log(xs[live]), np.log(ys[live])
    return float(np.polyfit(lx, ly, 1)[0])


# -- velocity averaging ----------------------------------------------------


def velocity_average(f: DistributionField, phi_v: StreamProfile):
    """rho(x) = integral of f phi_v(v) dv on the x-grid."""
    g = f.grid
    vflat = g.v_mesh().reshape(g.d, -1).T
    w = phi_v.value(vflat).reshape((g.n_v,) * g.d)
    axes = tuple(range(g.d, 2 * g.d))
    return (f.values * w[(None,) * g.d]).sum(axis=axes) * g.v_cell


def h16_weights(grid: PhaseGrid, flat=False):
    """Fourier weights 1 + |xi|^(1/3) for |xi| >= 1 and 1 below, on the torus
    frequency lattice xi = 2 pi k / L.  flat=True gives weight 1 everywhere
    (Parseval sanity mode)."""
    k = np.fft.fftfreq(grid.n_x, d=1.0 / grid.n_x)
    if grid.d == 2:
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        xi_mag = 2.0 * np.pi * np.sqrt(k1**2 + k2**2) / grid.length
    else:
        xi_mag = 2.0 * np.pi * np.abs(k) / grid.length
    if flat:
        return np.ones_like(xi_mag)
    return np.where(xi_mag >= 1.0, 1.0 + xi_mag ** (1.0 / 3.0), 1.0)


def h16_estimate(rho_series, f_sq_series, g_sq_series, f0_sq, grid, dt,
                 flat_weight=False):
    """Discrete H^{1/6}-type estimate of the velocity average.

    lhs = dt * sum_t sum_xi w(xi) |rho_hat(t, xi)|^2 with the DFT scaled so
    that w = 1 gives exactly dt * sum_t ||rho(t)||^2_{L2_x}.
    rhs = ||f0||^2 + dt * sum ||f||^2 + dt * sum ||g||^2.
    Returns (lhs, rhs, ratio).
    """
    w = h16_weights(grid, flat=flat_weight)
    scale = grid.x_cell / grid.length ** (grid.d / 2.0)
    lhs = 0.0
    for rho in rho_series:
        rho_hat = np.fft.fftn(rho) * scale
        lhs += float(np.sum(w * np.abs(rho_hat) ** 2)) * dt
    rhs = float(f0_sq + dt * np.sum(f_sq_series) + dt * np.sum(g_sq_series))
    return lhs, rhs, lhs / rhs if rhs > 0 else float("inf")


def h16_from_trajectory(traj, phi_v: StreamProfile, flat_weight=False):
    """Convenience wrapper: build the estimate pieces from a dense trajectory."""
    if traj.dense_fields is None:
        raise ValueError("h16 estimate needs a dense trajectory")
    g = traj.grid
    vol = g.cell_volume
    rho = [velocity_average(
        DistributionField(g, traj.dense_fields[j]), phi_v)
        for j in range(len(traj.dense_times))]
    f_sq = [float((traj.dense_fields[j] ** 2).sum() * vol)
            for j in range(len(traj.dense_times) - 1)]
    if traj.driver_fields is not None:
        g_sq = [float((traj.driver_fields[j] ** 2).sum() * vol)
                for j in range(traj.driver_fields.shape[0])]
    else:
        g_sq = [0.0] * (len(traj.dense_times) - 1)
    f0_sq = float((traj.dense_fields[0] ** 2).sum() * vol)
    return h16_estimate(rho[:-1], f_sq, g_sq, f0_sq, g, traj.path.dt,
                        flat_weight=flat_weight)
