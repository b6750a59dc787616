"""Mild-form solvers for stochastic kinetic transport and the truncated
Boltzmann equation.

Everything is built on the Duhamel representation along stochastic
characteristics: with F(t) = f(t) o Phi_{t0,t} (the density pulled back to
time-t0 labels),

    F(t) = f(t0) + sum_{s_j < t} [g(s_j) o Phi_{t0,s_j}] dt,
    f(t) = F(t) o Psi_{t0,t},

so one forward trajectory sweep plus one inverse map per quadrature time
covers a whole window, and Picard iterations reuse the stored maps.  The
source quadrature is left-endpoint at the SDE step resolution.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .brownian import BrownianPath
from .collision import CollisionKernel, eval_terms, lipschitz_probe, _pref, _per_x
from .field import DistributionField, compose, velocity_marginal
from .flow import FlowMap, integrate_flow, inverse_flow
from .grid import PhaseGrid
from .noise import NoiseModel

MAX_WINDOW_STEPS = 64   # memory cap on stored per-step inverse maps


class PicardDivergence(RuntimeError):
    pass


@dataclass
class StepDiagnostics:
    """Per-step scalars accumulated on the converged solution (left endpoints)."""

    times: np.ndarray
    mass: np.ndarray
    dissipation: np.ndarray          # integral over x of D_n
    v_dot_drift: np.ndarray          # integral of (v . h) f
    sigma_sq: np.ndarray             # integral of S^2 f
    drift_momentum: np.ndarray       # (n, d): integral of h f
    mode_momentum: np.ndarray        # (n, K, d): integral of sigma_k f
    mode_v_sigma: np.ndarray         # (n, K): integral of (v . sigma_k) f
    increments: np.ndarray           # (n, K) Brownian increments used


@dataclass
class Trajectory:
    """Snapshots of one realization plus the inputs that produced it."""

    grid: PhaseGrid
    model: NoiseModel
    path: BrownianPath
    times: list = dc_field(default_factory=list)
    snapshots: list = dc_field(default_factory=list)
    windows: list = dc_field(default_factory=list)
    dense_times: np.ndarray | None = None
    dense_fields: np.ndarray | None = None     # (n_steps+1,) + grid.shape
    driver_fields: np.ndarray | None = None    # (n_steps,) + grid.shape
    step_diag: StepDiagnostics | None = None
    clamped_mass: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    def snapshot_at(self, t):
        for ti, f in zip(self.times, self.snapshots):
            if abs(ti - t) <= 1e-12 * max(1.0, abs(t)):
                return f
        raise KeyError(f"no snapshot at t={t}")

    def final(self):
        return self.snapshots[-1]


def _align_steps(path, times):
    return sorted({path.step_index(t) for t in times})


def _window_plan(n_steps, lipschitz, dt, max_steps=MAX_WINDOW_STEPS):
    """Split [0, n_steps] into windows with C_n * T_w <= 1/2."""
    if lipschitz > 0:
        by_contraction = int(np.floor(0.5 / (lipschitz * dt)))
    else:
        by_contraction = n_steps
    w = max(1, min(by_contraction, max_steps))
    edges = list(range(0, n_steps, w)) + [n_steps]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def _fmap(grid, pts):
    return FlowMap(grid, 0.0, 0.0, pts)


def _compose_values(grid, values, pts, clamp=True):
    f = DistributionField(grid, values)
    return compose(f, _fmap(grid, pts), clamp=clamp)


def estimate_lipschitz(f0, kernel, n, seed=0):
    """Probe-based Lipschitz constant for B_n with a factor-2 safety margin."""
    if kernel.b0 == 0.0:
        return 0.0
    return 2.0 * lipschitz_probe(f0, kernel, n, seed=seed)


def solve_transport(f0: DistributionField, driver, model: NoiseModel,
                    path: BrownianPath, t_final, output_times,
                    store_dense=False):
    """Linear stochastic kinetic transport by the flow/Duhamel representation.

    driver: None, or a callable t -> grid-shaped source values g(t, x, v)
    (evaluated at left endpoints of the step grid).
    """
    g = f0.grid
    n_steps = path.step_index(t_final)
    out_steps = _align_steps(path, list(output_times) + [t_final])
    d = g.d
    nodes = g.node_points()
    traj = Trajectory(g, model, path)
    if store_dense:
        traj.dense_times = path.dt * np.arange(n_steps + 1)
        traj.dense_fields = np.empty((n_steps + 1,) + g.shape)

    cum = f0.values.copy()
    x = np.ascontiguousarray(nodes[:, :d])
    v = np.ascontiguousarray(nodes[:, d:])
    from .flow import _run_sweep, _check_box
    # clamping would break linearity for signed drivers; only densities clamp
    clamp = driver is None and bool(np.all(f0.values >= 0.0))

    def emit(j, cum_values):
        t = j * path.dt
        if j == 0:
            out = DistributionField(g, f0.values.copy(), t)
            out.clamped_mass = 0.0
        else:
            inv = inverse_flow(model, path, 0.0, t, nodes, wrap=True)
            out = _compose_values(g, cum_values, inv, clamp=clamp)
            out.t = t
            traj.clamped_mass += out.clamped_mass
        if store_dense:
            traj.dense_fields[j] = out.values
        if j == 0 or j in out_steps:
            traj.times.append(t)
            traj.snapshots.append(out)

    emit(0, cum)
    for j in range(n_steps):
        if driver is not None:
            g_vals = np.asarray(driver(j * path.dt), dtype=np.float64)
            if not np.all(np.isfinite(g_vals)):
                raise ValueError("transport driver returned non-finite values")
            fwd = np.concatenate([g.wrap_x(x), v], axis=1)
            pulled = _compose_values(g, g_vals, fwd, clamp=False)
            cum = cum + path.dt * pulled.values
        if path.n_modes:
            x, v = _run_sweep(model, x, v, path.increments[j:j + 1], path.dt)
        else:
            x = x + path.dt * v
        if (j + 1) in out_steps or store_dense:
            emit(j + 1, cum)
    _check_box(model, v)
    return traj


def picard_solve(f0: DistributionField, kernel: CollisionKernel, n,
                 model: NoiseModel, path: BrownianPath, t_final,
                 output_times=(), tol=1e-4, max_iter=12,
                 store_dense=False, diagnostics=False, lipschitz=None,
                 warm_start=False):
    """Successive approximations for the truncated stochastic Boltzmann
    equation, windowed so the measured Lipschitz constant keeps each window
    contractive (C_n * T_w <= 1/2).

    Every field is represented on time-zero labels: F(t) = f0 + sum of
    pulled-back sources, and f(t) = F(t) o Psi_{0,t}, so each evaluated
    field is a single interpolation away from f0 no matter how many windows
    have been chained.  Within a window the iteration starts from zero and
    runs until sup_t ||f_k - f_{k-1}||_L1 < tol; converged window sources
    are frozen and the next window continues.
    """
    g = f0.grid
    n_steps = path.step_index(t_final)
    out_steps = set(_align_steps(path, list(output_times) + [t_final]))
    if lipschitz is None:
        lipschitz = estimate_lipschitz(f0, kernel, n)
    plan = _window_plan(n_steps, lipschitz, path.dt)

    traj = Trajectory(g, model, path)
    traj.meta["lipschitz"] = lipschitz
    traj.meta["n"] = n
    if store_dense or diagnostics:
        traj.dense_times = path.dt * np.arange(n_steps + 1)
        traj.dense_fields = np.empty((n_steps + 1,) + g.shape)
        traj.driver_fields = np.empty((n_steps,) + g.shape)

    traj.times.append(0.0)
    traj.snapshots.append(f0.copy())
    if traj.dense_fields is not None:
        traj.dense_fields[0] = f0.values

    def bn_of(values):
        terms = eval_terms(DistributionField(g, values), kernel)
        return _per_x(terms.gain - terms.loss, g, _pref(terms.marginal, n))

    nodes = g.node_points()
    d = g.d
    frozen = f0.values.copy()          # f0 + frozen pulled-back sources
    x_fw = np.ascontiguousarray(nodes[:, :d])   # forward trajectory state
    v_fw = np.ascontiguousarray(nodes[:, d:])
    from .flow import _run_sweep, _check_box

    diag_rows = []
    for (j0, j1) in plan:
        n_w = j1 - j0
        t0 = j0 * path.dt
        # forward maps Phi_{0, s_j} for window steps (continue the trajectory)
        forward = np.empty((n_w,) + nodes.shape)
        inverse = np.empty((n_w,) + nodes.shape)
        for j in range(n_w):
            forward[j] = np.concatenate([g.wrap_x(x_fw), v_fw], axis=1)
            if path.n_modes:
                x_fw, v_fw = _run_sweep(
                    model, x_fw, v_fw,
                    path.increments[j0 + j:j0 + j + 1], path.dt)
            else:
                x_fw = x_fw + path.dt * v_fw
            inverse[j] = inverse_flow(model, path, 0.0, (j0 + j + 1) * path.dt,
                                      nodes, wrap=True)
        _check_box(model, v_fw)

        # source at the (frozen) window start
        if kernel.b0 != 0.0:
            if j0 == 0:
                f_at_start = f0.values
            else:
                inv0 = inverse_flow(model, path, 0.0, t0, nodes, wrap=True)
                fs = _compose_values(g, frozen, inv0)
                traj.clamped_mass += fs.clamped_mass
                f_at_start = fs.values
            g_start = _compose_values(g, bn_of(f_at_start), forward[0],
                                      clamp=False).values
        else:
            g_start = None

        f_prev = np.zeros((n_w,) + g.shape)   # iterates at s_{j0+1}..s_{j1}
        g_prev = np.zeros((max(n_w - 1, 0),) + g.shape)
        if warm_start:
            # start from the no-source transport prediction instead of zero
            for j in range(n_w):
                f_prev[j] = _compose_values(g, frozen, inverse[j]).values
                if j < n_w - 1 and kernel.b0 != 0.0:
                    g_prev[j] = _compose_values(g, bn_of(f_prev[j]),
                                                forward[j + 1],
                                                clamp=False).values
        distances = []
        converged = False
        for _ in range(max_iter):
            f_new = np.empty_like(f_prev)
            g_new = np.empty_like(g_prev)
            cum = frozen
            dist = 0.0
            for j in range(n_w):
                if kernel.b0 != 0.0:
                    src = g_start if j == 0 else g_prev[j - 1]
                    cum = cum + path.dt * src
                fj = _compose_values(g, cum, inverse[j])
                f_new[j] = fj.values
                if j < n_w - 1 and kernel.b0 != 0.0:
                    g_new[j] = _compose_values(g, bn_of(f_new[j]),
                                               forward[j + 1],
                                               clamp=False).values
                dist = max(dist, float(np.abs(f_new[j] - f_prev[j]).sum()
                                       * g.cell_volume))
            distances.append(dist)
            f_prev, g_prev = f_new, g_new
            if dist < tol:
                converged = True
                break
            if len(distances) >= 4 and all(
                    distances[-i] >= distances[-i - 1] for i in (1, 2, 3)):
                raise PicardDivergence(
                    f"no contraction on window [{t0}, {j1 * path.dt}]: "
                    f"distances {distances[-4:]}")
        if not converged:
            raise PicardDivergence(
                f"window [{t0}, {j1 * path.dt}] exceeded max_iter={max_iter}; "
                f"distances {distances}")
        ratios = [distances[i + 1] / distances[i]
                  for i in range(len(distances) - 1) if distances[i] > 0]
        traj.windows.append({
            "t0": t0, "t1": j1 * path.dt, "steps": n_w,
            "iterations": len(distances), "distances": distances,
            "ratios": ratios,
        })

        # freeze the converged window sources into the label-frame cumulative
        if kernel.b0 != 0.0:
            frozen = frozen + path.dt * g_start
            for j in range(n_w - 1):
                frozen = frozen + path.dt * g_prev[j]

        # snapshots, dense storage, diagnostics on the converged window
        for j in range(n_w):
            jj = j0 + j + 1
            t = jj * path.dt
            holder = DistributionField(g, f_prev[j], t)
            traj.clamped_mass += holder.clamp_nonnegative()  # in place
            if traj.dense_fields is not None:
                traj.dense_fields[jj] = f_prev[j]
            if jj in out_steps:
                traj.times.append(t)
                traj.snapshots.append(DistributionField(g, f_prev[j].copy(), t))
        if diagnostics:
            start_field = f0.values if j0 == 0 else f_at_start
            window_fields = [start_field] + [f_prev[j] for j in range(n_w - 1)]
            for j, vals in enumerate(window_fields):
                fj = DistributionField(g, vals, (j0 + j) * path.dt)
                row = _diagnostic_row(fj, kernel, n, model, want_driver=True)
                if traj.driver_fields is not None:
                    traj.driver_fields[j0 + j] = row.pop("driver")
                else:
                    row.pop("driver")
                row["t"] = (j0 + j) * path.dt
                diag_rows.append(row)

    if diag_rows:
        traj.step_diag = _stack_diag(diag_rows, model, path)
    return traj


def _diagnostic_row(f, kernel, n, model, want_driver=False):
    """Moments of one step field used by the balance diagnostics."""
    g = f.grid
    vol = g.cell_volume
    fields = model.grid_fields()
    row = {
        "mass": f.mass(),
        "v_dot_drift": float((f.values * fields["v_dot_drift"]).sum() * vol),
        "sigma_sq": float((f.values * fields["sigma_sq"]).sum() * vol),
        "drift_momentum": (f.values[..., None] * fields["drift"]).sum(
            axis=tuple(range(2 * g.d))) * vol,
        "mode_momentum": (f.values[None, ..., None]
                          * fields["sigma"]).sum(
            axis=tuple(range(1, 2 * g.d + 1))) * vol,
        "mode_v_sigma": (f.values[None] * fields["v_dot_sigma"]).sum(
            axis=tuple(range(1, 2 * g.d + 1))) * vol,
    }
    if kernel is not None and kernel.b0 != 0.0:
        terms = eval_terms(f, kernel, want_d0=True)
        pref = _pref(terms.marginal, n)
        d0n = 0.25 * _per_x(terms.d0_raw, g, pref)
        row["dissipation"] = float(d0n.sum() * vol)
        if want_driver:
            row["driver"] = _per_x(terms.gain - terms.loss, g, pref)
    else:
        row["dissipation"] = 0.0
        if want_driver:
            row["driver"] = np.zeros(g.shape)
    return row


def _stack_diag(rows, model, path):
    n = len(rows)
    k = model.n_modes
    d = model.grid.d
    times = np.array([r["t"] for r in rows])
    order = np.argsort(times)
    rows = [rows[i] for i in order]
    steps = np.array([path.step_index(r["t"]) for r in rows])
    return StepDiagnostics(
        times=times[order],
        mass=np.array([r["mass"] for r in rows]),
        dissipation=np.array([r["dissipation"] for r in rows]),
        v_dot_drift=np.array([r["v_dot_drift"] for r in rows]),
        sigma_sq=np.array([r["sigma_sq"] for r in rows]),
        drift_momentum=np.array([r["drift_momentum"] for r in rows]).reshape(n, d),
        mode_momentum=np.array([r["mode_momentum"] for r in rows]).reshape(n, k, d),
        mode_v_sigma=np.array([r["mode_v_sigma"] for r in rows]).reshape(n, k),
        increments=path.increments[steps] if k else np.zeros((n, 0)),
    )


def transport_diagnostics(traj: Trajectory, model: NoiseModel, path):
    """Per-step diagnostics for a dense transport trajectory (no collision)."""
    rows = []
    for j in range(len(traj.dense_times) - 1):
        f = DistributionField(traj.grid, traj.dense_fields[j],
                              traj.dense_times[j])
        row = _diagnostic_row(f, None, 1, model)
        row["t"] = traj.dense_times[j]
        rows.append(row)
    traj.step_diag = _stack_diag(rows, model, path)
    return traj.step_diag


def positivity_floor_check(traj: Trajectory, f0: DistributionField,
                           model: NoiseModel, path: BrownianPath,
                           cbar=None, kernel=None, n=None):
    """Max violation of f(t) >= exp(-Cbar t) f0 o Psi_{0,t} over snapshots.

    Default Cbar = 1.1 * n * sup|bbar| * max(1, sup_x <f0>), a safe upper
    bound for the scheme's loss rate.
    """
    if cbar is None:
        if kernel is None or n is None:
            raise ValueError("supply cbar or (kernel, n)")
        mass_sup = max(1.0, float(velocity_marginal(f0).max()))
        cbar = 1.1 * n * kernel.bbar_sup() * mass_sup
    nodes = traj.grid.node_points()
    worst = 0.0
    for t, snap in zip(traj.times, traj.snapshots):
        if t == 0.0:
            continue
        inv = inverse_flow(model, path, 0.0, t, nodes, wrap=True)
        floor = _compose_values(traj.grid, f0.values, inv)
        viol = np.exp(-cbar * t) * floor.values - snap.values
        worst = max(worst, float(viol.max()))
    return max(0.0, worst)
