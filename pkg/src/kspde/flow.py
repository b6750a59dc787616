"""Stochastic characteristic flows for dX = V dt, dV = sigma_k o dbeta_k.

The integrator is the Stratonovich Heun (stochastic midpoint) scheme.
Positions are kept on the unwrapped lift of the torus; wrap when sampling
fields.  Inverse flows integrate the time-reversed system with the same
increments in reverse order and negated signs.
"""

import os
from dataclasses import dataclass

import numpy as np

from .brownian import BrownianPath
from .grid import PhaseGrid
from .noise import NoiseModel, StreamMode, BumpProfile, GaussTaperedProfile

try:
    if os.environ.get("KSPDE_NO_NUMBA"):
        raise ImportError
    from ._flow_numba import heun_sweep as _heun_sweep_numba
except ImportError:          # pragma: no cover - exercised via env flag
    _heun_sweep_numba = None


class VelocityEscape(RuntimeError):
    """A confined model produced a velocity outside the box: internal invariant
    violation (the noise collar should make this impossible)."""


@dataclass
class FlowMap:
    """Sampled flow images of all grid nodes, positions wrapped to the torus."""

    grid: PhaseGrid
    s: float
    t: float
    points: np.ndarray      # (n_nodes, 2d)
    inverse: bool = False   # True when this samples Psi_{s,t}

    def to_bytes(self):
        return np.ascontiguousarray(self.points, dtype="<f8").tobytes()

    def sidecar(self, seed=None):
        return {"shape": list(self.points.shape), "s": self.s, "t": self.t,
                "inverse": self.inverse, "seed": seed}


def _sigma_increment(model, x, v, coeffs):
    """sum_k coeffs[k] * sigma_k(x, v) for scattered points."""
    out = np.zeros_like(v)
    for k in range(model.n_modes):
        ck = coeffs[k]
        if ck == 0.0:
            continue
        out += ck * model.sigma(k, x, v)
    return out


def _heun_step(model, x, v, dt, dbeta):
    """One Stratonovich Heun step; dt may be negative (time reversal)."""
    s0 = _sigma_increment(model, x, v, dbeta)
    v_pred = v + s0
    x_pred = x + v * dt
    s1 = _sigma_increment(model, x_pred, v_pred, dbeta)
    v_new = v + 0.5 * (s0 + s1)
    x_new = x + 0.5 * (v + v_pred) * dt
    return x_new, v_new


def _check_box(model, v):
    if model.confined and model.n_modes and np.any(np.abs(v) > model.grid.v_max):
        raise VelocityEscape(
            "velocity left the box under a collared noise model")


_PROFILE_CODES = {BumpProfile: 0, GaussTaperedProfile: 1}


def _stream_params(model):
    """Packed mode arrays for the compiled sweep, or None if any mode is not
    a built-in stream mode."""
    cached = getattr(model, "_stream_params", None)
    if cached is not None:
        return cached if cached != "no" else None
    params = None
    if _heun_sweep_numba is not None and model.n_modes and all(
            isinstance(m, StreamMode) and type(m.profile) in _PROFILE_CODES
            for m in model.modes):
        params = (
            np.array([m.amplitude for m in model.modes]),
            np.array([m.kx for m in model.modes]),
            np.array([m.phase for m in model.modes]),
            float(model.modes[0].length),
            np.array([m.profile.center for m in model.modes]),
            np.array([m.profile.width for m in model.modes]),
            np.array([_PROFILE_CODES[type(m.profile)] for m in model.modes],
                     dtype=np.int64),
        )
    model._stream_params = params if params is not None else "no"
    return params


def _run_sweep(model, x, v, incs, dt):
    """Heun-integrate all increment rows in order, in place."""
    params = _stream_params(model)
    if params is not None:
        _heun_sweep_numba(x, v, np.ascontiguousarray(incs), dt, *params)
        return x, v
    for i in range(incs.shape[0]):
        x, v = _heun_step(model, x, v, dt, incs[i])
    return x, v


def _flow_between(model, path, i0, i1, points, backward):
    pts = np.array(points, dtype=np.float64, copy=True)
    d = model.grid.d
    x, v = np.ascontiguousarray(pts[:, :d]), np.ascontiguousarray(pts[:, d:])
    if model.n_modes == 0:
        # pure shear; exact
        x = x + (-1.0 if backward else 1.0) * (i1 - i0) * path.dt * v
    else:
        if backward:
            incs = -path.increments[i1 - 1:i0 - 1 if i0 else None:-1]
            x, v = _run_sweep(model, x, v, incs, -path.dt)
        else:
            x, v = _run_sweep(model, x, v, path.increments[i0:i1], path.dt)
    _check_box(model, v)
    return x, v


def integrate_flow(model: NoiseModel, path: BrownianPath, s, t, points,
                   wrap=False):
    """Forward flow Phi_{s,t} applied to phase points (n, 2d).

    s, t must be aligned to the path's step grid, s <= t.  Positions are
    returned unwrapped unless wrap=True.
    """
    i0, i1 = path.step_index(s), path.step_index(t)
    if i1 < i0:
        raise ValueError("forward flow needs s <= t")
    x, v = _flow_between(model, path, i0, i1, points, backward=False)
    if wrap:
        x = model.grid.wrap_x(x)
    return np.concatenate([x, v], axis=1)


def inverse_flow(model: NoiseModel, path: BrownianPath, s, t, points,
                 wrap=False):
    """Inverse flow Psi_{s,t}: preimages under Phi_{s,t}, by backward
    integration from t down to s with reversed, negated increments."""
    i0, i1 = path.step_index(s), path.step_index(t)
    if i1 < i0:
        raise ValueError("inverse flow needs s <= t")
    x, v = _flow_between(model, path, i0, i1, points, backward=True)
    if wrap:
        x = model.grid.wrap_x(x)
    return np.concatenate([x, v], axis=1)


def flow_map(model, path, s, t, inverse=False):
    """FlowMap sampled on all grid nodes (wrapped positions)."""
    nodes = model.grid.node_points()
    fn = inverse_flow if inverse else integrate_flow
    pts = fn(model, path, s, t, nodes, wrap=True)
    return FlowMap(model.grid, s, t, pts, inverse=inverse)


def identity_map(grid):
    return FlowMap(grid, 0.0, 0.0, grid.node_points(), inverse=False)


def flow_growth_stat(model, path, t_final, sample_points, n_starts=4):
    """Growth statistic of Lemma-5.2 type on the unwrapped lift:

    max over samples, start times s and aligned t in [s, T] of
    |Phi_{s,t}(x,v)| / (1 + |x| + |v|)^2.  Also reports the reciprocal
    statistic (1+|x|+|v|)^eps / (1+|Phi|) at eps = 1 (reported, not bounded).
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=np.float64))
    d = model.grid.d
    base = (1.0 + np.linalg.norm(pts[:, :d], axis=1)
            + np.linalg.norm(pts[:, d:], axis=1))
    n_total = path.step_index(t_final)
    starts = np.unique(np.linspace(0, n_total - 1, n_starts, dtype=int))
    stat = 0.0
    recip = 0.0
    for j0 in starts:
        x, v = pts[:, :d].copy(), pts[:, d:].copy()
        for i in range(j0, n_total):
            dbeta = path.increments[i] if path.n_modes else ()
            x, v = _heun_step(model, x, v, path.dt, dbeta)
            mag = np.sqrt(np.sum(x * x, axis=1) + np.sum(v * v, axis=1))
            stat = max(stat, float(np.max(mag / base**2)))
            recip = max(recip, float(np.max(base / (1.0 + mag))))
    return {"growth": stat, "reciprocal": recip}


def jacobian_det(model, path, s, t, point, h):
    """Determinant of the central-difference Jacobian of Phi_{s,t} at a point."""
    point = np.asarray(point, dtype=np.float64)
    n = point.size
    probes = np.repeat(point[None, :], 2 * n, axis=0)
    for j in range(n):
        probes[2 * j, j] += h
        probes[2 * j + 1, j] -= h
    images = integrate_flow(model, path, s, t, probes, wrap=False)
    jac = np.empty((n, n))
    for j in range(n):
        jac[:, j] = (images[2 * j] - images[2 * j + 1]) / (2.0 * h)
    return float(np.linalg.det(jac))
