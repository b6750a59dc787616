"""Seeded Brownian increment tables with dyadic refinement.

Increments come from a counter-based Philox generator keyed by the seed, so a
table is bit-reproducible from (seed, dt, n_steps, n_modes).  Dyadic
refinement splits each increment with a Brownian bridge whose midpoint noise
is keyed by (seed, level), which makes every resolution in the dyadic family
an exact refinement of the coarser ones: fine increments sum to the coarse
increment they came from.
"""

from dataclasses import dataclass

import numpy as np


def _generator(seed, level):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(level),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class BrownianPath:
    """Increment table d_beta[step, mode], each N(0, dt)."""

    seed: int
    dt: float
    n_steps: int
    n_modes: int
    increments: np.ndarray
    level: int = 0  # dyadic refinement depth relative to the base table

    @property
    def t_final(self):
        return self.dt * self.n_steps

    def partial_sums(self):
        """beta_k at step edges: shape (n_steps + 1, n_modes), beta(0) = 0."""
        out = np.zeros((self.n_steps + 1, self.n_modes))
        if self.n_modes:
            np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def refine(self):
        """Halve dt, preserving the underlying Brownian trajectory."""
        gen = _generator(self.seed, self.level + 1)
        xi = gen.standard_normal((self.n_steps, self.n_modes)) * np.sqrt(self.dt / 4.0)
        fine = np.empty((2 * self.n_steps, self.n_modes))
        fine[0::2] = 0.5 * self.increments + xi
        fine[1::2] = 0.5 * self.increments - xi
        return BrownianPath(self.seed, self.dt / 2.0, 2 * self.n_steps,
                            self.n_modes, fine, self.level + 1)

    def refine_dyadic(self, factor):
        """Refine by a power of two, hierarchically (so all levels are
        mutually consistent)."""
        if factor < 1 or (factor & (factor - 1)) != 0:
            raise ValueError("refinement factor must be a power of two")
        path = self
        while factor > 1:
            path = path.refine()
            factor //= 2
        return path

    def step_index(self, t, tol=1e-9):
        """Index of time t on the step grid; raises if t is off-grid."""
        idx = t / self.dt
        i = int(round(idx))
        if abs(idx - i) > tol * max(1.0, abs(idx)) + tol:
            raise ValueError(f"time {t} is not aligned to the step grid dt={self.dt}")
        if not 0 <= i <= self.n_steps:
            raise ValueError(f"time {t} outside the path horizon")
        return i


def sample_brownian(seed, dt, n_steps, n_modes):
    """Draw the base increment table, N(0, dt) per (step, mode)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    gen = _generator(seed, 0)
    inc = gen.standard_normal((n_steps, n_modes)) * np.sqrt(dt)
    return BrownianPath(int(seed), float(dt), int(n_steps), int(n_modes), inc)


def derive_path_seed(base_seed, index):
    """Stable per-path seed; adding paths never changes existing ones."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index), 0x5eed))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
