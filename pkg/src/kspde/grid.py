"""Uniform phase-space grid: position torus times bounded velocity box."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PhaseGrid:
    """Tensor grid on [0, L_x)^d x [-V_max, V_max)^d.

    Position nodes sit at i*h_x (periodic), velocity nodes at cell centers
    -V_max + (j+1/2)*h_v, so the velocity lattice is symmetric about 0.
    """

    d: int
    n_x: int          # nodes per position axis
    n_v: int          # nodes per velocity axis
    length: float     # torus period per position axis
    v_max: float      # velocity half-width

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"unsupported dimension d={self.d}")
        if self.n_x < 1 or self.n_v < 2:
            raise ValueError("need n_x >= 1 and n_v >= 2")
        if self.length <= 0 or self.v_max <= 0:
            raise ValueError("length and v_max must be positive")

    @property
    def h_x(self):
        return self.length / self.n_x

    @property
    def h_v(self):
        return 2.0 * self.v_max / self.n_v

    @property
    def x_nodes(self):
        return self.h_x * np.arange(self.n_x)

    @property
    def v_nodes(self):
        return -self.v_max + self.h_v * (np.arange(self.n_v) + 0.5)

    @property
    def shape(self):
        return (self.n_x,) * self.d + (self.n_v,) * self.d

    @property
    def n_nodes(self):
        return self.n_x**self.d * self.n_v**self.d

    @property
    def cell_volume(self):
        """Phase-space volume h_x^d * h_v^d of one cell."""
        return self.h_x**self.d * self.h_v**self.d

    @property
    def v_cell(self):
        return self.h_v**self.d

    @property
    def x_cell(self):
        return self.h_x**self.d

    def wrap_x(self, x):
        """Wrap positions onto the torus [0, L)."""
        return np.mod(x, self.length)

    def node_points(self):
        """All grid nodes as an (n_nodes, 2d) array, index order (x1..xd, v1..vd)."""
        axes = [self.x_nodes] * self.d + [self.v_nodes] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def v_mesh(self):
        """Velocity coordinates on the d-dim velocity grid, shape (d, n_v, ..)."""
        mesh = np.meshgrid(*([self.v_nodes] * self.d), indexing="ij")
        return np.stack(mesh, axis=0)

    def x_mesh(self):
        mesh = np.meshgrid(*([self.x_nodes] * self.d), indexing="ij")
        return np.stack(mesh, axis=0)

    def v_speed_sq(self):
        """|v|^2 on the velocity grid, shape (n_v,)*d."""
        return np.sum(self.v_mesh() ** 2, axis=0)

    def x_radius_sq(self):
        """|x|^2 on the position grid (coordinates in [0, L)), shape (n_x,)*d."""
        return np.sum(self.x_mesh() ** 2, axis=0)

    def describe(self):
        return {
            "d": self.d,
            "n_x": self.n_x,
            "n_v": self.n_v,
            "length": self.length,
            "v_max": self.v_max,
            "h_x": self.h_x,
            "h_v": self.h_v,
        }
