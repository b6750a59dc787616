"""Phase-space simulator and verification suite for the Boltzmann equation
with stochastic kinetic transport."""

from .grid import PhaseGrid
from .field import DistributionField
from .noise import NoiseModel, make_stream_noise, constant_noise, no_noise
from .brownian import BrownianPath, sample_brownian
from .collision import CollisionKernel

__all__ = [
    "PhaseGrid",
    "DistributionField",
    "NoiseModel",
    "make_stream_noise",
    "constant_noise",
    "no_noise",
    "BrownianPath",
    "sample_brownian",
    "CollisionKernel",
]

__version__ = "0.1.0"
