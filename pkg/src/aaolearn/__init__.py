"""
All-at-once learning of a reaction-diffusion nonlinearity.

The state ``u``, an unknown source and a neural-network surrogate ``N_θ``
for the nonlinearity are estimated jointly from observations by penalizing
the PDE residual instead of solving the PDE inside the loop.
"""

from .grid import Grid
from .model import MeasurementSpec, Observation, ObservationSet, PdeParams, forward_G, pde_residual
from .neural import NetParams
from .solvers import AdamOptions, ObjectiveWeights, Problem, SolveState, StoppingRule, adam_run, landweber_run

__all__ = [
    "AdamOptions", "Grid", "MeasurementSpec", "NetParams", "ObjectiveWeights", "Observation",
    "ObservationSet", "PdeParams", "Problem", "SolveState", "StoppingRule", "adam_run", "forward_G",
    "landweber_run", "pde_residual",
]

__version__ = "0.1.0"
