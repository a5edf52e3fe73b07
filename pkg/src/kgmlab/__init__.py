"""Numerical laboratory for peaked solutions of singularly perturbed
Klein-Gordon-Maxwell(-Proca) systems on Riemannian manifolds with boundary.

The packages builds peak ansatz functions from the radial ground state,
reduces the coupled system via a finite-dimensional (Lyapunov-Schmidt)
splitting, and measures the predicted norm scalings and the reduced-energy
expansion C - eps * alpha * H(xi) on synthetic and embedded geometries.
"""

from .ground_state import (
    GroundState,
    ModelConstants,
    ModelParams,
    RadialProfile,
    compute_constants,
    kernel_eval,
    solve_gamma,
    solve_ground_state,
)

__all__ = [
    "GroundState",
    "ModelConstants",
    "ModelParams",
    "RadialProfile",
    "compute_constants",
    "kernel_eval",
    "solve_gamma",
    "solve_ground_state",
]

__version__ = "0.1.0"
