"""Simulation and verification of second-order gradient flows with vanishing damping.

Solves  x'' + gamma(t) x' + grad Phi(x) = 0  for convex Phi and damping
gamma(t) ~ K/t, and checks the energy identities, inequalities and decay
indicators that describe its long-time behaviour.
"""

from .damping import Certificate, OverT, PowerLaw, Shifted, Tabulated, certify, tail_kernel_check
from .diagnostics import anchored_series, decay_report, energy, opial_convergence_check
from .harness import RunReport, ScenarioConfig, compare_oracle, explore_limit_case, run_scenario, sweep_K
from .integrator import Trajectory, integrate, reference_integrate
from .potential import Huber, LeastSquares, LogSumExp, Quadratic, Zero

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "OverT",
    "PowerLaw",
    "Shifted",
    "Tabulated",
    "certify",
    "tail_kernel_check",
    "anchored_series",
    "decay_report",
    "energy",
    "opial_convergence_check",
    "RunReport",
    "ScenarioConfig",
    "compare_oracle",
    "explore_limit_case",
    "run_scenario",
    "sweep_K",
    "Trajectory",
    "integrate",
    "reference_integrate",
    "Huber",
    "LeastSquares",
    "LogSumExp",
    "Quadratic",
    "Zero",
]
