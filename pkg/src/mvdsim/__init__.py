"""mvdsim: measure-valued branching diffusions, numerically.

Three engines for the same phenomenon, built to cross-check each other:

* a branching particle Monte Carlo simulator (:mod:`mvdsim.branching`),
* a semilinear evolution solver with maximal-solution sweeps
  (:mod:`mvdsim.pde`),
* a rule-based classifier of the compact support property
  (:mod:`mvdsim.csp`),

on top of a radial diffusion-generator layer (:mod:`mvdsim.generator`)
and driven by reproducible, config-file experiments
(:mod:`mvdsim.experiments`, CLI ``mvdsim``).
"""

from . import coefficients
from .branching import (BranchingTriplet, GWOracle, ParticleCloud,
                        ReplicaStats, gw_survival_mc, gw_survival_recursion,
                        point_cloud, run_replicas, stable_offspring_sample,
                        step_cloud)
from .csp import ScenarioSpec, Verdict, beta0, classify, critical_dimension, \
    h_transform
from .generator import (Domain, ExplosionReport, GeneratorSpec,
                        change_of_variables_to_line, mean_exit_time,
                        radialize, simulate_path, simulate_paths)
from .pde import (GridFunction, MaximalSolutionResult, hitting_probability,
                  maximal_solution, solve_cauchy)
from .supersolutions import ComparisonFunction, verify_comparison

__version__ = "0.1.0"

__all__ = [
    "BranchingTriplet", "ComparisonFunction", "Domain", "ExplosionReport",
    "GWOracle", "GeneratorSpec", "GridFunction", "MaximalSolutionResult",
    "ParticleCloud", "ReplicaStats", "ScenarioSpec", "Verdict", "beta0",
    "change_of_variables_to_line", "classify", "coefficients",
    "critical_dimension", "gw_survival_mc", "gw_survival_recursion",
    "h_transform", "hitting_probability", "maximal_solution",
    "mean_exit_time", "point_cloud", "radialize", "run_replicas",
    "simulate_path", "simulate_paths", "solve_cauchy",
    "stable_offspring_sample", "step_cloud",
    "verify_comparison",
]
