"""Receding-horizon plan synthesis over deterministic decision processes.

The package splits into a generic layer (mdp, pso, engine, harness) and a
concrete flocking model (flock) whose cost function rewards V-formations.
"""

from .mdp import Mdp, Plan, TrajectoryNode, extract_plan, integrator_mdp, rollout
from .flock import FlockAction, FlockConfig, FlockParams, fitness, flock_mdp, perfect_v, random_initial
from .pso import OptimizationError, PsoParams, optimize
from .engine import AresOutcome, AresParams, ares_plan
from .harness import EvalParams, required_samples, run_experiments, summarize

__all__ = [
    "Mdp",
    "Plan",
    "TrajectoryNode",
    "extract_plan",
    "integrator_mdp",
    "rollout",
    "FlockAction",
    "FlockConfig",
    "FlockParams",
    "fitness",
    "flock_mdp",
    "perfect_v",
    "random_initial",
    "OptimizationError",
    "PsoParams",
    "optimize",
    "AresOutcome",
    "AresParams",
    "ares_plan",
    "EvalParams",
    "required_samples",
    "run_experiments",
    "summarize",
]
