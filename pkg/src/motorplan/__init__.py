"""Trajectory optimization of human reaching under signal-dependent motor noise."""
from .dynamics import PlantModel, StateGaussian, discretize, point_mass, propagate, propagate_trajectory, two_link_arm
from .kinematics import Kinematics, forward, jacobian
from .planner import CostParams, Observation, PlanResult, estimate_goal, objective, plan
from .reward import GoalSpec, expected_reward, expected_reward_grad, reward_density
from .solver import SolverOpts, minimize

__all__ = [
    "CostParams", "GoalSpec", "Kinematics", "Observation", "PlanResult", "PlantModel", "SolverOpts",
    "StateGaussian", "discretize", "estimate_goal", "expected_reward", "expected_reward_grad", "forward",
    "jacobian", "minimize", "objective", "plan", "point_mass", "propagate", "propagate_trajectory",
    "reward_density", "two_link_arm",
]
__version__ = "0.1.0"
