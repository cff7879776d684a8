"""Simulated human-robot co-manipulation: synchronization and authority handover.

The human is the motor model itself: a plan toward the human's goal executed
open-loop with sampled torque noise.  Human and robot hold the same object.
The robot renders a spring ``F = K (x_rest - x)`` toward its rest trajectory,
and the human hand is modelled as a stiff position source ``K_h`` toward its
own noisy path, so the shared position is the stiffness-weighted blend

    x = (K x_rest + K_h x_human) / (K + K_h)

per axis.  With ``K = 0`` the human moves the object freely.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import speed_profile, velocity_metrics
from .dynamics import PlantModel, StateGaussian
from .errors import MotorPlanError, MovementIncomplete
from .kinematics import forward
from .planner import CostParams, Observation, estimate_goal, plan
from .reward import GoalSpec
from .rollout import rollout
from .transition import gp_predict

log = logging.getLogger(__name__)

POLICIES = ("high_stiff", "switch_90", "switch_60", "switch_opt")


@dataclass(frozen=True)
class ScenarioParams:
    stiffness: float = 400.0          # N/m, robot translational stiffness
    ramp_duration: float = 0.5        # s, linear ramp to zero after the transition
    t_obs: float = 0.2                # s, observation time for synchronization
    human_stiffness: float = 1000.0   # N/m, human hand as a position source
    width_factor: float = 0.5         # corrective phase: goal radius multiplier
    discount_drop: float = 0.02       # corrective phase: gamma reduction
    arm_length: float = 0.6           # m, distance normalization of the transition model


@dataclass(frozen=True)
class ImpedanceSchedule:
    """Constant stiffness, optionally ramped linearly to zero from ``ramp_start``."""

    stiffness: np.ndarray
    ramp_duration: float = 0.5
    ramp_start: float | None = None

    def at(self, t) -> np.ndarray:
        k = np.asarray(self.stiffness, dtype=float)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.ramp_start is None:
            scale = np.ones_like(t)
        elif self.ramp_duration <= 0:
            scale = (t < self.ramp_start).astype(float)
        else:
            scale = np.clip(1.0 - (t - self.ramp_start) / self.ramp_duration, 0.0, 1.0)
        return scale[:, None] * k[None, :]


@dataclass
class ScenarioReport:
    time: np.ndarray
    human_traj: np.ndarray         # shared object / hand position
    robot_traj: np.ndarray         # robot rest trajectory
    sync_error: np.ndarray         # |robot rest - actual| per step
    finish_time_human: float
    finish_time_robot: float
    interaction_work: float
    transition_time: float = float("nan")
    stiffness: np.ndarray = None
    force: np.ndarray = None
    work: np.ndarray = None        # cumulative
    info: dict = field(default_factory=dict)

    @property
    def sync_error_xy(self) -> np.ndarray:
        return np.linalg.norm((self.robot_traj - self.human_traj)[:, :2], axis=1)

    @property
    def sync_error_z(self) -> np.ndarray:
        if self.robot_traj.shape[1] < 3:
            return np.zeros(len(self.time))
        return np.abs(self.robot_traj[:, 2] - self.human_traj[:, 2])


def _start_state(plant: PlantModel, start) -> StateGaussian:
    start = np.asarray(start, dtype=float)
    if not plant.kinematics.is_linear:
        raise MotorPlanError("scenarios use a Cartesian (identity-kinematics) plant")
    return StateGaussian.at_rest(np.concatenate([start, np.zeros(plant.n_q - start.size)]))


def _human_run(goal: GoalSpec, plant: PlantModel, cost: CostParams, seed: int, state0: StateGaussian):
    result = plan(state0, plant, cost.with_goal(goal))
    ens = rollout(result, plant, 1, seed)
    return result, ens.trajectories[0], ens.ee_paths[0]


def simulate_human(goal: GoalSpec, plant: PlantModel, cost: CostParams, seed: int, state0=None) -> np.ndarray:
    """One noisy execution of the motor-model plan toward ``goal`` (end-effector path)."""
    if state0 is None:
        state0 = _start_state(plant, np.zeros(plant.kinematics.dim))
    return _human_run(goal, plant, cost, seed, state0)[2]


def _finish_time(path, h, goal: GoalSpec) -> float:
    try:
        m = velocity_metrics(path, h, goal)
    except MovementIncomplete:
        return float("nan")
    return m.onset + m.movement_time


def _hold(path, n):
    """Extend a path to ``n`` rows by holding its last row."""
    if len(path) >= n:
        return path[:n]
    return np.vstack([path, np.repeat(path[-1:], n - len(path), axis=0)])


def _couple(x_rest, x_human, k_robot, k_human):
    return (k_robot * x_rest + k_human * x_human) / (k_robot + k_human)


def _work(force, x, h):
    vel = np.gradient(x, h, axis=0)
    power = np.abs(np.sum(force * vel, axis=1))
    return np.cumsum(power * h)


def scenario_sync(true_goal, goal_prior: GoalSpec, plant: PlantModel, cost: CostParams, seed: int = 0,
                  t_obs: float | None = None, start=None, params: ScenarioParams | None = None,
                  opts=None) -> ScenarioReport:
    """Human leads x-y toward ``true_goal``; the robot leads z along the estimated plan.

    The robot is compliant until ``t_obs``.  Then the observed human state
    feeds goal estimation, and the estimated trajectory becomes the rest
    position of a spring that acts on z only.
    """
    params = params or ScenarioParams()
    t_obs = params.t_obs if t_obs is None else t_obs
    true_goal = np.asarray(true_goal, dtype=float)
    dim = plant.kinematics.dim
    if dim >= 3 and abs(true_goal[2] - goal_prior.center[2]) > 1e-12:
        raise ValueError("the true goal may differ from the prior only in the x-y plane")
    h, horizon = cost.step, cost.horizon
    start = np.zeros(dim) if start is None else np.asarray(start, dtype=float)
    state0 = _start_state(plant, start)
    human_goal = goal_prior.moved(true_goal)
    _, human_states, human_ee = _human_run(human_goal, plant, cost, seed, state0)

    n_o = Observation(human_states[0], t_obs).index(h)
    obs = Observation(human_states[n_o], t_obs)
    est, g_hat = estimate_goal(state0, obs, goal_prior, plant, cost, opts, strict=False)
    residual = float(np.max(np.abs(est.means[n_o] - obs.state)))
    rest = forward(plant.kinematics, est.means[:, : plant.n_q])

    time = np.arange(horizon + 1) * h
    k_axis = np.zeros(dim)
    k_axis[min(2, dim - 1)] = params.stiffness
    sched = ImpedanceSchedule(k_axis)
    stiff = sched.at(time)
    stiff[time < t_obs - 1e-12] = 0.0
    x = _couple(rest, human_ee, stiff, params.human_stiffness)
    force = stiff * (rest - x)
    work = _work(force, x, h)
    report = ScenarioReport(
        time, x, rest, np.linalg.norm(rest - x, axis=1),
        _finish_time(x, h, human_goal), _finish_time(rest, h, goal_prior.moved(g_hat)),
        float(work[-1]), float("nan"), stiff, force, work,
        {"estimated_goal": g_hat, "residual": residual, "converged": est.converged, "n_obs": n_o},
    )
    return report


def corrective_cost(cost: CostParams, params: ScenarioParams) -> CostParams:
    """Slower, more precise parameter set for the corrective sub-movement."""
    goal = cost.goal.scaled(params.width_factor**2)
    return replace(cost, goal=goal, discount=float(min(1.0, max(1e-6, cost.discount - params.discount_drop))))


def trigger_distance(policy: str, d0: float, goal_width: float, transition_model, arm_length: float) -> float:
    if policy == "switch_90":
        return 0.9 * d0
    if policy == "switch_60":
        return 0.6 * d0
    if transition_model is None:
        raise MotorPlanError(f"policy {policy} needs a fitted transition model")
    mean, _ = gp_predict(transition_model, d0 / arm_length, goal_width)
    return float(np.clip(mean, 0.0, d0))


def scenario_handover(goal: GoalSpec, start, transition_model, policy: str, plant: PlantModel,
                      cost: CostParams, seed: int = 0, params: ScenarioParams | None = None,
                      opts=None) -> ScenarioReport:
    """Robot carries the object toward its believed goal ``cost.goal``; the human finishes at ``goal``.

    Before the transition the human follows passively.  At the transition the
    human re-plans a corrective movement from the current object state with
    the corrective parameter set, and the robot stiffness ramps to zero
    (``high_stiff`` keeps it; the human then starts at the predicted
    transition point).  Total time is the finish time of the shared object.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    params = params or ScenarioParams()
    h, horizon = cost.step, cost.horizon
    dim = plant.kinematics.dim
    start = np.asarray(start, dtype=float)
    state0 = _start_state(plant, start)
    robot_plan = plan(state0, plant, cost, opts)
    belief = cost.goal.center
    d0 = float(np.linalg.norm(belief - start))
    width = float(cost.goal.radius[0])
    human_policy = "switch_opt" if policy == "high_stiff" else policy
    d_trig = trigger_distance(human_policy, d0, width, transition_model, params.arm_length)

    ramp_steps = int(np.ceil(params.ramp_duration / h))
    n = 2 * horizon + ramp_steps + 1
    time = np.arange(n) * h
    rest = _hold(forward(plant.kinematics, robot_plan.means[:, : plant.n_q]), n)
    dist = np.linalg.norm(rest[: horizon + 1] - belief, axis=1)
    hit = np.nonzero(dist <= d_trig)[0]
    k_s = int(hit[0]) if hit.size else horizon
    k_s = max(k_s, 1)
    t_s = k_s * h

    handover = robot_plan.states[k_s]
    hstate = StateGaussian(handover.mean, np.zeros_like(handover.cov))
    ccost = corrective_cost(cost, params)
    human_goal = ccost.goal.moved(goal.center)
    _, _, human_ee = _human_run(human_goal, plant, ccost, seed, hstate)
    human = np.vstack([rest[:k_s], _hold(human_ee, n - k_s)])

    ramp_start = None if policy == "high_stiff" else t_s
    sched = ImpedanceSchedule(np.full(dim, params.stiffness), params.ramp_duration, ramp_start)
    stiff = sched.at(time)
    x = rest.copy()
    x[k_s:] = _couple(rest[k_s:], human[k_s:], stiff[k_s:], params.human_stiffness)
    force = stiff * (rest - x)
    work = _work(force, x, h)
    return ScenarioReport(
        time, x, rest, np.linalg.norm(rest - x, axis=1),
        _finish_time(x, h, goal), _finish_time(rest, h, cost.goal),
        float(work[-1]), float(t_s), stiff, force, work,
        {"policy": policy, "trigger_distance": d_trig, "initial_distance": d0,
         "transition_step": k_s, "schedule": sched},
    )
