"""Movement-time extraction, velocity-profile metrics and Fitts'-law regression."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRegression, MotorPlanError, MovementIncomplete
from .reward import GoalSpec

log = logging.getLogger(__name__)

SPEED_THRESHOLD = 0.05


@dataclass(frozen=True)
class VelocityMetrics:
    movement_time: float
    peak_speed: float
    peak_time: float
    asymmetry: float
    onset: float = 0.0


@dataclass(frozen=True)
class FittsDatum:
    distance: float
    width: float
    index_of_difficulty: float
    movement_time: float


def index_of_difficulty(distance: float, width: float) -> float:
    """Shannon-form ID in bits."""
    return float(np.log2(2.0 * distance / width))


def speed_profile(path, h: float) -> np.ndarray:
    """Speed by central differences (one-sided at the ends)."""
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        return np.zeros(len(path))
    vel = np.gradient(path, h, axis=0)
    return np.linalg.norm(vel, axis=1)


def _crossing(speed, k, limit, h):
    """Time at which speed crosses ``limit`` between samples k-1 and k."""
    a, b = speed[k - 1], speed[k]
    if a == b:
        return k * h
    return (k - 1 + (limit - a) / (b - a)) * h


def velocity_metrics(traj, h: float, goal: GoalSpec, threshold: float = SPEED_THRESHOLD) -> VelocityMetrics:
    """Peak speed timing and movement time of an end-effector path.

    Times are measured from movement onset, the last upward crossing of
    ``threshold * peak`` before the speed peak (zero when the path already
    moves faster than that at the first sample).  The movement ends at the
    first downward crossing after the peak at which the position is within
    ``sqrt(diag(W))`` of the goal center.  Crossings are interpolated
    linearly between samples.
    """
    traj = np.asarray(traj, dtype=float)
    radius = goal.radius
    offset = np.abs(traj - goal.center)
    if not np.any(np.all(offset <= 3.0 * radius, axis=1)):
        raise MovementIncomplete("path never comes within 3 sqrt(W) of the goal")
    speed = speed_profile(traj, h)
    k_peak = int(np.argmax(speed))
    peak = float(speed[k_peak]) if len(speed) else 0.0
    if peak <= 0.0:
        raise MovementIncomplete("path does not move")
    limit = threshold * peak
    onset = 0.0
    for k in range(k_peak, 0, -1):
        if speed[k - 1] < limit <= speed[k]:
            onset = _crossing(speed, k, limit, h)
            break
    inside = np.all(offset <= radius, axis=1)
    for k in range(k_peak + 1, len(speed)):
        if speed[k] < limit and inside[k]:
            end = _crossing(speed, k, limit, h) if speed[k - 1] >= limit else k * h
            mt = end - onset
            pt = k_peak * h - onset
            if pt <= 0.0:
                raise MovementIncomplete("speed peaks at movement onset")
            return VelocityMetrics(float(mt), peak, float(pt), float(pt / mt), float(onset))
    raise MovementIncomplete("speed never settles inside the goal region")


def _sweep_cell(args):
    from .dynamics import StateGaussian
    from .kinematics import forward, inverse
    from .planner import plan
    from .rollout import rollout

    width, distance, plant, cost_template, trials, seed, start, direction, opts, threshold = args
    start = np.asarray(start, dtype=float)
    center = start + distance * np.asarray(direction, dtype=float)
    goal = GoalSpec.isotropic(center, width)
    kin = plant.kinematics
    q0 = start if kin.is_linear else inverse(kin, start)
    q0 = np.concatenate([q0, np.zeros(plant.n_q - q0.size)])
    result = plan(StateGaussian.at_rest(q0), plant, cost_template.with_goal(goal), opts)
    h = cost_template.step
    if trials == 0:
        ee = forward(kin, result.means[:, : plant.n_q])
        return velocity_metrics(ee, h, goal, threshold).movement_time
    ens = rollout(result, plant, trials, seed)
    times = []
    for path in ens.ee_paths:
        try:
            times.append(velocity_metrics(path, h, goal, threshold).movement_time)
        except MovementIncomplete:
            pass
    if not times:
        raise MovementIncomplete("no rollout trial settled inside the goal")
    return float(np.mean(times))


def fitts_sweep(widths, distances, plant, cost_template, trials: int = 0, seed: int = 0,
                start=None, direction=None, opts=None, jobs: int = 1, failures: list | None = None,
                threshold: float = SPEED_THRESHOLD):
    """One FittsDatum per (width, distance) cell.

    Goals sit ``distance`` away from ``start`` (the origin by default) along
    ``direction`` (+x).  Movement time comes from the mean plan when
    ``trials == 0``, otherwise it is averaged over the rollout trials that
    settle.  Cells that fail are skipped; ``(width, distance, error)`` tuples
    are appended to ``failures`` when given.
    """
    widths, distances = list(widths), list(distances)
    if not widths or not distances:
        raise ValueError("width and distance grids must be nonempty")
    dim = plant.kinematics.dim
    start = np.zeros(dim) if start is None else np.asarray(start, dtype=float)
    direction = np.eye(dim)[0] if direction is None else np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    cells = [(w, d) for w in widths for d in distances]
    args = [(w, d, plant, cost_template, trials, seed, start, direction, opts, threshold) for w, d in cells]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_safe_cell, args))
    else:
        outcomes = [_safe_cell(a) for a in args]
    data = []
    for (w, d), out in zip(cells, outcomes):
        if isinstance(out, Exception):
            log.warning("fitts cell W=%g D=%g failed: %s", w, d, out)
            if failures is not None:
                failures.append((w, d, out))
            continue
        data.append(FittsDatum(d, w, index_of_difficulty(d, w), out))
    return data


def _safe_cell(args):
    try:
        return _sweep_cell(args)
    except MotorPlanError as exc:
        return exc


def fitts_fit(data) -> tuple[float, float, float]:
    """Least-squares ``MT = a + b * ID``; returns ``(a, b, r_squared)``."""
    data = sorted(data, key=lambda d: (d.index_of_difficulty, d.movement_time))
    ids = np.array([d.index_of_difficulty for d in data])
    mts = np.array([d.movement_time for d in data])
    if len(ids) < 3 or np.ptp(ids) == 0.0:
        raise DegenerateRegression("need at least three points and two distinct index-of-difficulty values")
    x = ids - ids.mean()
    b = float(x @ (mts - mts.mean()) / (x @ x))
    a = float(mts.mean() - b * ids.mean())
    ss_tot = float(np.sum((mts - mts.mean()) ** 2))
    ss_res = float(np.sum((mts - a - b * ids) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return a, b, r2
