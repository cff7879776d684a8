"""Open-loop execution of a plan under sampled signal-dependent torque noise.

Noise layout: a single PCG64 stream seeded through ``SeedSequence(seed)``
supplies standard normals in trial-major order, shape ``(trials, H, n_q)``;
trial ``k`` always consumes block ``k`` regardless of chunking, so ensembles
do not depend on how the work is split.  The executed torque is
``tau * (1 + sqrt(kappa) * z)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import PlantModel
from .kinematics import forward
from .reward import GoalSpec

CHUNK = 8192


@dataclass(frozen=True)
class RolloutEnsemble:
    trials: int
    trajectories: np.ndarray   # (trials, H+1, 2 n_q)
    ee_paths: np.ndarray       # (trials, H+1, dim)
    seed: int


@dataclass(frozen=True)
class EndpointStats:
    hit_rate: float
    fitted_mean: np.ndarray
    fitted_cov: np.ndarray
    samples: np.ndarray


def noise_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def rollout(plan, plant: PlantModel, trials: int, seed: int = 0) -> RolloutEnsemble:
    """Simulate ``trials`` noisy open-loop executions of ``plan.torques``.

    Linear plants use the discrete system the plan was built with; other
    plants integrate the full dynamics with forward Euler at the plan step.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    torques = np.asarray(plan.torques, dtype=float)
    horizon, n = torques.shape
    s0 = plan.states[0].mean
    h = plan.lti_seq[0].step if plan.lti_seq else None
    sd = np.sqrt(plant.kappa)
    rng = noise_stream(seed)
    traj = np.empty((trials, horizon + 1, 2 * n))
    for lo in range(0, trials, CHUNK):
        hi = min(trials, lo + CHUNK)
        z = rng.standard_normal((hi - lo, horizon, n))
        applied = torques * (1.0 + sd * z)
        traj[lo:hi] = _integrate(plant, plan, s0, applied, h)
    ee = forward(plant.kinematics, traj[..., :n])
    return RolloutEnsemble(trials, traj, ee, int(seed))


def _integrate(plant, plan, s0, applied, h):
    batch, horizon, n = applied.shape
    out = np.empty((batch, horizon + 1, 2 * n))
    out[:, 0] = s0
    if plant.is_linear:
        lti = plan.lti_seq[0]
        for i in range(horizon):
            out[:, i + 1] = out[:, i] @ lti.a.T + applied[:, i] @ lti.b.T + lti.offset
        return out
    for i in range(horizon):
        s = out[:, i]
        q, qd = s[:, :n], s[:, n:]
        rhs = applied[:, i] - qd @ plant.damping.T
        m = np.empty((batch, n, n))
        for k in range(batch):
            m[k] = plant.inertia_at(q[k])
            rhs[k] -= plant.gravity_at(q[k])
        qdd = np.linalg.solve(m, rhs[..., None])[..., 0]
        out[:, i + 1, :n] = q + h * qd
        out[:, i + 1, n:] = qd + h * qdd
    return out


def endpoint_stats(ens: RolloutEnsemble, goal: GoalSpec, hit_radius=None) -> EndpointStats:
    """Hit rate (componentwise box test) and Gaussian fit of the final positions."""
    ends = ens.ee_paths[:, -1, :]
    radius = goal.radius if hit_radius is None else np.broadcast_to(np.asarray(hit_radius, float), goal.center.shape)
    hits = np.all(np.abs(ends - goal.center) < radius, axis=1)
    mean = ends.mean(axis=0)
    if len(ends) > 1:
        cov = np.atleast_2d(np.cov(ends, rowvar=False))
    else:
        cov = np.zeros((ends.shape[1], ends.shape[1]))
    return EndpointStats(float(hits.mean()), mean, cov, ends)


def dispersion_profile(ens: RolloutEnsemble) -> np.ndarray:
    """sqrt(trace(sample covariance)) of the end-effector position at every step."""
    if ens.trials < 2:
        raise ValueError("dispersion needs at least two trials")
    # shift by trial 0 so identical trials give exactly zero spread
    var = (ens.ee_paths - ens.ee_paths[:1]).var(axis=0, ddof=1)
    return np.sqrt(var.sum(axis=-1))
