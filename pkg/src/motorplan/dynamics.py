"""Arm dynamics, forward-Euler discretization and Gaussian state propagation.

The continuous model is ``M(q) qdd + D qd + G(q) = tau (I + eps)`` with
``eps ~ N(0, kappa)``.  Discretizing at a configuration gives

    mu+    = A mu + B tau (+ c, the gravity feedforward)
    Sigma+ = A Sigma A^T + B N(tau) B^T

where the noise second moment ``N(tau)`` is ``diag(tau) kappa diag(tau)`` in
the default ``"corrected"`` form and ``tau tau^T + diag(tau) kappa diag(tau)``
in the ``"literal"`` form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import SingularInertia
from .kinematics import Kinematics

NOISE_FORMS = ("corrected", "literal")
GRAVITY = 9.81


@dataclass(frozen=True)
class PlantModel:
    """Arm model.  ``inertia`` is a constant matrix or a callable ``q -> M(q)``."""

    n_q: int
    inertia: object
    damping: np.ndarray
    noise_cov: np.ndarray
    kinematics: Kinematics
    gravity_enabled: bool = False
    gravity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    noise_form: str = "corrected"

    def __post_init__(self):
        object.__setattr__(self, "damping", np.atleast_2d(np.asarray(self.damping, dtype=float)))
        object.__setattr__(self, "noise_cov", np.atleast_2d(np.asarray(self.noise_cov, dtype=float)))
        if not callable(self.inertia):
            object.__setattr__(self, "inertia", np.atleast_2d(np.asarray(self.inertia, dtype=float)))
        n = self.n_q
        if self.damping.shape != (n, n) or self.noise_cov.shape != (n, n):
            raise ValueError("damping and noise_cov must be n_q x n_q")
        kappa = self.noise_cov
        if np.any(kappa - np.diag(np.diag(kappa))) or np.any(np.diag(kappa) < 0):
            raise ValueError("noise_cov must be diagonal with nonnegative entries")
        if self.noise_form not in NOISE_FORMS:
            raise ValueError(f"noise_form must be one of {NOISE_FORMS}")
        if self.kinematics.n_in > n:
            raise ValueError("kinematics needs more joints than the plant has")

    @property
    def is_linear(self) -> bool:
        return not callable(self.inertia) and self.kinematics.is_linear and not self.gravity_enabled

    @property
    def kappa(self) -> np.ndarray:
        return np.diag(self.noise_cov).copy()

    def inertia_at(self, q) -> np.ndarray:
        if callable(self.inertia):
            return np.asarray(self.inertia(np.asarray(q, dtype=float)), dtype=float)
        return self.inertia

    def gravity_at(self, q) -> np.ndarray:
        if not self.gravity_enabled or self.gravity is None:
            return np.zeros(self.n_q)
        return np.asarray(self.gravity(np.asarray(q, dtype=float)), dtype=float)

    def with_noise(self, noise_cov) -> "PlantModel":
        from dataclasses import replace

        return replace(self, noise_cov=np.asarray(noise_cov, dtype=float))


def point_mass(n_q: int = 2, mass: float = 2.0, damping: float = 0.3, kappa: float = 0.01,
               noise_form: str = "corrected") -> PlantModel:
    """Decoupled Cartesian point mass: M = mass*I, D = damping*I, identity kinematics."""
    eye = np.eye(n_q)
    return PlantModel(n_q, mass * eye, damping * eye, kappa * eye, Kinematics.identity(n_q),
                      noise_form=noise_form)


def two_link_arm(l1: float = 0.3, l2: float = 0.3, m1: float = 1.5, m2: float = 1.0,
                 damping: float = 0.3, kappa: float = 0.01, gravity_enabled: bool = False,
                 noise_form: str = "corrected") -> PlantModel:
    """Planar two-link arm with uniform-rod links (no Coriolis terms, as in the model)."""
    lc1, lc2 = l1 / 2, l2 / 2
    i1, i2 = m1 * l1**2 / 12, m2 * l2**2 / 12

    def inertia(q):
        c2 = np.cos(q[1])
        m11 = i1 + i2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * c2)
        m12 = i2 + m2 * (lc2**2 + l1 * lc2 * c2)
        m22 = i2 + m2 * lc2**2
        return np.array([[m11, m12], [m12, m22]])

    def gravity(q):
        c1, c12 = np.cos(q[0]), np.cos(q[0] + q[1])
        g2 = m2 * lc2 * GRAVITY * c12
        return np.array([(m1 * lc1 + m2 * l1) * GRAVITY * c1 + g2, g2])

    return PlantModel(2, inertia, damping * np.eye(2), kappa * np.eye(2),
                      Kinematics.two_link(l1, l2), gravity_enabled, gravity, noise_form)


@dataclass(frozen=True)
class StateGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def at_rest(cls, q0, qd0=None) -> "StateGaussian":
        q0 = np.asarray(q0, dtype=float).ravel()
        qd0 = np.zeros_like(q0) if qd0 is None else np.asarray(qd0, dtype=float).ravel()
        n = 2 * q0.size
        return cls(np.concatenate([q0, qd0]), np.zeros((n, n)))

    @property
    def n_q(self) -> int:
        return self.mean.size // 2

    @property
    def q(self) -> np.ndarray:
        return self.mean[: self.n_q]

    @property
    def qd(self) -> np.ndarray:
        return self.mean[self.n_q:]

    def is_psd(self, tol: float = 1e-10) -> bool:
        return bool(np.all(np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T)) >= -tol))


@dataclass(frozen=True)
class DiscreteLTI:
    a: np.ndarray
    b: np.ndarray
    step: float
    offset: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.offset is None:
            object.__setattr__(self, "offset", np.zeros(self.a.shape[0]))


def discretize(model: PlantModel, q_lin, h: float) -> DiscreteLTI:
    """Forward-Euler linearization of the arm dynamics at ``q_lin``."""
    if h <= 0:
        raise ValueError("step must be positive")
    n = model.n_q
    q_lin = np.zeros(n) if q_lin is None else np.asarray(q_lin, dtype=float)
    m = model.inertia_at(q_lin)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInertia(q_lin, cond)
    m_inv = np.linalg.inv(m)
    eye = np.eye(n)
    a = np.block([[eye, h * eye], [np.zeros((n, n)), eye - h * m_inv @ model.damping]])
    b = np.vstack([np.zeros((n, n)), h * m_inv])
    offset = np.zeros(2 * n)
    if model.gravity_enabled:
        offset[n:] = -h * m_inv @ model.gravity_at(q_lin)
    return DiscreteLTI(a, b, h, offset)


def noise_moment(torque, kappa_diag, noise_form: str = "corrected") -> np.ndarray:
    """Second moment of the torque noise entering through B."""
    tau = np.asarray(torque, dtype=float)
    mom = np.diag(tau * np.asarray(kappa_diag) * tau)
    if noise_form == "literal":
        mom = mom + np.outer(tau, tau)
    return mom


def propagate(state: StateGaussian, lti: DiscreteLTI, torque, noise_cov,
              noise_form: str = "corrected") -> StateGaussian:
    torque = np.asarray(torque, dtype=float)
    kappa = np.diag(np.atleast_2d(noise_cov))
    if torque.shape != (lti.b.shape[1],) or state.mean.shape != (lti.a.shape[0],):
        raise ValueError("dimension mismatch between state, system and torque")
    mean = lti.a @ state.mean + lti.b @ torque + lti.offset
    cov = lti.a @ state.cov @ lti.a.T + lti.b @ noise_moment(torque, kappa, noise_form) @ lti.b.T
    return StateGaussian(mean, 0.5 * (cov + cov.T))


def propagate_trajectory(state0: StateGaussian, lti_seq, torques, noise_cov,
                         noise_form: str = "corrected") -> list[StateGaussian]:
    torques = np.asarray(torques, dtype=float)
    if len(torques) != len(lti_seq):
        raise ValueError("one torque row per discrete system is required")
    states = [state0]
    for lti, tau in zip(lti_seq, torques):
        states.append(propagate(states[-1], lti, tau, noise_cov, noise_form))
    return states


def linearize_along(model: PlantModel, q_path, h: float) -> list[DiscreteLTI]:
    """One discrete system per step, linearized at each configuration of ``q_path``.

    For plants with constant inertia and no gravity the same system is reused.
    """
    if not callable(model.inertia) and not model.gravity_enabled:
        lti = discretize(model, None, h)
        return [lti] * len(q_path)
    return [discretize(model, q, h) for q in q_path]


def step_nonlinear(model: PlantModel, s, torque, h: float) -> np.ndarray:
    """One forward-Euler step of the full dynamics (inertia evaluated at the current q)."""
    n = model.n_q
    q, qd = s[:n], s[n:]
    qdd = np.linalg.solve(model.inertia_at(q), torque - model.damping @ qd - model.gravity_at(q))
    return np.concatenate([q + h * qd, qd + h * qdd])
