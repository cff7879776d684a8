"""Gaussian goal reward and its closed-form expectation under a Gaussian belief.

With the goal ``g ~ N(center, W)`` and the end effector ``x ~ N(mu_x, Sigma_x)``
the expected reward is the overlap of the two densities,

    E[R] = |2 pi (Sigma_x + W)|^(-1/2) exp(-1/2 (mu_x - center)^T (Sigma_x + W)^(-1) (mu_x - center)).

All functions broadcast over leading batch dimensions of ``mu_x``/``sigma_x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, InvalidGoal

COND_LIMIT = 1e13


@dataclass(frozen=True)
class GoalSpec:
    center: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        width = np.asarray(self.width, dtype=float)
        if width.ndim == 1:
            width = np.diag(width)
        width = np.atleast_2d(width)
        if width.shape != (center.size, center.size):
            raise InvalidGoal(f"width shape {width.shape} does not match goal of size {center.size}")
        if not np.allclose(width, width.T):
            raise InvalidGoal("goal width must be symmetric")
        if np.any(np.linalg.eigvalsh(width) <= 0):
            raise InvalidGoal("goal width must be positive definite")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "width", width)

    @classmethod
    def isotropic(cls, center, radius: float) -> "GoalSpec":
        """Goal whose width matrix is ``radius**2 * I``."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(center, radius**2 * np.eye(center.size))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def radius(self) -> np.ndarray:
        """Per-axis sqrt of the width diagonal (m)."""
        return np.sqrt(np.diag(self.width))

    def moved(self, center) -> "GoalSpec":
        return GoalSpec(np.asarray(center, dtype=float), self.width)

    def scaled(self, factor: float) -> "GoalSpec":
        return GoalSpec(self.center, self.width * factor)


def _gauss(d, s):
    """Density of N(0, s) at d, plus s^-1 d and s^-1 (batched over leading axes)."""
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    lam, vec = np.linalg.eigh(s)
    lo, hi = lam[..., 0], lam[..., -1]
    if np.any(lo <= 0) or np.any(hi > COND_LIMIT * lo):
        cond = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)
        raise IllConditioned("Sigma_x + W is singular or ill conditioned", float(np.max(cond)))
    s_inv = (vec / lam[..., None, :]) @ np.swapaxes(vec, -1, -2)
    alpha = np.einsum("...ij,...j->...i", s_inv, d)
    quad = np.einsum("...i,...i->...", d, alpha)
    dim = d.shape[-1]
    logdet = np.sum(np.log(lam), axis=-1)
    val = np.exp(-0.5 * quad - 0.5 * (dim * np.log(2 * np.pi) + logdet))
    return val, alpha, s_inv


def reward_density(x, goal: GoalSpec):
    """Goal density at a deterministic end-effector position."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != goal.dim:
        raise ValueError("position and goal dimensions differ")
    val, _, _ = _gauss(x - goal.center, np.broadcast_to(goal.width, x.shape[:-1] + goal.width.shape))
    return val


def expected_reward(mu_x, sigma_x, goal: GoalSpec):
    mu_x = np.asarray(mu_x, dtype=float)
    val, _, _ = _gauss(mu_x - goal.center, np.asarray(sigma_x, dtype=float) + goal.width)
    return val


def expected_reward_grad(mu_x, sigma_x, goal: GoalSpec):
    """Return (value, dR/dmu_x, dR/dSigma_x)."""
    mu_x = np.asarray(mu_x, dtype=float)
    val, alpha, s_inv = _gauss(mu_x - goal.center, np.asarray(sigma_x, dtype=float) + goal.width)
    v = np.asarray(val)[..., None]
    g_mu = -v * alpha
    g_sigma = 0.5 * v[..., None] * (np.einsum("...i,...j->...ij", alpha, alpha) - s_inv)
    return val, g_mu, g_sigma
