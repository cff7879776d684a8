"""End-effector maps and their Jacobians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Kinematics:
    """Either a selector of the first ``dim`` joints or a planar two-link arm.

    ``kind`` is ``"identity"`` or ``"two_link"``; link lengths are only used for
    the latter.
    """

    kind: str = "identity"
    dim: int = 2
    l1: float = 0.3
    l2: float = 0.3

    def __post_init__(self):
        if self.kind not in ("identity", "two_link"):
            raise ValueError(f"unknown kinematics kind {self.kind!r}")
        if self.kind == "two_link":
            if self.l1 <= 0 or self.l2 <= 0:
                raise ValueError("link lengths must be positive")
            if self.dim != 2:
                raise ValueError("two_link kinematics is planar (dim=2)")
        elif self.dim < 1:
            raise ValueError("dim must be positive")

    @classmethod
    def identity(cls, dim: int) -> "Kinematics":
        return cls("identity", dim)

    @classmethod
    def two_link(cls, l1: float = 0.3, l2: float = 0.3) -> "Kinematics":
        return cls("two_link", 2, l1, l2)

    @property
    def n_in(self) -> int:
        return self.dim if self.kind == "identity" else 2

    @property
    def is_linear(self) -> bool:
        return self.kind == "identity"

    @property
    def reach(self) -> float:
        return self.l1 + self.l2


def forward(kin: Kinematics, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] < kin.n_in:
        raise ValueError(f"need at least {kin.n_in} joints, got {q.shape[-1]}")
    if kin.kind == "identity":
        return q[..., : kin.dim].copy()
    q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
    x = kin.l1 * np.cos(q1) + kin.l2 * np.cos(q12)
    y = kin.l1 * np.sin(q1) + kin.l2 * np.sin(q12)
    return np.stack([x, y], axis=-1)


def jacobian(kin: Kinematics, q) -> np.ndarray:
    """d forward / dq, shape (..., dim, n_q)."""
    q = np.asarray(q, dtype=float)
    n_q = q.shape[-1]
    if n_q < kin.n_in:
        raise ValueError(f"need at least {kin.n_in} joints, got {n_q}")
    out = np.zeros(q.shape[:-1] + (kin.dim, n_q))
    if kin.kind == "identity":
        idx = np.arange(kin.dim)
        out[..., idx, idx] = 1.0
        return out
    q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
    s1, c1 = np.sin(q1), np.cos(q1)
    s12, c12 = np.sin(q12), np.cos(q12)
    out[..., 0, 0] = -kin.l1 * s1 - kin.l2 * s12
    out[..., 0, 1] = -kin.l2 * s12
    out[..., 1, 0] = kin.l1 * c1 + kin.l2 * c12
    out[..., 1, 1] = kin.l2 * c12
    return out


def inverse(kin: Kinematics, x, elbow: float = 1.0) -> np.ndarray:
    """Joint configuration placing the end effector at ``x``.

    For the two-link arm ``elbow`` picks the branch (+1 elbow-down, -1 up).
    """
    x = np.asarray(x, dtype=float)
    if kin.kind == "identity":
        return x[: kin.dim].copy()
    r2 = float(x @ x)
    c2 = (r2 - kin.l1**2 - kin.l2**2) / (2 * kin.l1 * kin.l2)
    if abs(c2) > 1.0:
        raise ValueError(f"target {x} outside the workspace")
    q2 = elbow * np.arccos(c2)
    q1 = np.arctan2(x[1], x[0]) - np.arctan2(kin.l2 * np.sin(q2), kin.l1 + kin.l2 * np.cos(q2))
    return np.array([q1, q2])
