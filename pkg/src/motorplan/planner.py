"""Single-shooting trajectory optimization of the reward-vs-effort objective.

The decision variables are the ``H x n_q`` torques; states are eliminated by
forward propagation.  The cost minimized is

    J(tau) = sum_{i=0..H} -gamma^i E[R](mu_x_i, Sigma_x_i) + nu * sum_i |tau_i|^2

Propagation over the horizon is written with transfer matrices
``Phi[i, k] = A_{i-1} ... A_{k+1} B_k`` so that the mean, the end-effector
covariance and the reverse-mode gradient are a handful of ``einsum`` calls.
Plants with configuration-dependent inertia or nonlinear kinematics are
handled by sequential linearization around the current mean trajectory.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kinematics as kin_mod
from .dynamics import (
    DiscreteLTI,
    PlantModel,
    StateGaussian,
    linearize_along,
    propagate_trajectory,
    step_nonlinear,
)
from .errors import ConstraintInfeasible, MaxIterationsExceeded, NonFiniteObjective
from .reward import GoalSpec, expected_reward_grad
from .solver import SolverOpts, SolveInfo, minimize


@dataclass(frozen=True)
class CostParams:
    goal: GoalSpec
    discount: float = 0.97
    effort_weight: float = 1e-5
    horizon: int = 30
    step: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0,1]")
        if self.effort_weight < 0:
            raise ValueError("effort_weight must be >= 0")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if self.step <= 0:
            raise ValueError("step must be > 0")

    def with_goal(self, goal: GoalSpec) -> "CostParams":
        return replace(self, goal=goal)


@dataclass
class PlanResult:
    torques: np.ndarray
    states: list
    objective: float
    iterations: int
    grad_norm: float
    wall_time: float
    converged: bool = True
    message: str = ""
    lti_seq: list = field(default_factory=list, repr=False)

    @property
    def means(self) -> np.ndarray:
        return np.array([s.mean for s in self.states])

    @property
    def covs(self) -> np.ndarray:
        return np.array([s.cov for s in self.states])


@dataclass(frozen=True)
class Observation:
    state: np.ndarray
    time: float

    def index(self, h: float) -> int:
        # guard against t/h landing a hair below an integer
        return int(np.floor(self.time / h + 1e-9))


class Transfer:
    """Linear map from torques to the mean trajectory around a fixed linearization."""

    def __init__(self, lti_seq: list[DiscreteLTI], state0: StateGaussian, kin, q_ref):
        horizon = len(lti_seq)
        n2 = state0.mean.size
        n = n2 // 2
        self.n_q = n
        self.horizon = horizon
        self.kin = kin
        psi = np.empty((horizon + 1, n2, n2))
        phi = np.zeros((horizon + 1, horizon, n2, n))
        free = np.empty((horizon + 1, n2))
        psi[0] = np.eye(n2)
        free[0] = state0.mean
        for i, lti in enumerate(lti_seq):
            psi[i + 1] = lti.a @ psi[i]
            free[i + 1] = lti.a @ free[i] + lti.offset
            if i:
                phi[i + 1, :i] = np.einsum("ab,kbc->kac", lti.a, phi[i, :i])
            phi[i + 1, i] = lti.b
        self.phi = phi
        self.free = free
        # flattened views: (H+1, 2n, H*n) so the hot paths are batched matmuls
        self.phi_flat = phi.transpose(0, 2, 1, 3).reshape(horizon + 1, n2, horizon * n)
        q_ref = np.asarray(q_ref, dtype=float)
        self.j_ref = kin_mod.jacobian(kin, q_ref)
        # end-effector response of position to each torque, (H+1, dim, H*n)
        self.p = self.j_ref @ self.phi_flat[:, :n, :]
        cov0 = (psi @ state0.cov @ psi.transpose(0, 2, 1))[:, :n, :n]
        self.sx0 = self.j_ref @ cov0 @ self.j_ref.transpose(0, 2, 1)

    def means(self, torques) -> np.ndarray:
        return self.free + self.phi_flat @ np.ravel(torques)

    def ee_cov(self, torques, kappa, noise_form) -> np.ndarray:
        v = (torques * torques * kappa).ravel()
        sx = self.sx0 + (self.p * v) @ self.p.transpose(0, 2, 1)
        if noise_form == "literal":
            pt = self._per_torque(torques)
            sx = sx + np.einsum("ika,ikc->iac", pt, pt)
        return sx

    def _per_torque(self, torques):
        """End-effector mean response to each individual torque, (H+1, H, dim)."""
        h1, dim, _ = self.p.shape
        pk = self.p.reshape(h1, dim, self.horizon, self.n_q)
        return np.einsum("iakb,kb->ika", pk, torques)

    def backprop_mean(self, g_mean) -> np.ndarray:
        """Gradient wrt torques of a scalar whose gradient wrt the means is ``g_mean``."""
        flat = np.einsum("iam,ia->m", self.phi_flat, g_mean)
        return flat.reshape(self.horizon, self.n_q)

    def backprop_ee_cov(self, g_sx, torques, kappa, noise_form) -> np.ndarray:
        gp = g_sx @ self.p
        gv = np.einsum("iam,iam->m", self.p, gp).reshape(self.horizon, self.n_q)
        g = 2.0 * torques * kappa * gv
        if noise_form == "literal":
            h1, dim, _ = self.p.shape
            pt = self._per_torque(torques)
            gpt = np.einsum("iac,ikc->ika", g_sx, pt)
            pk = self.p.reshape(h1, dim, self.horizon, self.n_q)
            g = g + 2.0 * np.einsum("iakb,ika->kb", pk, gpt)
        return g


def _evaluate(tr: Transfer, torques, plant: PlantModel, cost: CostParams, center=None):
    """Objective value, torque gradient, goal-center gradient and means."""
    center = cost.goal.center if center is None else center
    goal = GoalSpec(center, cost.goal.width) if center is not cost.goal.center else cost.goal
    n = tr.n_q
    kappa = plant.kappa
    mu = tr.means(torques)
    mu_q = mu[:, :n]
    mu_x = kin_mod.forward(tr.kin, mu_q)
    sx = tr.ee_cov(torques, kappa, plant.noise_form)
    r, g_mu_x, g_sx = expected_reward_grad(mu_x, sx, goal)
    disc = cost.discount ** np.arange(tr.horizon + 1)
    f = -float(disc @ r) + cost.effort_weight * float(np.sum(torques * torques))
    w = -disc
    g_mu_x = w[:, None] * g_mu_x
    g_sx = w[:, None, None] * g_sx
    if tr.kin.is_linear:
        j_cur = tr.j_ref
    else:
        j_cur = kin_mod.jacobian(tr.kin, mu_q)
    g_mean = np.zeros_like(mu)
    g_mean[:, :n] = np.einsum("iaq,ia->iq", j_cur, g_mu_x)
    g_tau = tr.backprop_mean(g_mean) + tr.backprop_ee_cov(g_sx, torques, kappa, plant.noise_form)
    g_tau += 2.0 * cost.effort_weight * torques
    g_center = -g_mu_x.sum(axis=0)
    return f, g_tau, g_center, mu


def mean_path(plant: PlantModel, state0: StateGaussian, torques, h: float) -> np.ndarray:
    """Noise-free mean trajectory with the inertia evaluated at the current mean each step."""
    means = [state0.mean]
    for tau in torques:
        means.append(step_nonlinear(plant, means[-1], tau, h))
    return np.array(means)


def forward_states(plant: PlantModel, state0: StateGaussian, torques, h: float):
    """Propagate the Gaussian belief, re-linearizing at the current mean each step."""
    torques = np.asarray(torques, dtype=float)
    q_path = mean_path(plant, state0, torques, h)[:-1, : plant.n_q]
    lti_seq = linearize_along(plant, q_path, h)
    return propagate_trajectory(state0, lti_seq, torques, plant.noise_cov, plant.noise_form), lti_seq


def build_transfer(plant: PlantModel, state0: StateGaussian, torques, h: float, reference=None):
    """Transfer object linearized along ``reference`` (means) or the torques' own mean path."""
    if reference is None:
        reference = mean_path(plant, state0, torques, h)
    q_ref = np.asarray(reference)[:, : plant.n_q]
    lti_seq = linearize_along(plant, q_ref[:-1], h)
    return Transfer(lti_seq, state0, plant.kinematics, q_ref), lti_seq


def objective_and_grad(torques, state0: StateGaussian, plant: PlantModel, cost: CostParams,
                       reference=None):
    """Objective and its torque gradient.

    For nonlinear plants the dynamics and the covariance Jacobians are
    linearized along ``reference`` (an ``(H+1) x 2n_q`` mean trajectory); the
    gradient is exact for that fixed linearization.  Without a reference the
    torques' own mean path is used.
    """
    torques = np.asarray(torques, dtype=float).reshape(cost.horizon, plant.n_q)
    tr, _ = build_transfer(plant, state0, torques, cost.step, reference)
    f, g, _, _ = _evaluate(tr, torques, plant, cost)
    return f, g


def objective(torques, state0: StateGaussian, plant: PlantModel, cost: CostParams, reference=None) -> float:
    return objective_and_grad(torques, state0, plant, cost, reference)[0]


def _continuation(goal: GoalSpec, x0, max_ratio: float = 1.5, factor: float = 4.0) -> list[float]:
    """Width inflation factors, largest first, ending at 1.

    Far from the goal the Gaussian reward is numerically flat, so the solve is
    started on an inflated goal and the width is shrunk back in stages.
    """
    d = np.asarray(x0) - goal.center
    maha = float(np.sqrt(d @ np.linalg.solve(goal.width, d)))
    if maha <= max_ratio:
        return [1.0]
    top = (maha / max_ratio) ** 2
    n_stages = int(np.ceil(np.log(top) / np.log(factor)))
    return [factor**k for k in range(n_stages, 0, -1)] + [1.0]


def _solve_stages(fun_for, x0, scales, opts: SolverOpts):
    """Run the solver over the continuation stages; the last stage uses full tolerance."""
    x = x0
    info = None
    total_iters = 0
    loose = replace(opts, grad_tol=max(opts.grad_tol, 1e-4), max_iters=min(opts.max_iters, 200))
    for k, s in enumerate(scales):
        stage_opts = opts if k == len(scales) - 1 else loose
        x, info = minimize(fun_for(s), x, stage_opts)
        total_iters += info.iterations
    info.iterations = total_iters
    return x, info


def _reach_seeds(tr: Transfer, target_state, horizon: int, n_q: int):
    """Least-norm torque sequences that bring the mean to ``target_state`` in n steps."""
    seeds = []
    for n_steps in range(2, horizon + 1):
        phi = tr.phi_flat[n_steps, :, : n_steps * n_q]
        rhs = target_state - tr.free[n_steps]
        sol, *_ = np.linalg.lstsq(phi, rhs, rcond=None)
        tau = np.zeros((horizon, n_q))
        tau[:n_steps] = sol.reshape(n_steps, n_q)
        seeds.append(tau)
    return seeds


def _goal_state(plant: PlantModel, state0: StateGaussian, goal: GoalSpec) -> np.ndarray:
    kin = plant.kinematics
    q_goal = state0.q.copy()
    if kin.kind == "identity":
        q_goal[: kin.dim] = goal.center
    else:
        try:
            q_goal[:2] = kin_mod.inverse(kin, goal.center, elbow=np.sign(state0.q[1]) or 1.0)
        except ValueError:
            return None
    return np.concatenate([q_goal, np.zeros(plant.n_q)])


def plan(state0: StateGaussian, plant: PlantModel, cost: CostParams, opts: SolverOpts | None = None,
         init=None, strict: bool = False, n_starts: int = 3) -> PlanResult:
    """Optimal open-loop torques from ``state0`` (its covariance is reset to zero).

    Besides the width-continuation path from ``init`` (zeros by default), the
    ``n_starts`` best of a family of goal-reaching seeds (one per arrival
    step) are refined and the lowest objective wins.  All of it is
    deterministic.
    """
    opts = opts or SolverOpts()
    t0 = time.perf_counter()
    n, h, horizon = plant.n_q, cost.step, cost.horizon
    if not np.all(np.isfinite(state0.mean)):
        raise NonFiniteObjective("initial state is not finite")
    state0 = StateGaussian(state0.mean, np.zeros_like(state0.cov))
    tau0 = np.zeros((horizon, n)) if init is None else np.array(init, dtype=float).reshape(horizon, n)
    x0 = kin_mod.forward(plant.kinematics, state0.q)

    reference = mean_path(plant, state0, tau0, h)
    candidates = [(tau0, _continuation(cost.goal, x0))]
    if n_starts > 0:
        tr, _ = build_transfer(plant, state0, tau0, h, reference)
        target = _goal_state(plant, state0, cost.goal)
        if target is not None:
            scored = []
            for seed in _reach_seeds(tr, target, horizon, n):
                f, _, _, _ = _evaluate(tr, seed, plant, cost)
                scored.append((f, seed))
            scored.sort(key=lambda fs: fs[0])
            candidates += [(seed, [1.0]) for _, seed in scored[:n_starts]]

    # screen every candidate on one linearization, then refine only the winner
    best = None
    for tau_init, scales in candidates:
        tau, info, iters = _solve_plan(plant, state0, cost, opts, tau_init, scales, relin=1)
        f = objective(tau, state0, plant, cost)
        if best is None or f < best[0] - 1e-12 * abs(f):
            best = (f, tau, info, iters)
    f, tau, info, iters = best
    if not plant.is_linear:
        tau, info, more = _solve_plan(plant, state0, cost, opts, tau, [1.0])
        iters += more
        f = None
    return _finish(plant, state0, tau, cost, info, iters, t0, strict, f)


def _solve_plan(plant, state0, cost, opts, tau, scales, relin=None):
    n, h, horizon = plant.n_q, cost.step, cost.horizon
    reference = mean_path(plant, state0, tau, h)
    if relin is None:
        relin = 1 if plant.is_linear else opts.relin_max
    iters = 0
    change = 0.0
    for outer in range(relin):
        tr, _ = build_transfer(plant, state0, tau, h, reference)

        def fun_for(s, tr=tr):
            c = cost.with_goal(cost.goal.scaled(s)) if s != 1.0 else cost

            def fun(x):
                f, g, _, _ = _evaluate(tr, x.reshape(horizon, n), plant, c)
                return f, g.ravel()

            return fun

        x, info = _solve_stages(fun_for, tau.ravel(), scales if outer == 0 else [1.0], opts)
        iters += info.iterations
        tau = x.reshape(horizon, n)
        if plant.is_linear:
            break
        new_ref = mean_path(plant, state0, tau, h)
        change = float(np.max(np.abs(new_ref - reference)))
        reference = new_ref
        if change < opts.relin_tol:
            break
    else:
        if relin > 1:
            info.converged = False
            info.message = f"sequential linearization did not settle (change {change:.2e})"
    return tau, info, iters


def _finish(plant, state0, tau, cost, info: SolveInfo, iters, t0, strict, f_value=None):
    states, lti_seq = forward_states(plant, state0, tau, cost.step)
    f = objective(tau, state0, plant, cost) if f_value is None else f_value
    if not np.isfinite(f):
        raise NonFiniteObjective(f"objective is {f}")
    result = PlanResult(tau, states, float(f), iters, info.grad_norm, time.perf_counter() - t0,
                        info.converged, info.message, lti_seq)
    if strict and not info.converged:
        raise MaxIterationsExceeded(info.message, result)
    return result


def goal_regularizer(goal_hat, prior: GoalSpec, form: str = "squared"):
    """Mahalanobis penalty pulling the estimated goal to the prior center, with gradient."""
    d = np.asarray(goal_hat) - prior.center
    wd = np.linalg.solve(prior.width, d)
    sq = float(d @ wd)
    if form == "squared":
        return sq, 2.0 * wd
    if form == "norm":
        # smoothed at zero; 1e-12 m^2 floor keeps the gradient finite
        val = np.sqrt(sq + 1e-12)
        return float(val), wd / val
    raise ValueError(f"unknown regularizer form {form!r}")


def estimate_goal(state0: StateGaussian, obs: Observation, goal_prior: GoalSpec, plant: PlantModel,
                  cost: CostParams, opts: SolverOpts | None = None, regularizer: str = "squared",
                  strict: bool = True, method: str = "eliminate"):
    """Jointly optimize torques and goal so the plan passes through ``obs``.

    ``method="eliminate"`` (default) enforces ``mean[n_o] == obs.state``
    exactly: under a fixed linearization the constrained mean is affine in the
    torques, so the torques are written as a particular solution plus a
    null-space combination and the solver works on the reduced variables.
    ``method="penalty"`` uses an augmented Lagrangian with a geometric penalty
    schedule instead.  Returns ``(PlanResult, estimated_goal)``.
    """
    opts = opts or SolverOpts()
    if method not in ("eliminate", "penalty"):
        raise ValueError(f"unknown constraint method {method!r}")
    t0 = time.perf_counter()
    n, h, horizon = plant.n_q, cost.step, cost.horizon
    n_o = obs.index(h)
    if not (1 <= n_o <= horizon):
        raise ValueError(f"observation time {obs.time} s is outside the horizon (n_o={n_o})")
    target = np.asarray(obs.state, dtype=float)
    if target.shape != state0.mean.shape:
        raise ValueError("observed state has the wrong dimension")
    cost = cost.with_goal(goal_prior)
    state0 = StateGaussian(state0.mean, np.zeros_like(state0.cov))

    warm = plan(state0, plant, cost, opts)
    solve = _estimate_eliminate if method == "eliminate" else _estimate_penalty
    tau, g_hat, info, iters = solve(state0, n_o, target, goal_prior, plant, cost, opts, regularizer,
                                    warm.torques.copy())
    residual = float(np.max(np.abs(mean_path(plant, state0, tau, h)[n_o] - target)))

    est_cost = cost.with_goal(goal_prior.moved(g_hat))
    result = _finish(plant, state0, tau, est_cost, info, iters + warm.iterations, t0, strict=False)
    result.converged = bool(info.converged and residual < opts.constraint_tol)
    if residual >= opts.constraint_tol:
        result.message = f"constraint residual {residual:.3g}"
        if strict:
            raise ConstraintInfeasible(residual, (result, g_hat))
    return result, g_hat


def _joint_fun(tr, plant, cost, goal_prior, regularizer, extra=None):
    """Objective over (torques, goal center) for a fixed linearization."""
    horizon, n = tr.horizon, tr.n_q
    n_tau = horizon * n

    def fun(z):
        t = z[:n_tau].reshape(horizon, n)
        g = z[n_tau:]
        f, g_tau, g_center, mu = _evaluate(tr, t, plant, cost, g)
        reg, g_reg = goal_regularizer(g, goal_prior, regularizer)
        f += reg
        if extra is not None:
            f_x, g_mean = extra(mu)
            f += f_x
            g_tau = g_tau + tr.backprop_mean(g_mean)
        return f, np.concatenate([g_tau.ravel(), g_center + g_reg])

    return fun


def _estimate_eliminate(state0, n_o, target, goal_prior, plant, cost, opts, regularizer, tau):
    n, h, horizon = plant.n_q, cost.step, cost.horizon
    n_tau = horizon * n
    g_hat = goal_prior.center.copy()
    reference = mean_path(plant, state0, tau, h)
    relin = 1 if plant.is_linear else opts.relin_max
    iters = 0
    for _ in range(relin):
        tr, _ = build_transfer(plant, state0, tau, h, reference)
        # constrained mean is free[n_o] + P tau; only the first n_o torques enter
        p = tr.phi_flat[n_o][:, : n_o * n]
        u, sv, vt = np.linalg.svd(p)
        rank = int(np.sum(sv > sv[0] * 1e-12))
        if rank < target.size:
            log_rank = f"observation constraint has rank {rank} < {target.size}"
            raise ConstraintInfeasible(np.inf, log_rank)
        flat = tau.ravel().copy()
        resid = tr.free[n_o] + p @ flat[: n_o * n] - target
        flat[: n_o * n] -= vt[:rank].T @ ((u[:, :rank].T @ resid) / sv[:rank])
        null = vt[rank:].T
        base = flat

        n_null = null.shape[1]
        inner = _joint_fun(tr, plant, cost, goal_prior, regularizer)

        def fun(y):
            tau_flat = base.copy()
            tau_flat[: n_o * n] += null @ y[:n_null]
            tau_flat[n_o * n:] = y[n_null: n_null + n_tau - n_o * n]
            f, g = inner(np.concatenate([tau_flat, y[n_null + n_tau - n_o * n:]]))
            g_t = g[:n_tau]
            return f, np.concatenate([null.T @ g_t[: n_o * n], g_t[n_o * n:], g[n_tau:]])

        y0 = np.concatenate([np.zeros(n_null), base[n_o * n:], g_hat])
        y, info = minimize(fun, y0, opts)
        iters += info.iterations
        tau_flat = base.copy()
        tau_flat[: n_o * n] += null @ y[:n_null]
        tau_flat[n_o * n:] = y[n_null: n_null + n_tau - n_o * n]
        tau = tau_flat.reshape(horizon, n)
        g_hat = y[n_null + n_tau - n_o * n:]
        if plant.is_linear:
            break
        new_ref = mean_path(plant, state0, tau, h)
        change = float(np.max(np.abs(new_ref - reference)))
        reference = new_ref
        if change < opts.relin_tol:
            break
    return tau, g_hat, info, iters


def _estimate_penalty(state0, n_o, target, goal_prior, plant, cost, opts, regularizer, tau):
    n, h, horizon = plant.n_q, cost.step, cost.horizon
    n_tau = horizon * n
    g_hat = goal_prior.center.copy()
    lam = np.zeros_like(target)
    reference = mean_path(plant, state0, tau, h)
    # the penalty is scaled to the objective so that it is felt from the first round
    rho = opts.penalty_start * (1.0 + abs(objective(tau, state0, plant, cost)))
    relin = 1 if plant.is_linear else opts.relin_max
    iters = 0
    info = None
    for _ in range(opts.penalty_rounds):
        for _outer in range(relin):
            tr, _ = build_transfer(plant, state0, tau, h, reference)

            def extra(mu, rho=rho, lam=lam):
                r = mu[n_o] - target
                g_mean = np.zeros_like(mu)
                g_mean[n_o] = lam + rho * r
                return float(lam @ r) + 0.5 * rho * float(r @ r), g_mean

            fun = _joint_fun(tr, plant, cost, goal_prior, regularizer, extra)
            z, info = minimize(fun, np.concatenate([tau.ravel(), g_hat]), opts)
            iters += info.iterations
            tau = z[:n_tau].reshape(horizon, n)
            g_hat = z[n_tau:]
            if plant.is_linear:
                break
            new_ref = mean_path(plant, state0, tau, h)
            change = float(np.max(np.abs(new_ref - reference)))
            reference = new_ref
            if change < opts.relin_tol:
                break
        r = mean_path(plant, state0, tau, h)[n_o] - target
        if float(np.max(np.abs(r))) < opts.constraint_tol:
            break
        lam = lam + rho * r
        rho *= opts.penalty_factor
    return tau, g_hat, info, iters
