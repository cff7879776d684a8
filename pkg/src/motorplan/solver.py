"""Limited-memory BFGS with a backtracking Armijo line search."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteObjective


@dataclass
class SolverOpts:
    grad_tol: float = 1e-6          # relative: stop when |g|_inf < grad_tol * (1 + |f|)
    step_tol: float = 1e-12
    max_iters: int = 500
    memory: int = 20
    constraint_tol: float = 1e-6
    penalty_start: float = 1e2
    penalty_factor: float = 10.0
    penalty_rounds: int = 6
    relin_tol: float = 1e-6
    relin_max: int = 20


@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    evaluations: int
    f: float
    grad_norm: float
    message: str
    history: list = field(default_factory=list)


def minimize(fun, x0, opts: SolverOpts | None = None, grad_tol_abs: float | None = None):
    """Minimize ``fun(x) -> (f, grad)`` starting from ``x0``.

    Stops when the gradient inf-norm drops below ``grad_tol * (1 + |f|)`` (or
    ``grad_tol_abs`` when given), when a step changes ``x`` by less than
    ``step_tol``, or after ``max_iters`` iterations.  A failed line search
    returns the best iterate with ``converged=False``.
    """
    opts = opts or SolverOpts()
    x = np.array(x0, dtype=float).ravel()
    f, g = fun(x)
    n_eval = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective(f"objective not finite at the initial point (f={f})")
    mem_s: deque = deque(maxlen=opts.memory)
    mem_y: deque = deque(maxlen=opts.memory)

    def tol(fv):
        return grad_tol_abs if grad_tol_abs is not None else opts.grad_tol * (1.0 + abs(fv))

    history = [f]
    for it in range(opts.max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < tol(f):
            return x, SolveInfo(True, it, n_eval, f, gnorm, "gradient tolerance reached", history)
        if it == opts.max_iters:
            break
        d = -_two_loop(g, mem_s, mem_y)
        slope = float(g @ d)
        if slope >= 0:
            mem_s.clear()
            mem_y.clear()
            d = -g
            slope = float(g @ d)
        if not mem_s:
            # first step (or after reset): cap the step length to something sane
            d *= min(1.0, 1.0 / max(gnorm, 1e-300))
            slope = float(g @ d)
        alpha, f_new, g_new, n = _backtrack(fun, x, f, d, slope)
        n_eval += n
        if alpha is None:
            if mem_s:
                mem_s.clear()
                mem_y.clear()
                continue
            return x, SolveInfo(False, it, n_eval, f, gnorm, "line search failed", history)
        s = alpha * d
        y = g_new - g
        x = x + s
        f_prev, f, g = f, f_new, g_new
        history.append(f)
        if float(s @ y) > 1e-12 * float(np.sqrt((s @ s) * (y @ y))):
            mem_s.append(s)
            mem_y.append(y)
        if float(np.max(np.abs(s))) < opts.step_tol:
            gnorm = float(np.max(np.abs(g)))
            return x, SolveInfo(bool(gnorm < tol(f)), it + 1, n_eval, f, gnorm, "step tolerance reached", history)
        if f_prev - f <= 1e-15 * abs(f_prev) and float(np.max(np.abs(s))) < 1e-9:
            gnorm = float(np.max(np.abs(g)))
            return x, SolveInfo(bool(gnorm < tol(f)), it + 1, n_eval, f, gnorm, "no progress", history)
    gnorm = float(np.max(np.abs(g)))
    return x, SolveInfo(False, opts.max_iters, n_eval, f, gnorm, "maximum iterations reached", history)


def _two_loop(g, mem_s, mem_y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(mem_s), reversed(mem_y)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((rho, a))
    if mem_s:
        s, y = mem_s[-1], mem_y[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(mem_s, mem_y), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _backtrack(fun, x, f, d, slope, c1=1e-4, max_steps=60):
    """Armijo backtracking with safeguarded quadratic interpolation."""
    alpha = 1.0
    for n in range(1, max_steps + 1):
        f_new, g_new = fun(x + alpha * d)
        if np.isfinite(f_new) and f_new < f and f_new <= f + c1 * alpha * slope:
            denom = 2.0 * (f_new - f - alpha * slope)
            if n == 1 and denom > 0:
                # one interpolation probe; exact line minimization on quadratics
                trial = -slope * alpha * alpha / denom
                if 0.1 <= trial <= 10.0 and abs(trial - 1.0) > 1e-3:
                    f_t, g_t = fun(x + trial * d)
                    n += 1
                    if np.isfinite(f_t) and f_t < f_new:
                        return trial, f_t, g_t, n
            return alpha, f_new, g_new, n
        if np.isfinite(f_new):
            denom = 2.0 * (f_new - f - alpha * slope)
            trial = -slope * alpha * alpha / denom if denom > 0 else 0.5 * alpha
            alpha = float(np.clip(trial, 0.1 * alpha, 0.5 * alpha))
        else:
            alpha *= 0.1
        if alpha * float(np.max(np.abs(d))) < 1e-16:
            break
    return None, f, None, n
