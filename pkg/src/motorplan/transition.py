"""Gaussian-process model of the ballistic-to-corrective transition point.

Inputs are ``(norm_distance, width)`` and the output is the distance from
the goal at which the transition happens.  The kernel is squared
exponential with one length scale per input,

    k(x, x') = s2 * exp(-1/2 sum_j (x_j - x'_j)^2 / l_j^2),

plus ``noise_var`` on the diagonal.  The prior mean is the constant sample
mean of the training outputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .csvio import read_csv, write_csv
from .errors import ConfigError, IllConditionedGram, MotorPlanError
from .solver import SolverOpts, minimize

log = logging.getLogger(__name__)

CSV_HEADER = ["norm_distance", "width", "transition_distance"]
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class TransitionSample:
    norm_distance: float
    width: float
    transition_distance: float

    def __post_init__(self):
        if min(self.norm_distance, self.width, self.transition_distance) <= 0:
            raise ValueError("transition sample fields must be positive")


@dataclass
class KernelOpts:
    signal_var: float | None = None       # None: initialize from the data
    length_scales: tuple | None = None
    noise_var: float = 1e-6
    optimize: bool = True
    max_iters: int = 200


@dataclass
class TransitionModel:
    samples: list
    signal_var: float
    length_scales: np.ndarray
    noise_var: float
    mean_const: float
    jitter: float = 0.0
    _x: np.ndarray = field(default=None, repr=False)
    _chol: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    @property
    def kernel(self) -> dict:
        return {"signal_var": self.signal_var, "length_scales": list(map(float, self.length_scales)),
                "noise_var": self.noise_var}


def _inputs(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([[s.norm_distance, s.width] for s in samples], dtype=float)
    y = np.array([s.transition_distance for s in samples], dtype=float)
    return x, y


def se_kernel(a, b, signal_var, length_scales) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) / np.asarray(length_scales)
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _factor(k, noise_var):
    n = len(k)
    for jitter in JITTERS:
        try:
            return cho_factor(k + (noise_var + jitter) * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedGram("kernel Gram matrix is not positive definite even with 1e-4 jitter",
                             float(np.linalg.cond(k + noise_var * np.eye(n))))


def log_marginal_likelihood(x, y, signal_var, length_scales, noise_var, grad: bool = False):
    """LML of centered targets; with ``grad`` also d LML / d log(s2, l1, l2, noise)."""
    k = se_kernel(x, x, signal_var, length_scales)
    (c, low), jitter = _factor(k, noise_var)
    alpha = cho_solve((c, low), y)
    n = len(y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(c))) - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return float(lml)
    inner = np.outer(alpha, alpha) - cho_solve((c, low), np.eye(n))
    grads = [0.5 * np.sum(inner * k)]
    for j, lj in enumerate(length_scales):
        dj = (x[:, None, j] - x[None, :, j]) ** 2 / lj**2
        grads.append(0.5 * np.sum(inner * k * dj))
    grads.append(0.5 * np.trace(inner) * noise_var)
    return float(lml), np.array(grads)


def gp_fit(samples, kernel_opts: KernelOpts | None = None) -> TransitionModel:
    """Fit the GP; hyperparameters maximize the log marginal likelihood unless fixed."""
    opts = kernel_opts or KernelOpts()
    samples = list(samples)
    if len(samples) < 2:
        raise MotorPlanError("a transition model needs at least two samples")
    x, y = _inputs(samples)
    mean_const = float(y.mean())
    yc = y - mean_const
    s2 = opts.signal_var if opts.signal_var is not None else max(float(yc.var()), 1e-8)
    if opts.length_scales is not None:
        ls = np.asarray(opts.length_scales, dtype=float)
    else:
        spread = np.ptp(x, axis=0)
        ls = np.where(spread > 0, spread, 1.0)
    noise = float(opts.noise_var)
    if opts.optimize and len(samples) >= 3:
        theta0 = np.log(np.concatenate([[s2], ls, [noise]]))
        # box in log space around the data scales; outside it the objective is infinite
        scale = np.log(np.concatenate([[s2], ls, [s2]]))
        lo = scale + np.log([1e-6, 1e-3, 1e-3, 1e-12])
        hi = scale + np.log([1e6, 1e3, 1e3, 1e2])
        theta0 = np.clip(theta0, lo, hi)

        def fun(theta):
            if np.any(theta < lo) or np.any(theta > hi):
                return np.inf, np.zeros_like(theta)
            p = np.exp(theta)
            try:
                val, g = log_marginal_likelihood(x, yc, p[0], p[1:3], p[3], grad=True)
            except IllConditionedGram:
                return np.inf, np.zeros_like(theta)
            return -val, -g

        theta, info = minimize(fun, theta0, SolverOpts(max_iters=opts.max_iters, grad_tol=1e-8))
        if np.isfinite(info.f) and info.f <= fun(theta0)[0]:
            s2, ls, noise = float(np.exp(theta[0])), np.exp(theta[1:3]), float(np.exp(theta[3]))
        log.debug("gp hyperparameters after %d iterations: %s", info.iterations, info.message)
    return _build(samples, s2, ls, noise, mean_const)


def _build(samples, s2, ls, noise, mean_const) -> TransitionModel:
    x, y = _inputs(samples)
    chol, jitter = _factor(se_kernel(x, x, s2, ls), noise)
    alpha = cho_solve(chol, y - mean_const)
    return TransitionModel(samples, float(s2), np.asarray(ls, dtype=float), float(noise), mean_const,
                           jitter, x, chol, alpha)


def gp_predict(model: TransitionModel, norm_distance, width):
    """Posterior mean and variance (latent function, no observation noise)."""
    q = np.column_stack([np.atleast_1d(np.asarray(norm_distance, float)),
                         np.atleast_1d(np.asarray(width, float))])
    ks = se_kernel(q, model._x, model.signal_var, model.length_scales)
    mean = model.mean_const + ks @ model._alpha
    v = cho_solve(model._chol, ks.T)
    var = np.maximum(model.signal_var - np.sum(ks * v.T, axis=1), 0.0)
    if np.ndim(norm_distance) == 0 and np.ndim(width) == 0:
        return float(mean[0]), float(var[0])
    return mean, var


def generate_transition_data(plant, cost_template, distance_grid, width_grid, trials: int,
                             seed: int = 0, arm_length: float = 0.6, start=None, direction=None,
                             opts=None, degenerate: list | None = None):
    """Simulation surrogate for the transition dataset.

    For each (distance, width) cell: plan, roll out ``trials`` noisy
    executions, take the step of largest position dispersion and record the
    distance from the goal of the mean path at that step.  Cells without any
    dispersion are excluded (and listed in ``degenerate`` when given).
    """
    from .dynamics import StateGaussian
    from .kinematics import forward, inverse
    from .planner import plan
    from .reward import GoalSpec
    from .rollout import dispersion_profile, rollout

    kin = plant.kinematics
    start = np.zeros(kin.dim) if start is None else np.asarray(start, dtype=float)
    direction = np.eye(kin.dim)[0] if direction is None else np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    q0 = start if kin.is_linear else inverse(kin, start)
    q0 = np.concatenate([q0, np.zeros(plant.n_q - q0.size)])
    state0 = StateGaussian.at_rest(q0)
    out = []
    for d in distance_grid:
        for w in width_grid:
            goal = GoalSpec.isotropic(start + d * direction, w)
            result = plan(state0, plant, cost_template.with_goal(goal), opts)
            ens = rollout(result, plant, trials, seed)
            prof = dispersion_profile(ens)
            td = 0.0
            if prof.max() > 0:
                k = int(np.argmax(prof))
                ee = forward(kin, result.means[k, : plant.n_q])
                td = float(np.linalg.norm(ee - goal.center))
            if prof.max() <= 0 or td <= 0:
                log.info("cell D=%g W=%g has no dispersion peak; excluded", d, w)
                if degenerate is not None:
                    degenerate.append((d, w))
                continue
            out.append(TransitionSample(d / arm_length, w, td))
    return out


def write_samples(path, samples) -> Path:
    return write_csv(path, CSV_HEADER,
                     [(s.norm_distance, s.width, s.transition_distance) for s in samples])


def read_samples(path) -> list:
    header, rows = read_csv(path)
    if [h.strip() for h in header] != CSV_HEADER:
        raise ConfigError(f"{path}: expected header {','.join(CSV_HEADER)}")
    return [TransitionSample(*row) for row in rows]


def save_model(model: TransitionModel, path) -> Path:
    """Persist hyperparameters and samples as TOML; loading re-factorizes."""
    import tomli_w

    doc = {
        "kernel": {**model.kernel, "mean_const": model.mean_const},
        "samples": {
            "norm_distance": [s.norm_distance for s in model.samples],
            "width": [s.width for s in model.samples],
            "transition_distance": [s.transition_distance for s in model.samples],
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tomli_w.dumps(doc))
    return path


def load_model(path) -> TransitionModel:
    from .config import toml_loads

    doc = toml_loads(Path(path).read_text(), str(path))
    try:
        k, s = doc["kernel"], doc["samples"]
        samples = [TransitionSample(*v) for v in zip(s["norm_distance"], s["width"], s["transition_distance"])]
        return _build(samples, k["signal_var"], k["length_scales"], k["noise_var"], k["mean_const"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed transition model ({exc})") from exc
