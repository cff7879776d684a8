"""Command-line interface: ``motorplan <command> [options]``.

Exit codes: 0 success, 1 usage/config/IO error, 2 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .csvio import fmt, write_csv
from .errors import (ConfigError, ConstraintInfeasible, DegenerateRegression, MotorPlanError,
                     MovementIncomplete)

log = logging.getLogger("motorplan")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _common(p):
    p.add_argument("--config", help="TOML configuration file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="random seed (default: rollout.seed)")
    p.add_argument("--out", help="output directory (default: output.directory or $MOTORPLAN_OUT)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="motorplan", description="Human motor-control trajectory planning toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="optimal plan toward a goal")
    _common(p)
    p.add_argument("--goal", help="goal position x,y[,z]")
    p.add_argument("--width", type=float, help="goal radius sqrt(W) in m")

    p = sub.add_parser("rollout", help="noisy open-loop executions of a plan")
    _common(p)
    p.add_argument("--goal")
    p.add_argument("--width", type=float)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("fitts", help="movement time over a width x distance grid")
    _common(p)
    p.add_argument("--widths")
    p.add_argument("--distances")
    p.add_argument("--trials", type=int, default=0, help="rollouts per cell (0: mean plan)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("estimate", help="goal estimation from an observed state")
    _common(p)
    p.add_argument("--true-goal", help="goal of the observed (noiseless) movement")
    p.add_argument("--t-obs", type=float, help="observation time in s")

    p = sub.add_parser("transition", help="transition-point model")
    tsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = tsub.add_parser("generate", help="simulation surrogate dataset")
    _common(q)
    q.add_argument("--trials", type=int)
    q.add_argument("--jobs", type=int, default=1)
    q = tsub.add_parser("fit", help="fit the GP to a CSV dataset")
    _common(q)
    q.add_argument("--data", required=True)
    q = tsub.add_parser("predict", help="predict transition distance")
    _common(q)
    q.add_argument("--model", required=True)
    q.add_argument("--distance", required=True, help="goal distance(s) in m, comma separated")
    q.add_argument("--width", required=True, help="goal width(s) in m, comma separated")

    p = sub.add_parser("scenario", help="co-manipulation simulations")
    ssub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = ssub.add_parser("sync", help="synchronization with goal estimation")
    _common(q)
    q.add_argument("--true-goal")
    q.add_argument("--t-obs", type=float)
    q = ssub.add_parser("handover", help="authority handover")
    _common(q)
    q.add_argument("--policy", required=True, choices=("high_stiff", "switch_90", "switch_60", "switch_opt"))
    q.add_argument("--model", help="transition model file (generated from the config if omitted)")
    return ap


class Context:
    def __init__(self, args):
        self.args = args
        self.cfg = config_mod.load_config(args.config)
        self.seed = self.cfg.rollout.seed if args.seed is None else args.seed
        if self.seed < 0:
            raise UsageError("--seed must be nonnegative")
        self.out = Path(args.out) if args.out else self.cfg.output_dir()
        self.svg = "svg" in self.cfg.output.formats

    def path(self, name) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _start_state(cfg, plant):
    from .dynamics import StateGaussian
    from .kinematics import inverse

    start = np.asarray(cfg.cost.start, dtype=float)
    q0 = start if plant.kinematics.is_linear else inverse(plant.kinematics, start)
    return StateGaussian.at_rest(np.concatenate([q0, np.zeros(plant.n_q - q0.size)]))


def _goal(ctx, text, width=None):
    center = ctx.cfg.cost.goal if text is None else _floats(text)
    if len(center) != len(ctx.cfg.cost.goal):
        raise UsageError(f"goal needs {len(ctx.cfg.cost.goal)} coordinates")
    return ctx.cfg.goal_spec(center, width)


def _status(converged: bool, message: str) -> int:
    print(f"status: {'converged' if converged else 'not converged'} ({message})")
    return EXIT_OK if converged else EXIT_NUMERIC


# commands ---------------------------------------------------------------

def cmd_plan(ctx) -> int:
    from .kinematics import forward
    from .planner import plan
    from .reward import expected_reward

    cfg = ctx.cfg
    plant = cfg.plant_model()
    goal = _goal(ctx, ctx.args.goal, ctx.args.width)
    cost = cfg.cost_params(goal)
    result = plan(_start_state(cfg, plant), plant, cost, cfg.solver_opts(), n_starts=cfg.solver.n_starts)
    n = plant.n_q
    means = result.means
    ee = forward(plant.kinematics, means[:, :n])
    speed = np.linalg.norm(np.gradient(ee, cost.step, axis=0), axis=1)
    jac_cov = [_ee_cov(plant, s) for s in result.states]
    reward = np.array([expected_reward(x, s, goal) for x, s in zip(ee, jac_cov)])
    cum = np.cumsum(cost.discount ** np.arange(len(reward)) * reward)
    torques = np.vstack([result.torques, np.zeros((1, n))])
    dim = ee.shape[1]
    header = (["step", "time_s"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)]
              + [f"ee{i}" for i in range(dim)] + ["speed"] + [f"torque{i}" for i in range(n)]
              + ["reward", "cum_discounted_reward"])
    rows = [[k, k * cost.step, *means[k, :n], *means[k, n:], *ee[k], speed[k], *torques[k], reward[k], cum[k]]
            for k in range(len(means))]
    write_csv(ctx.path("plan.csv"), header, rows)
    if ctx.svg:
        from .svg import line_plot

        t = np.arange(len(means)) * cost.step
        line_plot(ctx.path("plan.svg"), [("speed", t, speed)], "End-effector speed", "time [s]", "speed [m/s]")
    print(f"objective: {fmt(result.objective)}  iterations: {result.iterations}")
    return _status(result.converged, result.message)


def _ee_cov(plant, state):
    from .kinematics import jacobian

    n = plant.n_q
    j = jacobian(plant.kinematics, state.mean[:n])
    return j @ state.cov[:n, :n] @ j.T


def cmd_rollout(ctx) -> int:
    from .planner import plan
    from .rollout import dispersion_profile, endpoint_stats, rollout

    cfg = ctx.cfg
    plant = cfg.plant_model()
    goal = _goal(ctx, ctx.args.goal, ctx.args.width)
    cost = cfg.cost_params(goal)
    trials = ctx.args.trials or cfg.rollout.trials
    if trials < 2:
        raise UsageError("--trials must be at least 2")
    result = plan(_start_state(cfg, plant), plant, cost, cfg.solver_opts(), n_starts=cfg.solver.n_starts)
    ens = rollout(result, plant, trials, ctx.seed)
    stats = endpoint_stats(ens, goal)
    prof = dispersion_profile(ens)
    dim = ens.ee_paths.shape[2]
    write_csv(ctx.path("rollout_endpoints.csv"), ["trial"] + [f"ee{i}" for i in range(dim)],
              [[k, *stats.samples[k]] for k in range(trials)])
    write_csv(ctx.path("dispersion.csv"), ["step", "time_s", "dispersion_m"],
              [[k, k * cost.step, prof[k]] for k in range(len(prof))])
    lines = [f"trials = {trials}", f"seed = {ctx.seed}", f"hit_rate = {fmt(stats.hit_rate)}",
             "fitted_mean = " + " ".join(fmt(v) for v in stats.fitted_mean),
             "fitted_cov = " + " ".join(fmt(v) for v in stats.fitted_cov.ravel()),
             f"dispersion_argmax_step = {int(np.argmax(prof))}"]
    ctx.path("rollout_summary.txt").write_text("\n".join(lines) + "\n")
    if ctx.svg:
        from .svg import line_plot

        line_plot(ctx.path("dispersion.svg"), [("dispersion", np.arange(len(prof)) * cost.step, prof)],
                  "Position dispersion", "time [s]", "std [m]")
    print("\n".join(lines))
    return _status(result.converged, result.message)


def cmd_fitts(ctx) -> int:
    from scipy.stats import spearmanr

    from .analysis import fitts_fit, fitts_sweep

    cfg = ctx.cfg
    plant = cfg.plant_model()
    widths = _floats(ctx.args.widths) if ctx.args.widths else cfg.cost.widths
    distances = _floats(ctx.args.distances) if ctx.args.distances else cfg.cost.distances
    failures = []
    data = fitts_sweep(widths, distances, plant, cfg.cost_params(), ctx.args.trials, ctx.seed,
                       start=cfg.cost.start, opts=cfg.solver_opts(), jobs=max(1, ctx.args.jobs),
                       failures=failures, threshold=cfg.rollout.speed_threshold)
    write_csv(ctx.path("fitts.csv"), ["distance_m", "width_m", "id_bits", "mt_s"],
              [[d.distance, d.width, d.index_of_difficulty, d.movement_time] for d in data])
    for w, d, exc in failures:
        print(f"cell W={w} D={d} failed: {exc}", file=sys.stderr)
    try:
        a, b, r2 = fitts_fit(data)
    except DegenerateRegression as exc:
        ctx.path("fitts_fit.txt").write_text(f"fit refused: {exc}\n")
        print(f"fit refused: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rho = spearmanr([d.index_of_difficulty for d in data], [d.movement_time for d in data])[0]
    lines = [f"a = {fmt(a)}", f"b = {fmt(b)}", f"r_squared = {fmt(r2)}", f"spearman_rho = {fmt(rho)}",
             f"cells = {len(data)}", f"failed_cells = {len(failures)}"]
    ctx.path("fitts_fit.txt").write_text("\n".join(lines) + "\n")
    if ctx.svg:
        from .svg import line_plot

        pts = sorted(data, key=lambda d: d.index_of_difficulty)
        ids = np.array([d.index_of_difficulty for d in pts])
        line_plot(ctx.path("fitts.svg"),
                  [("MT", ids, [d.movement_time for d in pts]), ("fit", ids, a + b * ids)],
                  "Fitts' law", "ID [bits]", "movement time [s]", markers=True)
    print("\n".join(lines))
    return EXIT_NUMERIC if failures else EXIT_OK


def cmd_estimate(ctx) -> int:
    from .kinematics import forward
    from .planner import Observation, estimate_goal, plan

    cfg = ctx.cfg
    plant = cfg.plant_model()
    prior = cfg.goal_spec()
    cost = cfg.cost_params(prior)
    true = _goal(ctx, ctx.args.true_goal)
    t_obs = ctx.args.t_obs if ctx.args.t_obs is not None else cfg.scenario.t_obs
    state0 = _start_state(cfg, plant)
    opts = cfg.solver_opts()
    truth = plan(state0, plant, cost.with_goal(true), opts, n_starts=cfg.solver.n_starts)
    obs = Observation(truth.means[Observation(None, t_obs).index(cost.step)], t_obs)
    try:
        est, g_hat = estimate_goal(state0, obs, prior, plant, cost, opts, cfg.solver.regularizer,
                                   strict=True, method=cfg.solver.constraint_method)
    except ConstraintInfeasible as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    n = plant.n_q
    ee_est = forward(plant.kinematics, est.means[:, :n])
    ee_true = forward(plant.kinematics, truth.means[:, :n])
    dim = ee_est.shape[1]
    write_csv(ctx.path("estimate.csv"),
              ["step", "time_s"] + [f"est_ee{i}" for i in range(dim)] + [f"obs_ee{i}" for i in range(dim)],
              [[k, k * cost.step, *ee_est[k], *ee_true[k]] for k in range(len(ee_est))])
    residual = float(np.max(np.abs(est.means[obs.index(cost.step)] - obs.state)))
    lines = ["estimated_goal = " + " ".join(fmt(v) for v in g_hat),
             "true_goal = " + " ".join(fmt(v) for v in true.center),
             f"error_m = {fmt(np.linalg.norm(g_hat - true.center))}",
             f"constraint_residual = {fmt(residual)}"]
    ctx.path("estimate.txt").write_text("\n".join(lines) + "\n")
    if ctx.svg:
        from .svg import line_plot

        line_plot(ctx.path("estimate.svg"), [("estimated", ee_est[:, 0], ee_est[:, 1]),
                                              ("observed movement", ee_true[:, 0], ee_true[:, 1])],
                  "Estimated vs observed path", "x [m]", "y [m]")
    print("\n".join(lines))
    return _status(est.converged, est.message)


def _generate(ctx, trials=None):
    from .transition import generate_transition_data

    cfg = ctx.cfg
    plant = cfg.plant_model()
    t = cfg.transition
    degenerate = []
    samples = generate_transition_data(plant, cfg.cost_params(), t.distances, t.widths,
                                       trials or t.trials, ctx.seed, cfg.plant.arm_length,
                                       start=cfg.cost.start, opts=cfg.solver_opts(), degenerate=degenerate)
    return samples, degenerate


def _fit(cfg, samples):
    from .transition import KernelOpts, gp_fit

    return gp_fit(samples, KernelOpts(noise_var=cfg.transition.noise_var, optimize=cfg.transition.optimize))


def cmd_transition(ctx) -> int:
    from .transition import gp_predict, load_model, read_samples, save_model, write_samples

    action = ctx.args.action
    if action == "generate":
        samples, degenerate = _generate(ctx, ctx.args.trials)
        write_samples(ctx.path("transition.csv"), samples)
        print(f"samples = {len(samples)}  degenerate_cells = {len(degenerate)}")
        return EXIT_OK
    if action == "fit":
        model = _fit(ctx.cfg, read_samples(ctx.args.data))
        save_model(model, ctx.path("transition_model.toml"))
        print("kernel = " + " ".join(f"{k}={v}" for k, v in model.kernel.items()))
        return EXIT_OK
    model = load_model(ctx.args.model)
    dists, widths = _floats(ctx.args.distance), _floats(ctx.args.width)
    if len(dists) != len(widths):
        if len(widths) == 1:
            widths = widths * len(dists)
        else:
            raise UsageError("--distance and --width need the same number of entries")
    arm = ctx.cfg.plant.arm_length
    mean, var = gp_predict(model, np.array(dists) / arm, np.array(widths))
    rows = [[d / arm, w, m, v] for d, w, m, v in zip(dists, widths, mean, var)]
    write_csv(ctx.path("transition_predict.csv"), ["norm_distance", "width", "transition_distance", "variance"], rows)
    for r in rows:
        print(" ".join(fmt(v) for v in r))
    return EXIT_OK


def _scenario_csv(ctx, name, report):
    dim = report.human_traj.shape[1]
    header = (["time_s"] + [f"human_ee{i}" for i in range(dim)] + [f"robot_ee{i}" for i in range(dim)]
              + [f"stiffness{i}" for i in range(dim)] + [f"force{i}" for i in range(dim)] + ["work_J"])
    rows = [[t, *report.human_traj[k], *report.robot_traj[k], *report.stiffness[k], *report.force[k],
             report.work[k]] for k, t in enumerate(report.time)]
    write_csv(ctx.path(f"{name}.csv"), header, rows)
    if ctx.svg:
        from .svg import line_plot

        line_plot(ctx.path(f"{name}.svg"), [("sync error", report.time, report.sync_error),
                                            ("work", report.time, report.work)],
                  name.replace("_", " "), "time [s]", "error [m] / work [J]")


def cmd_scenario(ctx) -> int:
    from .scenarios import scenario_handover, scenario_sync

    cfg = ctx.cfg
    params = cfg.scenario_params()
    if ctx.args.action == "sync":
        plant, prior, cost = cfg.sync_setup()
        true = _floats(ctx.args.true_goal) if ctx.args.true_goal else cfg.scenario.sync_true_goal
        if len(true) != 3:
            raise UsageError("--true-goal needs x,y,z")
        rep = scenario_sync(true, prior, plant, cost, ctx.seed, ctx.args.t_obs, params=params,
                            opts=cfg.solver_opts())
        _scenario_csv(ctx, "scenario_sync", rep)
        lines = ["estimated_goal = " + " ".join(fmt(v) for v in rep.info["estimated_goal"]),
                 f"constraint_residual = {fmt(rep.info['residual'])}",
                 f"max_sync_error_xy_m = {fmt(rep.sync_error_xy.max())}",
                 f"max_sync_error_z_m = {fmt(rep.sync_error_z.max())}",
                 f"finish_time_human_s = {fmt(rep.finish_time_human)}",
                 f"finish_time_robot_s = {fmt(rep.finish_time_robot)}",
                 f"interaction_work_J = {fmt(rep.interaction_work)}"]
        ctx.path("scenario_sync.txt").write_text("\n".join(lines) + "\n")
        print("\n".join(lines))
        ok = rep.info["residual"] < cfg.solver.constraint_tol
        return _status(ok, f"constraint residual {rep.info['residual']:.3g}")

    from .transition import load_model

    plant = cfg.plant_model()
    if not plant.kinematics.is_linear:
        raise UsageError("the handover scenario needs a point-mass plant")
    if ctx.args.model:
        model = load_model(ctx.args.model)
    elif ctx.args.policy in ("switch_opt", "high_stiff"):
        samples, _ = _generate(ctx)
        model = _fit(cfg, samples)
    else:
        model = None
    true = cfg.goal_spec(cfg.scenario.handover_goal)
    rep = scenario_handover(true, cfg.cost.start, model, ctx.args.policy, plant, cfg.cost_params(), ctx.seed,
                            params, cfg.solver_opts())
    name = f"scenario_handover_{ctx.args.policy}"
    _scenario_csv(ctx, name, rep)
    lines = [f"policy = {ctx.args.policy}", f"transition_time_s = {fmt(rep.transition_time)}",
             f"trigger_distance_m = {fmt(rep.info['trigger_distance'])}",
             f"total_time_s = {fmt(rep.finish_time_human)}", f"robot_finish_time_s = {fmt(rep.finish_time_robot)}",
             f"interaction_work_J = {fmt(rep.interaction_work)}",
             f"final_error_m = {fmt(np.linalg.norm(rep.human_traj[-1] - true.center))}"]
    ctx.path(f"{name}.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return _status(bool(np.isfinite(rep.finish_time_human)), "object settled at the goal"
                   if np.isfinite(rep.finish_time_human) else "object never settled at the goal")


COMMANDS = {"plan": cmd_plan, "rollout": cmd_rollout, "fitts": cmd_fitts, "estimate": cmd_estimate,
            "transition": cmd_transition, "scenario": cmd_scenario}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](Context(args))
    except (ConfigError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MovementIncomplete, MotorPlanError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
