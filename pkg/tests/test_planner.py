import numpy as np
import pytest
from conftest import STEP, at_rest, planar_cost, planar_plant

from motorplan import (CostParams, GoalSpec, Observation, SolverOpts, StateGaussian, discretize, estimate_goal,
                       expected_reward, forward, jacobian, objective, plan, propagate, two_link_arm)
from motorplan.analysis import velocity_metrics
from motorplan.dynamics import step_nonlinear
from motorplan.errors import ConstraintInfeasible, MaxIterationsExceeded
from motorplan.kinematics import inverse
from motorplan.planner import forward_states, goal_regularizer, objective_and_grad


def reference_objective(torques, state0, plant, cost):
    """Step-by-step composition: nonlinear mean step, covariance through the system
    linearized at the current mean, reward on the linearized end-effector Gaussian."""
    n = plant.n_q
    mean, cov = state0.mean, state0.cov
    total = 0.0
    for i in range(cost.horizon + 1):
        q = mean[:n]
        j = jacobian(plant.kinematics, q)
        r = expected_reward(forward(plant.kinematics, q), j @ cov[:n, :n] @ j.T, cost.goal)
        total -= cost.discount**i * r
        if i < cost.horizon:
            tau = torques[i]
            total += cost.effort_weight * float(tau @ tau)
            lti = discretize(plant, q, cost.step)
            cov = propagate(StateGaussian(mean, cov), lti, tau, plant.noise_cov, plant.noise_form).cov
            mean = step_nonlinear(plant, mean, tau, cost.step)
    return total


def test_cost_params_validation():
    g = GoalSpec.isotropic([0.3, 0.0], 0.02)
    with pytest.raises(ValueError, match=r"discount must lie in \(0,1\]"):
        CostParams(g, discount=1.5)
    for bad in ({"effort_weight": -1.0}, {"horizon": 0}, {"step": 0.0}):
        with pytest.raises(ValueError):
            CostParams(g, **bad)


def test_objective_effort_limit(rng, plant):
    tau = rng.normal(size=(30, 2))
    for nu in (1e6, 1e9):
        cost = CostParams(GoalSpec.isotropic([0.3, 0.0], 0.02), 0.97, nu, 30, STEP)
        val = objective(tau, at_rest(), plant, cost)
        assert np.isclose(val, nu * np.sum(tau**2), rtol=1e3 / nu)


def test_objective_stationary_at_goal(plant):
    cost = planar_cost(center=(0.0, 0.0), discount=0.97)
    val = objective(np.zeros((30, 2)), at_rest(), plant, cost)
    peak = np.linalg.det(2 * np.pi * cost.goal.width) ** -0.5
    assert np.isclose(val, -peak * np.sum(0.97 ** np.arange(31)), rtol=1e-13)


@pytest.mark.parametrize("noise_form", ["corrected", "literal"])
def test_objective_compositional_oracle_linear(rng, noise_form):
    plant = planar_plant(1e-2, noise_form)
    cost = planar_cost(center=(0.2, 0.05), width=0.03, discount=0.97)
    for _ in range(3):
        tau = rng.normal(0.0, 3.0, (30, 2))
        assert np.isclose(objective(tau, at_rest(), plant, cost),
                          reference_objective(tau, at_rest(), plant, cost), rtol=1e-10, atol=1e-10)


def test_objective_compositional_oracle_two_link(rng):
    arm = two_link_arm(kappa=1e-2)
    q0 = np.array([0.3, 1.4])
    cost = planar_cost(center=forward(arm.kinematics, q0) + [0.03, 0.02], width=0.03, discount=0.97)
    for _ in range(3):
        tau = rng.normal(0.0, 0.3, (30, 2))
        assert np.isclose(objective(tau, at_rest(q0), arm, cost),
                          reference_objective(tau, at_rest(q0), arm, cost), rtol=1e-10, atol=1e-10)


def test_gradient_matches_finite_differences(rng, plant):
    cost = planar_cost(center=(0.2, 0.05), width=0.03, discount=0.97)
    tau = rng.normal(0.0, 3.0, (30, 2))
    g = objective_and_grad(tau, at_rest(), plant, cost)[1]
    fd = np.zeros_like(tau)
    for idx in np.ndindex(tau.shape):
        e = np.zeros_like(tau)
        e[idx] = 1e-6
        fd[idx] = (objective(tau + e, at_rest(), plant, cost) - objective(tau - e, at_rest(), plant, cost)) / 2e-6
    assert np.linalg.norm(g - fd) < 1e-5 * np.linalg.norm(fd)


def test_plan_at_goal_is_idle(plant):
    r = plan(at_rest(), plant, planar_cost(center=(0.0, 0.0)))
    assert r.converged
    assert np.max(np.abs(r.torques)) < 1e-4


@pytest.fixture(scope="module")
def default_plan():
    plant, cost = planar_plant(), planar_cost()
    return plant, cost, plan(at_rest(), plant, cost)


def test_plan_converges_with_small_gradient(default_plan):
    plant, cost, r = default_plan
    assert r.converged and r.iterations > 0 and r.wall_time > 0
    f, g = objective_and_grad(r.torques, at_rest(), plant, cost)
    assert np.isclose(f, r.objective, rtol=1e-12)
    assert np.max(np.abs(g)) < 1e-6 * (1 + abs(f))
    assert r.torques.shape == (30, 2) and len(r.states) == 31


def test_plan_states_are_forward_propagation(default_plan):
    plant, cost, r = default_plan
    states, _ = forward_states(plant, at_rest(), r.torques, cost.step)
    for a, b in zip(states, r.states):
        assert np.allclose(a.mean, b.mean, atol=1e-10) and np.allclose(a.cov, b.cov, atol=1e-10)


def test_plan_is_local_minimum(default_plan):
    plant, cost, r = default_plan
    rng = np.random.default_rng(3)
    for _ in range(100):
        pert = r.torques + 1e-3 * rng.normal(size=r.torques.shape)
        assert objective(pert, at_rest(), plant, cost) >= r.objective


def test_plan_resets_initial_covariance(plant, cost):
    noisy = StateGaussian(np.zeros(4), 1e-4 * np.eye(4))
    r = plan(noisy, plant, cost)
    assert np.array_equal(r.states[0].cov, np.zeros((4, 4)))


def test_plan_is_deterministic(plant, cost):
    a, b = plan(at_rest(), plant, cost), plan(at_rest(), plant, cost)
    assert np.array_equal(a.torques, b.torques)


def test_plan_strict_raises_on_iteration_limit(plant, cost):
    with pytest.raises(MaxIterationsExceeded) as exc:
        plan(at_rest(), plant, cost, SolverOpts(max_iters=2), strict=True)
    assert exc.value.result is not None and not exc.value.result.converged


def _mt_and_asymmetry(width, discount=0.97, distance=0.3):
    plant, cost = planar_plant(), planar_cost(center=(distance, 0.0), width=width, discount=discount)
    r = plan(at_rest(), plant, cost)
    m = velocity_metrics(r.means[:, :2], STEP, cost.goal)
    return m.movement_time, m.asymmetry


def test_narrow_goal_takes_longer():
    """gamma = 0.97: movement time for W = 0.02^2 exceeds that for W = 0.04^2."""
    assert _mt_and_asymmetry(0.02)[0] > _mt_and_asymmetry(0.04)[0]


@pytest.mark.xfail(strict=True, reason="open-loop noise accumulation shifts effort late; the W = 0.04 peak "
                                       "falls at 51% of movement time (see README, velocity asymmetry)")
def test_both_velocity_peaks_before_half():
    assert _mt_and_asymmetry(0.02)[1] < 0.5 and _mt_and_asymmetry(0.04)[1] < 0.5


def test_movement_time_orderings():
    widths, distances = [0.005, 0.01, 0.02, 0.04], [0.15, 0.3, 0.45]
    mt = np.array([[_mt_and_asymmetry(w, 1.0, d)[0] for d in distances] for w in widths])
    assert np.all(np.diff(mt, axis=0) <= 0)      # non-increasing in width
    assert np.all(np.diff(mt, axis=1) >= 0)      # non-decreasing in distance


@pytest.mark.parametrize("speed", [0.0, 0.1, 0.3])
def test_start_velocity_robustness(speed, plant, cost):
    r = plan(at_rest(qd=[speed, speed]), plant, cost)
    assert r.converged
    assert np.linalg.norm(r.means[-1, :2] - cost.goal.center) < 0.02


def test_two_link_plan():
    arm = two_link_arm(kappa=1e-4)
    x0 = np.array([0.3, 0.2])
    q0 = inverse(arm.kinematics, x0)
    cost = planar_cost(center=x0 + [0.15, 0.0], width=0.02)
    r = plan(at_rest(q0), arm, cost)
    assert r.converged
    assert np.linalg.norm(forward(arm.kinematics, r.means[-1, :2]) - cost.goal.center) < 0.02
    states, _ = forward_states(arm, at_rest(q0), r.torques, cost.step)
    assert all(np.allclose(a.mean, b.mean, atol=1e-10) for a, b in zip(states, r.states))


# goal estimation -------------------------------------------------------------

def _observe(plant, cost, true_center, t_obs=0.2):
    truth = plan(at_rest(), plant, cost.with_goal(cost.goal.moved(true_center)))
    n_o = Observation(None, t_obs).index(cost.step)
    return Observation(truth.means[n_o], t_obs), n_o


@pytest.mark.xfail(strict=True, reason="the joint objective is minimized about 2.4 mm short of the generating "
                                       "goal; transit reward biases the estimate toward the start (see README)")
def test_estimate_self_consistency(plant, cost):
    obs, _ = _observe(plant, cost, cost.goal.center)
    _, g_hat = estimate_goal(at_rest(), obs, cost.goal, plant, cost)
    assert np.linalg.norm(g_hat - cost.goal.center) < 1e-3


@pytest.mark.parametrize("offset", [(0.028, 0.0), (-0.02, 0.02), (0.0, -0.028)])
def test_estimate_recovers_offset_goal(plant, cost, offset):
    true = cost.goal.center + offset
    obs, n_o = _observe(plant, cost, true)
    est, g_hat = estimate_goal(at_rest(), obs, cost.goal, plant, cost)
    assert np.linalg.norm(g_hat - true) < 0.02
    assert np.max(np.abs(est.means[n_o] - obs.state)) < 1e-6
    assert est.converged


def test_estimate_penalty_method_agrees(plant, cost):
    obs, n_o = _observe(plant, cost, cost.goal.center + [0.02, 0.02])
    _, g_elim = estimate_goal(at_rest(), obs, cost.goal, plant, cost)
    est, g_pen = estimate_goal(at_rest(), obs, cost.goal, plant, cost, method="penalty")
    assert np.max(np.abs(est.means[n_o] - obs.state)) < 1e-6
    assert np.linalg.norm(g_pen - g_elim) < 1e-4


def test_tight_prior_pins_goal(plant, cost):
    obs, _ = _observe(plant, cost, cost.goal.center + [0.02, 0.02])
    tight = GoalSpec.isotropic(cost.goal.center, 1e-4)
    _, g_hat = estimate_goal(at_rest(), obs, tight, plant, cost.with_goal(tight), strict=False)
    assert np.linalg.norm(g_hat - tight.center) < 1e-5


def test_unsquared_regularizer(plant, cost):
    obs, n_o = _observe(plant, cost, cost.goal.center + [0.02, 0.0])
    est, g_hat = estimate_goal(at_rest(), obs, cost.goal, plant, cost, regularizer="norm")
    assert np.max(np.abs(est.means[n_o] - obs.state)) < 1e-6
    assert np.linalg.norm(g_hat - cost.goal.center - [0.02, 0.0]) < 0.02


def test_regularizer_gradients():
    prior = GoalSpec.isotropic([0.3, 0.0], 0.02)
    g = np.array([0.31, -0.005])
    for form in ("squared", "norm"):
        val, grad = goal_regularizer(g, prior, form)
        fd = [(goal_regularizer(g + e, prior, form)[0] - goal_regularizer(g - e, prior, form)[0]) / 2e-7
              for e in 1e-7 * np.eye(2)]
        assert np.allclose(grad, fd, rtol=1e-6)
    assert np.isclose(goal_regularizer(g, prior, "squared")[0], goal_regularizer(g, prior, "norm")[0] ** 2,
                      rtol=1e-9)


def test_unreachable_observation_is_infeasible(plant, cost):
    # one step determines only the velocity; a displaced position cannot be met
    obs = Observation(np.array([0.1, 0.0, 0.0, 0.0]), 0.02)
    with pytest.raises(ConstraintInfeasible):
        estimate_goal(at_rest(), obs, cost.goal, plant, cost)


def test_observation_outside_horizon(plant, cost):
    with pytest.raises(ValueError):
        estimate_goal(at_rest(), Observation(np.zeros(4), 0.7), cost.goal, plant, cost)
    with pytest.raises(ValueError):
        estimate_goal(at_rest(), Observation(np.zeros(4), 0.01), cost.goal, plant, cost)
