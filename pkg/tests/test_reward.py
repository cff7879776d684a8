import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from motorplan import GoalSpec, expected_reward, expected_reward_grad, reward_density
from motorplan.errors import IllConditioned, InvalidGoal


def random_spd(rng, n, lo, hi):
    q = np.linalg.qr(rng.normal(size=(n, n)))[0]
    return q @ np.diag(rng.uniform(lo, hi, n) ** 2) @ q.T


def test_density_peak_1d():
    g = GoalSpec([0.0], [[0.03**2]])
    assert np.isclose(reward_density([0.0], g), (2 * np.pi * 0.03**2) ** -0.5, rtol=1e-14)


def test_density_vanishes_far_away():
    g = GoalSpec.isotropic([0.0, 0.0], 0.02)
    assert reward_density([10.0, 0.0], g) == 0.0


def test_density_matches_scalar_pdf():
    g = GoalSpec([0.0], [[0.04**2]])
    assert np.isclose(reward_density([0.04], g), norm.pdf(0.04, 0, 0.04), rtol=1e-14)


def test_density_matches_multivariate_pdf(rng):
    w = random_spd(rng, 3, 0.01, 0.05)
    c, x = rng.normal(size=3) * 0.1, rng.normal(size=3) * 0.1
    assert np.isclose(reward_density(x, GoalSpec(c, w)), multivariate_normal(c, w).pdf(x), rtol=1e-12)


def test_width_must_be_spd():
    with pytest.raises(InvalidGoal):
        GoalSpec([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(InvalidGoal):
        GoalSpec([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(InvalidGoal):
        GoalSpec([0.0, 0.0], np.eye(3))


def test_expected_reward_deterministic_state(rng):
    g = GoalSpec.isotropic([0.3, 0.0], 0.02)
    mu = np.array([0.31, -0.01])
    assert np.isclose(expected_reward(mu, np.zeros((2, 2)), g), reward_density(mu, g), rtol=1e-14)


def test_expected_reward_at_center(rng):
    g = GoalSpec.isotropic([0.3, 0.0], 0.02)
    s = random_spd(rng, 2, 0.001, 0.03)
    assert np.isclose(expected_reward(g.center, s, g), np.linalg.det(2 * np.pi * (s + g.width)) ** -0.5)


def test_expected_reward_quadrature_example():
    g = GoalSpec([0.0], [[0.03**2]])
    mu, sd = 0.1, 0.02
    f = lambda x: norm.pdf(x, 0.0, 0.03) * norm.pdf(x, mu, sd)
    quad = integrate.quad(f, -0.2, 0.4, epsabs=1e-13, epsrel=1e-13, points=[0.0, mu], limit=200)[0]
    assert abs(expected_reward([mu], [[sd**2]], g) - quad) < 1e-10


def test_singular_sum_reports_condition():
    g = GoalSpec([0.0], [[1e-20]])
    with pytest.raises(IllConditioned, match="condition"):
        expected_reward([0.0], [[-1e-20]], g)


def numeric_grads(mu, s, g, h=1e-7):
    gm = np.zeros_like(mu)
    for i in range(mu.size):
        e = np.zeros_like(mu)
        e[i] = h
        gm[i] = (expected_reward(mu + e, s, g) - expected_reward(mu - e, s, g)) / (2 * h)
    gs = np.zeros_like(s)
    for i in range(s.shape[0]):
        for j in range(s.shape[1]):
            e = np.zeros_like(s)
            e[i, j] = h
            gs[i, j] = (expected_reward(mu, s + e, g) - expected_reward(mu, s - e, g)) / (2 * h)
    return gm, gs


def test_gradient_matches_finite_differences(rng):
    for dim in (1, 2, 3):
        for _ in range(5):
            g = GoalSpec(rng.normal(size=dim) * 0.1, random_spd(rng, dim, 0.02, 0.05))
            s = random_spd(rng, dim, 0.01, 0.04)
            mu = g.center + rng.normal(size=dim) * 0.04
            gm, gs = expected_reward_grad(mu, s, g)[1:]
            fm, fs = numeric_grads(mu, s, g)
            assert np.linalg.norm(gm - fm) < 1e-5 * np.linalg.norm(fm)
            # the analytic matrix gradient is symmetric; finite differences of a
            # general perturbation see the same directional derivative
            assert np.linalg.norm(gs - fs) < 1e-5 * np.linalg.norm(fs)


def test_gradient_vanishes_at_center(rng):
    g = GoalSpec.isotropic([0.3, 0.1], 0.02)
    _, gm, gs = expected_reward_grad(g.center, random_spd(rng, 2, 0.01, 0.03), g)
    assert np.array_equal(gm, np.zeros(2))
    assert np.trace(gs) < 0


def test_value_consistent_with_grad_call(rng):
    g = GoalSpec.isotropic([0.3, 0.1], 0.02)
    s = random_spd(rng, 2, 0.01, 0.03)
    assert expected_reward_grad([0.31, 0.1], s, g)[0] == expected_reward([0.31, 0.1], s, g)


def test_batched_evaluation(rng):
    g = GoalSpec.isotropic([0.3, 0.1], 0.02)
    mus = g.center + rng.normal(size=(6, 2)) * 0.02
    ss = np.array([random_spd(rng, 2, 0.005, 0.03) for _ in range(6)])
    batch = expected_reward(mus, ss, g)
    assert np.allclose(batch, [expected_reward(m, s, g) for m, s in zip(mus, ss)], rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(0.0, 2 * np.pi), st.floats(0.0, 0.05), st.floats(0.001, 0.1))
def test_monotone_in_distance(sig, phi, w, r):
    g = GoalSpec.isotropic([0.0, 0.0], 0.01 + w)
    s = sig**2 * np.eye(2)
    ray = np.array([np.cos(phi), np.sin(phi)])
    assert expected_reward(r * ray, s, g) < expected_reward(0.5 * r * ray, s, g)


def test_uncertainty_penalty_at_peak():
    g = GoalSpec.isotropic([0.3, 0.0], 0.02)
    vals = [expected_reward(g.center, c * np.eye(2), g) for c in np.linspace(0.0, 1e-3, 20)]
    assert np.all(np.diff(vals) < 0)


def test_normalized_over_mean():
    g = GoalSpec([0.0], [[0.02**2]])
    total = integrate.quad(lambda m: expected_reward([m], [[0.01**2]], g), -1.0, 1.0,
                           points=[0.0], epsabs=1e-12, limit=200)[0]
    assert abs(total - 1.0) < 1e-9
