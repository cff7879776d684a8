import numpy as np
import pytest

from motorplan import CostParams, GoalSpec, StateGaussian, point_mass, two_link_arm

# planar simulation parameters (defaults of the config)
MASS, DAMPING, KAPPA = 2.0, 0.3, 1e-4
NU, H, STEP, GAMMA = 1e-5, 30, 0.02, 1.0


def planar_plant(kappa=KAPPA, noise_form="corrected"):
    return point_mass(2, MASS, DAMPING, kappa, noise_form)


def planar_cost(center=(0.3, 0.0), width=0.02, discount=GAMMA, horizon=H):
    return CostParams(GoalSpec.isotropic(center, width), discount, NU, horizon, STEP)


def at_rest(q=(0.0, 0.0), qd=None):
    return StateGaussian.at_rest(np.asarray(q, float), None if qd is None else np.asarray(qd, float))


@pytest.fixture
def plant():
    return planar_plant()


@pytest.fixture
def cost():
    return planar_cost()


@pytest.fixture
def arm():
    return two_link_arm(kappa=KAPPA)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log(request):
    log = getattr(request.config, "_acceptance_lines", None)
    if log is None:
        log = request.config._acceptance_lines = []
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1][1:])):
        terminalreporter.write_line(line)
