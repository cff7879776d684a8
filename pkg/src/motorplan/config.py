"""Experiment configuration: TOML file, validated, with planar-simulation defaults.

An empty file yields the planar defaults: point mass ``M = 2I``,
``D = 0.3I``, ``sigma_tau = 1e2``, widths 0.005..0.04 m, ``nu = 1e-5``,
``H = 30``, ``h = 0.02``.  Unknown keys are rejected.  The environment
variable ``MOTORPLAN_OUT`` overrides ``output.directory``.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, ParseError, ValidationError

OUT_ENV = "MOTORPLAN_OUT"


def _check(ok: bool, name: str, constraint: str):
    if not ok:
        raise ValidationError(name, constraint)


def _positive(v, name):
    _check(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0,
           name, "must be a positive number")


def _nonneg(v, name):
    _check(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v >= 0,
           name, "must be a nonnegative number")


def _vector(v, name, n=None, check=_nonneg):
    _check(isinstance(v, list) and len(v) > 0, name, "must be a nonempty list of numbers")
    if n is not None:
        _check(len(v) == n, name, f"must have {n} entries")
    for i, x in enumerate(v):
        check(x, f"{name}[{i}]")


def _int(v, name, lo=1):
    _check(isinstance(v, int) and not isinstance(v, bool) and v >= lo, name, f"must be an integer >= {lo}")


def _choice(v, name, options):
    _check(v in options, name, f"must be one of {', '.join(options)}")


@dataclass
class PlantSection:
    kind: str = "point_mass"          # point_mass | two_link
    n_q: int = 2
    mass: list = field(default_factory=lambda: [2.0, 2.0])        # diagonal of M (point mass)
    damping: list = field(default_factory=lambda: [0.3, 0.3])     # diagonal of D
    sigma_tau: float = 100.0          # kappa = sigma_tau^-2 I unless kappa is given
    kappa: list = field(default_factory=list)
    noise_form: str = "corrected"
    gravity: bool = False
    link_lengths: list = field(default_factory=lambda: [0.3, 0.3])
    link_masses: list = field(default_factory=lambda: [1.5, 1.0])
    arm_length: float = 0.6

    def validate(self):
        _choice(self.kind, "plant.kind", ("point_mass", "two_link"))
        _int(self.n_q, "plant.n_q")
        if self.kind == "two_link":
            _check(self.n_q == 2, "plant.n_q", "must be 2 for the two-link arm")
        _vector(self.mass, "plant.mass", self.n_q, _positive)
        _vector(self.damping, "plant.damping", self.n_q)
        _positive(self.sigma_tau, "plant.sigma_tau")
        if self.kappa:
            _vector(self.kappa, "plant.kappa", self.n_q)
        _choice(self.noise_form, "plant.noise_form", ("corrected", "literal"))
        _check(isinstance(self.gravity, bool), "plant.gravity", "must be true or false")
        _vector(self.link_lengths, "plant.link_lengths", 2, _positive)
        _vector(self.link_masses, "plant.link_masses", 2, _positive)
        _positive(self.arm_length, "plant.arm_length")

    @property
    def kappa_diag(self) -> np.ndarray:
        if self.kappa:
            return np.asarray(self.kappa, dtype=float)
        return np.full(self.n_q, self.sigma_tau**-2)


@dataclass
class CostSection:
    start: list = field(default_factory=lambda: [0.0, 0.0])
    goal: list = field(default_factory=lambda: [0.3, 0.0])
    width: float = 0.02               # goal radius sqrt(W), m
    widths: list = field(default_factory=lambda: [0.005, 0.01, 0.02, 0.04])
    distances: list = field(default_factory=lambda: [0.15, 0.3, 0.45])
    discount: float = 1.0
    effort_weight: float = 1e-5
    horizon: int = 30
    step: float = 0.02

    def validate(self):
        _vector(self.start, "cost.start", check=_real)
        _vector(self.goal, "cost.goal", len(self.start), _real)
        _positive(self.width, "cost.width")
        _vector(self.widths, "cost.widths", check=_positive)
        _vector(self.distances, "cost.distances", check=_positive)
        _check(isinstance(self.discount, (int, float)) and 0 < self.discount <= 1,
               "cost.discount", "discount must lie in (0,1]")
        _nonneg(self.effort_weight, "cost.effort_weight")
        _int(self.horizon, "cost.horizon")
        _positive(self.step, "cost.step")


def _real(v, name):
    _check(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v), name, "must be a finite number")


@dataclass
class SolverSection:
    grad_tol: float = 1e-6
    step_tol: float = 1e-12
    max_iters: int = 500
    memory: int = 20
    constraint_tol: float = 1e-6
    constraint_method: str = "eliminate"
    penalty_start: float = 1e2
    penalty_factor: float = 10.0
    penalty_rounds: int = 6
    regularizer: str = "squared"
    relin_tol: float = 1e-6
    relin_max: int = 20
    n_starts: int = 3

    def validate(self):
        for name in ("grad_tol", "step_tol", "constraint_tol", "penalty_start", "relin_tol"):
            _positive(getattr(self, name), f"solver.{name}")
        _check(isinstance(self.penalty_factor, (int, float)) and self.penalty_factor > 1,
               "solver.penalty_factor", "must be greater than 1")
        for name in ("max_iters", "memory", "penalty_rounds", "relin_max"):
            _int(getattr(self, name), f"solver.{name}")
        _int(self.n_starts, "solver.n_starts", lo=0)
        _choice(self.constraint_method, "solver.constraint_method", ("eliminate", "penalty"))
        _choice(self.regularizer, "solver.regularizer", ("squared", "norm"))


@dataclass
class RolloutSection:
    trials: int = 10000
    seed: int = 0
    speed_threshold: float = 0.05

    def validate(self):
        _int(self.trials, "rollout.trials")
        _int(self.seed, "rollout.seed", lo=0)
        _check(isinstance(self.speed_threshold, float) and 0 < self.speed_threshold < 1,
               "rollout.speed_threshold", "must lie in (0,1)")


@dataclass
class TransitionSection:
    distances: list = field(default_factory=lambda: [0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45])
    widths: list = field(default_factory=lambda: [0.005, 0.01, 0.02, 0.04])
    trials: int = 2000
    noise_var: float = 1e-8
    optimize: bool = True

    def validate(self):
        _vector(self.distances, "transition.distances", check=_positive)
        _vector(self.widths, "transition.widths", check=_positive)
        _int(self.trials, "transition.trials", lo=2)
        _positive(self.noise_var, "transition.noise_var")
        _check(isinstance(self.optimize, bool), "transition.optimize", "must be true or false")


@dataclass
class ScenarioSection:
    stiffness: float = 400.0
    ramp_duration: float = 0.5
    t_obs: float = 0.2
    human_stiffness: float = 1000.0
    width_factor: float = 0.5
    discount_drop: float = 0.02
    handover_goal: list = field(default_factory=lambda: [0.3, 0.03])   # true goal; belief is cost.goal
    seeds: int = 10
    # Cartesian setting used by the synchronization scenario
    sync_n_q: int = 3
    sync_mass: float = 2.0
    sync_width: float = 0.05
    sync_discount: float = 0.97
    sync_horizon: int = 50
    sync_step: float = 0.055
    sync_prior: list = field(default_factory=lambda: [0.3, 0.2, 0.1])
    sync_true_goal: list = field(default_factory=lambda: [0.35, 0.25, 0.1])

    def validate(self):
        for name in ("stiffness", "human_stiffness", "width_factor", "sync_mass", "sync_width", "sync_step"):
            _positive(getattr(self, name), f"scenario.{name}")
        _nonneg(self.ramp_duration, "scenario.ramp_duration")
        _positive(self.t_obs, "scenario.t_obs")
        _check(isinstance(self.discount_drop, (int, float)) and 0 <= self.discount_drop < 1,
               "scenario.discount_drop", "must lie in [0,1)")
        _vector(self.handover_goal, "scenario.handover_goal", check=_real)
        _int(self.seeds, "scenario.seeds")
        _check(self.sync_n_q == 3, "scenario.sync_n_q", "must be 3 (Cartesian x, y, z)")
        _check(isinstance(self.sync_discount, (int, float)) and 0 < self.sync_discount <= 1,
               "scenario.sync_discount", "discount must lie in (0,1]")
        _int(self.sync_horizon, "scenario.sync_horizon")
        _vector(self.sync_prior, "scenario.sync_prior", 3, _real)
        _vector(self.sync_true_goal, "scenario.sync_true_goal", 3, _real)


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "svg"])

    def validate(self):
        _check(isinstance(self.directory, str) and self.directory != "", "output.directory", "must be a path")
        _check(isinstance(self.formats, list) and set(self.formats) <= {"csv", "svg"} and "csv" in self.formats,
               "output.formats", "must be a list from {csv, svg} containing csv")


SECTIONS = {
    "plant": PlantSection,
    "cost": CostSection,
    "solver": SolverSection,
    "rollout": RolloutSection,
    "transition": TransitionSection,
    "scenario": ScenarioSection,
    "output": OutputSection,
}


@dataclass
class ExperimentConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    cost: CostSection = field(default_factory=CostSection)
    solver: SolverSection = field(default_factory=SolverSection)
    rollout: RolloutSection = field(default_factory=RolloutSection)
    transition: TransitionSection = field(default_factory=TransitionSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.plant.kind == "point_mass":
            _check(len(self.cost.goal) == self.plant.n_q, "cost.goal", "must have n_q entries for a point mass")
        else:
            _check(len(self.cost.goal) == 2, "cost.goal", "must have 2 entries for the two-link arm")
        return self

    # builders -----------------------------------------------------------
    def plant_model(self):
        from .dynamics import PlantModel, two_link_arm
        from .kinematics import Kinematics

        p = self.plant
        if p.kind == "two_link":
            base = two_link_arm(*p.link_lengths, *p.link_masses, damping=1.0, kappa=0.0,
                                gravity_enabled=p.gravity, noise_form=p.noise_form)
            from dataclasses import replace

            return replace(base, damping=np.diag(p.damping), noise_cov=np.diag(p.kappa_diag))
        return PlantModel(p.n_q, np.diag(p.mass), np.diag(p.damping), np.diag(p.kappa_diag),
                          Kinematics.identity(p.n_q), noise_form=p.noise_form)

    def goal_spec(self, center=None, width=None):
        from .reward import GoalSpec

        center = self.cost.goal if center is None else center
        return GoalSpec.isotropic(center, self.cost.width if width is None else width)

    def cost_params(self, goal=None):
        from .planner import CostParams

        c = self.cost
        return CostParams(goal or self.goal_spec(), c.discount, c.effort_weight, c.horizon, c.step)

    def solver_opts(self):
        from .solver import SolverOpts

        s = self.solver
        names = {f.name for f in fields(SolverOpts)}
        return SolverOpts(**{k: v for k, v in asdict(s).items() if k in names})

    def scenario_params(self):
        from .scenarios import ScenarioParams

        s = self.scenario
        return ScenarioParams(s.stiffness, s.ramp_duration, s.t_obs, s.human_stiffness,
                              s.width_factor, s.discount_drop, self.plant.arm_length)

    def sync_setup(self):
        """(plant, prior GoalSpec, CostParams) for the Cartesian synchronization scenario."""
        from .dynamics import point_mass
        from .planner import CostParams
        from .reward import GoalSpec

        s = self.scenario
        plant = point_mass(3, s.sync_mass, float(self.plant.damping[0]), float(self.plant.kappa_diag[0]),
                           self.plant.noise_form)
        prior = GoalSpec.isotropic(s.sync_prior, s.sync_width)
        return plant, prior, CostParams(prior, s.sync_discount, self.cost.effort_weight, s.sync_horizon, s.sync_step)

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.output.directory)


def toml_loads(text: str, source: str = "<string>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}", getattr(exc, "lineno", None), getattr(exc, "colno", None)) from exc


def _coerce(value, default):
    """Ints are accepted where floats are expected (``1`` for ``1.0``)."""
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, list) and isinstance(value, list):
        return [float(v) if isinstance(v, int) and not isinstance(v, bool) and any(isinstance(d, float) for d in default) else v
                for v in value]
    return value


def from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, body in doc.items():
        if key not in SECTIONS:
            raise ValidationError(key, "unknown section")
        if not isinstance(body, dict):
            raise ValidationError(key, "must be a table")
        section = getattr(cfg, key)
        known = {f.name for f in fields(section)}
        for name, value in body.items():
            if name not in known:
                raise ValidationError(f"{key}.{name}", "unknown key")
            setattr(section, name, _coerce(value, getattr(section, name)))
    return cfg.validate()


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    return from_dict(toml_loads(text, source))


def load_config(path=None) -> ExperimentConfig:
    """Load and validate ``path``; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, str(path))


def dumps(cfg: ExperimentConfig) -> str:
    import tomli_w

    return tomli_w.dumps(asdict(cfg))
