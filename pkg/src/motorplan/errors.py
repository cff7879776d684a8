"""Exception types raised across the package."""


class MotorPlanError(Exception):
    """Base class for all package errors."""


class SingularInertia(MotorPlanError):
    def __init__(self, q, cond):
        self.q = q
        self.cond = cond
        super().__init__(f"inertia matrix singular at q={list(map(float, q))} (cond={cond:.3g})")


class InvalidGoal(MotorPlanError):
    pass


class IllConditioned(MotorPlanError):
    """Raised when Sigma_x + W (or a GP Gram matrix) cannot be factorized."""

    def __init__(self, msg, cond=float("inf")):
        self.cond = cond
        super().__init__(f"{msg} (condition number {cond:.3g})")


class IllConditionedGram(IllConditioned):
    pass


class NonFiniteObjective(MotorPlanError):
    pass


class MaxIterationsExceeded(MotorPlanError):
    """Carries the best iterate of a solve that did not converge."""

    def __init__(self, msg, result=None):
        self.result = result
        super().__init__(msg)


class ConstraintInfeasible(MotorPlanError):
    def __init__(self, residual, result=None):
        self.residual = residual
        self.result = result
        super().__init__(f"observation constraint not met, best residual {residual:.3g}")


class MovementIncomplete(MotorPlanError):
    pass


class DegenerateRegression(MotorPlanError):
    pass


class ConfigError(MotorPlanError):
    pass


class ParseError(ConfigError):
    def __init__(self, msg, line=None, col=None):
        self.line = line
        self.col = col
        where = f" at line {line}, column {col}" if line is not None else ""
        super().__init__(f"could not parse config{where}: {msg}")


class ValidationError(ConfigError):
    def __init__(self, field, constraint):
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")
