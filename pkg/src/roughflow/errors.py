"""Exceptions raised by the solver; the CLI maps each to an exit code."""


class RoughFlowError(Exception):
    exit_code = 1


class ConfigError(RoughFlowError, ValueError):
    exit_code = 2


class CapabilityError(RoughFlowError, ValueError):
    """A scheme needs data the driver or field cannot provide."""

    exit_code = 3


class HypothesisViolation(RoughFlowError):
    exit_code = 4


class NonConvergence(RoughFlowError, ArithmeticError):
    """Sewing failed to become Cauchy, or an integrator blew up."""

    exit_code = 5


class HorizonTooLarge(RoughFlowError, ValueError):
    """A small-horizon precondition such as ``kappa (1 + a)^2 + a < 1`` fails."""

    exit_code = 4
