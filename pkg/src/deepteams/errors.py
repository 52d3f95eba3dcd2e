"""Exception hierarchy shared by the planning, learning and CLI layers."""


class DeepTeamsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidInputError(DeepTeamsError, ValueError):
    exit_code = 3


class EnumerationBoundError(DeepTeamsError):
    """Raised when an exact enumeration would exceed the configured term bound."""

    exit_code = 7

    def __init__(self, terms, bound):
        super().__init__(f"enumeration needs {terms} terms, bound is {bound}")
        self.terms = terms
        self.bound = bound


class ConvergenceError(DeepTeamsError):
    exit_code = 4

    def __init__(self, message, last_gap=None):
        super().__init__(message)
        self.last_gap = last_gap


class UnsupportedDiscountError(DeepTeamsError, ValueError):
    exit_code = 3


class AssumptionViolation(DeepTeamsError):
    exit_code = 5

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = tuple(failed)


class DivergedError(DeepTeamsError):
    exit_code = 6

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ScenarioError(DeepTeamsError):
    """Scenario file could not be parsed or failed validation."""

    exit_code = 2
