"""
Exception hierarchy for VertiShuttle.

Physics errors end a command with exit code 1, config errors with exit code 2.
"""


class ShuttleError(Exception):
    """Base class for all application errors."""


class PhysicsError(ShuttleError):
    """A computation could not produce a physically meaningful result."""


class InvalidParamsError(PhysicsError):
    pass


class DomainError(PhysicsError):
    """Evaluation point lies on or below the trap plane."""


class UnknownNodeError(PhysicsError):
    pass


class NoMinimumError(PhysicsError):
    pass


class NotAMinimumError(PhysicsError):
    pass


class UnboundedTrapError(PhysicsError):
    pass


class InvalidProtocolError(PhysicsError):
    pass


class NoRootError(PhysicsError):
    pass


class VoltageLimitError(PhysicsError):
    pass


class UnreachableTargetError(PhysicsError):
    pass


class IonLostError(PhysicsError):
    pass


class StepFailureError(PhysicsError):
    pass


class MissingWindowError(PhysicsError):
    pass


class NoCrossoverError(PhysicsError):
    """Shuttle and anomalous curves never cross; `argmin` holds (T, n_total) of the best cell."""

    def __init__(self, message: str, argmin=None):
        super().__init__(message)
        self.argmin = argmin


class AllCellsFailedError(PhysicsError):
    pass


class EmptyResultError(PhysicsError):
    pass


class ConfigError(ShuttleError):
    """Configuration document could not be used."""


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    """Carries every problem found, each prefixed by its path in the document."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
