"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument has the wrong shape, range or type."""


class EmptySequenceError(InvalidArgumentError):
    """A sequence is too short to produce any output."""


class TrainingDivergedError(RuntimeError):
    """A parameter received a non-finite gradient."""

    def __init__(self, name: str, message: str = "") -> None:
        self.parameter = name
        super().__init__(message or f"non-finite gradient for parameter {name!r}")


class CheckFailedError(RuntimeError):
    """A numerical self-check could not be carried out."""


class PolicyError(RuntimeError):
    """A training policy precondition is not met."""
