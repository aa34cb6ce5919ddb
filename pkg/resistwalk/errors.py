"""Exception hierarchy shared by the resistwalk modules.

Every error carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class ResistWalkError(RuntimeError):
    """Base class for all library errors."""

    exit_code = 4


class ConfigError(ResistWalkError):
    exit_code = 2


class ParseError(ConfigError):
    """Raised when a configuration document cannot be parsed."""


class RangeError(ConfigError, ValueError):
    """Raised when a configuration value is outside its documented range."""


class UnknownKey(ConfigError, KeyError):
    """Raised when a configuration document carries an unsupported key."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class SchemaError(ConfigError):
    """Raised when a serialized graph or report does not match its schema."""


class IoError(ConfigError):
    """Raised when an input or output path cannot be used."""


class GraphError(ResistWalkError, ValueError):
    exit_code = 2


class DisconnectedGraph(GraphError):
    pass


class NonpositiveWeight(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class EmptySet(GraphError):
    pass


class UnknownVertex(GraphError):
    pass


class OverlappingSets(GraphError):
    pass


class SameVertex(GraphError):
    pass


class MissingValue(GraphError):
    pass


class InvalidLevel(GraphError):
    pass


class BudgetError(ResistWalkError):
    exit_code = 3


class LevelTooLarge(BudgetError):
    pass


class BudgetExceeded(BudgetError):
    pass


class HorizonTooLarge(BudgetError):
    pass


class CapExceeded(BudgetError):
    """Raised when a cover-time sample has not covered the graph by its cap."""

    def __init__(self, cap: int, uncovered: int):
        super().__init__(f"walk did not cover the graph within {cap} steps ({uncovered} vertices unvisited)")
        self.cap = cap
        self.uncovered = uncovered


class ExcessiveCensoring(BudgetError):
    pass


class InvariantViolation(ResistWalkError):
    exit_code = 4


class SolverFailure(ResistWalkError):
    pass


class QuadratureFailure(ResistWalkError):
    pass


class GammaOverflow(ResistWalkError, OverflowError):
    """Raised when psi overflows while evaluating the Garsia functional."""

    def __init__(self, x: int, y: int, argument: float):
        super().__init__(f"psi overflowed on pair ({x}, {y}) at argument {argument!r}")
        self.pair = (x, y)
        self.argument = argument


class NegativeTheta(ResistWalkError, ValueError):
    exit_code = 2


class VolumeBoundUnverified(ResistWalkError):
    pass


class InvalidProfile(ResistWalkError, ValueError):
    exit_code = 2


class TrajectoryNotRetained(ResistWalkError):
    pass


class NotReached(ResistWalkError, LookupError):
    """Signals that a trajectory is too short, not that anything failed."""


class InsufficientData(ResistWalkError):
    pass


class InsufficientLevels(ResistWalkError):
    pass
