"""Exception hierarchy shared by all fleetgp modules."""


class FleetGPError(Exception):
    """Base class for all fleetgp errors."""


class ContractError(FleetGPError):
    """An argument violates a documented precondition (bad shape, bad id, ...)."""


class NumericalError(FleetGPError):
    """A linear-algebra operation failed beyond recovery.

    ``jitters`` records the diagonal jitter levels that were attempted
    before giving up (empty when jitter was not applicable).
    """

    def __init__(self, message, jitters=()):
        super().__init__(message)
        self.jitters = tuple(jitters)


class ProtocolError(FleetGPError):
    """A fusion message set is inconsistent (duplicate or missing vehicle)."""


class PlannerError(FleetGPError):
    """No admissible walk exists for a vehicle."""


class JointSizeError(FleetGPError):
    """The exhaustive joint-walk search was refused; ``count`` is the joint
    walk count that exceeded the limit."""

    def __init__(self, message, count):
        super().__init__(message)
        self.count = count


class ParseError(FleetGPError):
    """A data file could not be parsed; ``line`` is the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ValidationError(FleetGPError):
    """A loaded value is syntactically fine but semantically invalid."""
