"""Exception types shared across the package."""


class AnonMimoError(Exception):
    """Base class for all package errors."""


class RankDeficient(AnonMimoError):
    """A matrix that must have full column (or row) rank does not."""


class DimensionMismatch(AnonMimoError, ValueError):
    """Operand shapes are inconsistent."""


class InvalidDimensions(AnonMimoError, ValueError):
    """Requested system dimensions violate a structural requirement."""


class ConfigError(AnonMimoError, ValueError):
    """A system configuration is malformed or violates its invariants."""


class InfeasibleTimeslot(AnonMimoError):
    """The per-timeslot precoding problem was certified infeasible."""

    def __init__(self, slot: int, epsilon: float, status: str = "Infeasible"):
        self.slot = slot
        self.epsilon = epsilon
        self.status = status
        super().__init__(f"timeslot {slot}: precoding problem {status.lower()} at epsilon={epsilon:g}")


class EmptyResult(AnonMimoError):
    """Every trial at a sweep point was excluded."""


class RootNotFound(AnonMimoError):
    """A bracketing root search found no sign change."""
