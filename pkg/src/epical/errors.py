"""Exception hierarchy shared across epical."""


class EpicalError(Exception):
    """Base class for every error raised by epical."""


class ValidationError(EpicalError, ValueError):
    """Input failed validation.  ``violations`` holds the offending rules."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class StructuralError(EpicalError, ValueError):
    """Array shapes or lengths do not match the model layout."""


class DomainError(EpicalError, ValueError):
    """A value lies outside its mathematical domain (e.g. negative counts)."""


class IntegrationError(EpicalError, ArithmeticError):
    """The integrator produced a non-finite state."""

    def __init__(self, day):
        super().__init__(f"non-finite state at day {day}")
        self.day = day


class DegenerateSeriesError(EpicalError, ValueError):
    """A series has no usable peak (all zeros, or peak on the final day)."""


class UnimplementedByDesign(EpicalError, NotImplementedError):
    """Method is registered but deliberately not implemented."""


class BudgetExplosionError(EpicalError, ValueError):
    """An exhaustive method was asked to search too many dimensions."""
