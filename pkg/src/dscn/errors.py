"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration/input/usage/contract/
domain/format problems exit 2, numerical failures exit 3, and failed
checks exit 1.
"""


class DscnError(Exception):
    """Base class for all library errors."""


class ConfigError(DscnError):
    """Invalid or inconsistent configuration (bad dims, kernel too wide, ...)."""


class InputError(DscnError):
    """Runtime input violates an operation's preconditions."""


class UsageError(DscnError):
    """API misuse, e.g. backward() before forward()."""


class ContractViolation(DscnError):
    """A value violated an interface contract (simplex membership, nonnegativity)."""


class DomainError(DscnError):
    """Mathematical domain violation (zero-norm spectrum, nonpositive similarity)."""


class FormatError(DscnError):
    """Malformed file; byte_offset, when known, points at the problem."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class NumericalError(DscnError):
    """NaN/Inf or divergence during a numerical computation."""
