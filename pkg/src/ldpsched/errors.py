"""Exception types shared across the package."""


class LDPError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(LDPError, ValueError):
    """Malformed or inconsistent input (bad ids, bad parameters, bad files)."""

    exit_code = 1


class CapacityError(LDPError):
    """An exhaustive routine was asked to handle a problem above its size cap."""

    exit_code = 2


class GenerationError(LDPError):
    """A random generator could not satisfy its constraints within its retry budget."""

    exit_code = 1


class InvariantViolation(LDPError, AssertionError):
    """An internal invariant failed; indicates a bug, not bad input."""

    exit_code = 3
