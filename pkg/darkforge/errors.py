"""Exceptions raised by darkforge, grouped by how the CLI reports them."""

__all__ = ['DarkforgeError', 'UsageError', 'DataError', 'VerificationError']


class DarkforgeError(Exception):
    """Base class for all darkforge failures."""

    exit_code = 1


class UsageError(DarkforgeError, ValueError):
    """Invalid arguments or an invalid layer/cost specification."""

    exit_code = 1


class DataError(DarkforgeError, ValueError):
    """Unreadable or inconsistent input data (images, stats, annotations)."""

    exit_code = 2


class VerificationError(DarkforgeError):
    """One or more suites of the verification battery failed."""

    exit_code = 3
