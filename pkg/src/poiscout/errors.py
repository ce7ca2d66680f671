"""Exception types shared across the package.

The CLI maps :class:`PoiError` subclasses to exit code 1 and ``OSError`` to
exit code 2.
"""

from __future__ import annotations


class PoiError(Exception):
    """Base class for domain errors."""


class ValidationError(PoiError, ValueError):
    """A record or argument violates a documented invariant."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(PoiError):
    """A binary or text file does not follow its on-disk format."""


class ClientError(PoiError):
    """A remote service call failed."""

    retryable = False

    def __init__(self, message: str, *, status: int | None = None):
        self.status = status
        super().__init__(message)


class AuthError(ClientError):
    pass


class RetryableError(ClientError):
    retryable = True


class JobStateError(ClientError):
    pass
