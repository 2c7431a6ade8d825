"""Exception hierarchy shared by every trustgate module.

All errors raised on purpose by this package derive from
:class:`TrustgateError`, so callers can catch one base class at CLI or
service boundaries and translate it into an exit code or an HTTP status.
"""

from __future__ import annotations


class TrustgateError(Exception):
    """Base class for all errors raised deliberately by trustgate."""


class InvalidInputError(TrustgateError):
    """Input data violates a documented precondition (NaN logits, bad shapes,
    labels out of range, malformed probability vectors)."""


class InvalidArgumentError(TrustgateError):
    """A parameter is outside its documented domain (alpha not in (0, 1),
    non-positive temperature, k larger than the number of classes)."""


class ParseError(TrustgateError):
    """A file could not be decoded.

    Carries enough context to point a human at the problem: the path and,
    when known, the 1-based line number (text formats) or byte offset
    (binary formats).
    """

    def __init__(self, message: str, *, path: str | None = None,
                 line: int | None = None, offset: int | None = None) -> None:
        self.path = path
        self.line = line
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ": ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class InsufficientDataError(TrustgateError):
    """Not enough samples to perform the requested computation (empty
    calibration set, empty energy pools, a class missing from data that a
    fitting step needs)."""


class InsufficientDonorsError(TrustgateError):
    """Fewer donor classes are available than the number of neighbours
    requested for head recomposition."""


class NotCalibratedError(TrustgateError):
    """An artifact is being used for inference before the fitting step that
    populates it has run (energy config without a threshold)."""


class NotFoundError(TrustgateError):
    """A lookup by identifier failed (unknown taxon id, unknown class
    index)."""


class ConfigError(TrustgateError):
    """A bundle or descriptor is internally inconsistent (mismatched class
    counts, missing files, missing required artifacts)."""
