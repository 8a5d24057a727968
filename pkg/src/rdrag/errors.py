"""Exception taxonomy shared across the pipeline.

The CLI maps these onto exit codes: ValidationError (and subclasses) is a
user-input problem and exits 1; TransportError and any other runtime
failure exits 2.
"""

from __future__ import annotations


class RdragError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RdragError):
    """Bad user input: malformed files, invalid config, precondition violations."""


class CorpusError(ValidationError):
    """Corpus file cannot be parsed or violates the record schema."""


class ConfigurationError(ValidationError):
    """Inconsistent configuration, e.g. embedding dimension mismatch."""


class DataError(ValidationError):
    """A referenced data file is missing, unreadable, or degenerate."""


class TransportError(RdragError):
    """A remote endpoint could not be reached after exhausting retries."""


class RequestError(RdragError):
    """A remote endpoint rejected the request (4xx); retrying will not help."""
