"""Shared exception types.

Every error raised deliberately by this package derives from
:class:`BichainError`, so callers can catch one base class. The CLI maps the
subclasses onto exit codes (input errors, resource caps, internal bugs).
"""


class BichainError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(BichainError):
    """A model file or chain structure is invalid."""


class ModelSyntaxError(ModelError):
    """Malformed model text; the message carries the position."""


class ModelWarning(UserWarning):
    """Accepted but suspicious model structure (e.g. a diagonal transfer)."""


class DomainError(BichainError):
    """An argument lies outside the mathematical domain of an operation."""


class MissingExponentialError(BichainError):
    """Exact mode needs an exponential-table entry that is not present."""


class ResourceCapError(BichainError):
    """An enumeration, state-space, or iteration cap was exceeded."""


class NonAbsorbingError(BichainError):
    """The chain cannot reach an absorbing state from every state."""


class PredicateError(BichainError):
    """A state-predicate string does not parse or names unknown symbols."""


class InvariantError(BichainError):
    """An internal consistency check failed; indicates a bug, not bad input."""
