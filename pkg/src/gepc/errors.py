"""Exception types shared across the toolkit."""


class GepcError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(GepcError):
    """An argument violates an operation's precondition."""


class ArtifactError(GepcError):
    """A pipeline artifact is missing or malformed; the message names it."""


class BackendError(GepcError):
    """A model backend failed: missing file, malformed tensor, unknown image."""


class DegenerateEmbeddingError(BackendError):
    """Pooled feature map is all zero and cannot be normalized."""
