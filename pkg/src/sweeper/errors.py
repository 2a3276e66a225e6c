"""Exception types shared across the pipeline."""


class SweeperError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SweeperError):
    """A mesh file is malformed or not parseable in its declared format."""


class UnsupportedFeature(SweeperError):
    """The file uses a feature outside the supported subset (non-triangle
    primitives, animations, ...)."""


class DegenerateExtent(SweeperError):
    """The mesh has no spatial extent (all vertices coincident)."""


class TooManyModels(SweeperError):
    """A session was created with more models than the table supports."""


class BackendError(SweeperError):
    """A model backend failed (transport, timeout, or malformed reply).

    ``kind`` is one of ``"timeout"``, ``"malformed"``, ``"remote"``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message


class AnswerUnavailable(SweeperError):
    """The backend returned an empty answer; surfaced to the table cell."""
