from __future__ import annotations


class GamError(Exception):
    """Base class for every error raised by this package."""


class BackendError(GamError):
    """A chat-completion call failed.

    ``kind`` is one of ``transport``, ``status``, ``timeout`` or ``script``.
    """

    def __init__(self, message: str, kind: str = "transport", status: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.status = status


class NoMatchingRule(BackendError):
    def __init__(self, message: str):
        super().__init__(message, kind="script")


class EmptyCompletion(GamError):
    pass


class MissingBinding(GamError):
    pass


class PromptOverflow(GamError):
    """The fixed part of a template alone exceeds the context budget."""


class OutOfOrderSession(GamError):
    pass


class ConcurrentWriteError(GamError):
    pass


class MalformedSession(GamError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class IdMismatch(GamError):
    pass


class UnknownPageId(GamError):
    """Some requested page ids do not exist.

    ``pages`` holds the pages that were found, in request order.
    """

    def __init__(self, missing: list[int], pages: list | None = None):
        super().__init__(f"unknown page ids: {missing}")
        self.missing = list(missing)
        self.pages = list(pages or [])


class DimensionMismatch(GamError):
    pass


class CorruptManifest(GamError):
    pass


class ParseError(GamError):
    pass


class PlanParseError(ParseError):
    pass


class IntegrationParseError(ParseError):
    pass


class ReflectionParseError(ParseError):
    pass


class ResearchAborted(GamError):
    """A research run stopped on an error; ``trace`` holds what ran so far."""

    def __init__(self, cause: Exception, trace):
        super().__init__(f"research aborted: {type(cause).__name__}: {cause}")
        self.cause = cause
        self.trace = trace
