"""Exception types shared across the package."""

from __future__ import annotations


class HopEditError(Exception):
    """Base class for all package errors."""


class GraphParseError(HopEditError):
    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class UnknownRelationError(HopEditError):
    def __init__(self, relation: str):
        self.relation = relation
        super().__init__(f"unknown relation: {relation}")


class UnknownEntityError(HopEditError):
    def __init__(self, entity: str):
        self.entity = entity
        super().__init__(f"unknown entity: {entity}")


class RegistryMismatchError(HopEditError):
    pass


class TemplateError(HopEditError):
    pass


class MissingClassError(HopEditError):
    def __init__(self, entity: str):
        self.entity = entity
        super().__init__(f"entity {entity} has no class label")


class ExhaustionError(HopEditError):
    """Raised when rejection sampling runs out of retries."""

    def __init__(self, attempts: int, rejections: dict[str, int] | None = None):
        self.attempts = attempts
        self.rejections = dict(rejections or {})
        super().__init__(f"no valid chain after {attempts} attempts")


class EditSamplingError(HopEditError):
    """Retriable failure while building an instance.

    ``reason`` is one of ``no-candidate-object``, ``broken-chain``,
    ``unchanged-answer``, ``no-matching-edit`` or ``multiple-matching-edits``.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class EditConflictError(HopEditError):
    def __init__(self, subject: str, relation: str, batch_index: int | None = None):
        self.subject = subject
        self.relation = relation
        self.batch_index = batch_index
        where = f" in batch {batch_index}" if batch_index is not None else ""
        super().__init__(f"conflicting edits for ({subject}, {relation}){where}")


class EmptyInputError(HopEditError):
    pass


class SchemaError(HopEditError):
    def __init__(self, field: str, index: int | None = None, message: str = ""):
        self.field = field
        self.index = index
        loc = f"{field}, instance {index}" if index is not None else field
        super().__init__(f"{loc}{': ' + message if message else ''}")


class PromptParseError(HopEditError):
    """A completion (or prompt) did not match the expected format."""

    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(f"{message} (raw={raw!r})")


class TransportError(HopEditError):
    def __init__(self, message: str, attempts: int = 1):
        self.attempts = attempts
        super().__init__(message)
