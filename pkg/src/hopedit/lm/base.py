"""Capability interface shared by every language-model backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

CONTRADICTS = "contradicts"
CONSISTENT = "consistent"
NO_MEMORY = "no-memory"

MODES = ("direct", "cot")


@dataclass(frozen=True)
class Subquestion:
    text: str
    resolved_subject: str | None = None
    relation: str | None = None
    # prompt text so far, kept by free-text backends between calls
    context: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("subquestion text is empty")


@dataclass(frozen=True)
class Final:
    answer: str


@dataclass(frozen=True)
class CheckResult:
    verdict: str
    # free-text backends state the adjusted answer themselves
    intermediate_answer: str | None = None


@dataclass
class TranscriptStep:
    subquestion: Subquestion
    tentative_answer: str
    retrieved_statement: str | None = None
    verdict: str | None = None
    intermediate_answer: str | None = None
    extra: dict = field(default_factory=dict)


@runtime_checkable
class LMBackend(Protocol):
    def answer_cloze(self, prompt: str) -> str: ...

    def answer_multihop(self, question: str, mode: str = "direct") -> str: ...

    def propose_subquestion(self, question: str, transcript: Sequence[TranscriptStep]) -> Subquestion | Final: ...

    def answer_subquestion(self, subquestion: Subquestion) -> str: ...

    def check_contradiction(self, statement: str, tentative_answer: str,
                            subquestion: Subquestion) -> CheckResult: ...


def bind_context(lm, context) -> object:
    """Attach evaluation context (an instance) when the backend supports it."""
    bind = getattr(lm, "with_context", None)
    return bind(context) if bind is not None else lm
