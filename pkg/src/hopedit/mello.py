"""Memory-based editing loop: decompose, answer, retrieve, self-check."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import HopEditError
from .kg import KnowledgeGraph
from .lm.base import CONSISTENT, CONTRADICTS, NO_MEMORY, Final, Subquestion, TranscriptStep, bind_context
from .lm.http import format_check_line
from .retrieval import EditMemory, MemoryEntry, retrieve_exact, retrieve_top1

log = logging.getLogger(__name__)

DEFAULT_MAX_HOPS = 8

Retriever = Callable[[EditMemory, Subquestion], "tuple[MemoryEntry, float] | None"]


def cosine_retriever(memory: EditMemory, sub: Subquestion):
    return retrieve_top1(memory, sub.text)


def exact_retriever(memory: EditMemory, sub: Subquestion):
    if sub.resolved_subject is None or sub.relation is None:
        return None
    return retrieve_exact(memory, sub.resolved_subject, sub.relation)


@dataclass
class MelloTrace:
    question: str
    steps: list[TranscriptStep] = field(default_factory=list)
    final_answer: str = ""
    terminated: str = "final"
    error: str | None = None

    @property
    def verdicts(self) -> list[str]:
        return [s.verdict for s in self.steps]

    def step_records(self) -> list[dict]:
        out = []
        for i, s in enumerate(self.steps):
            out.append({
                "step": i,
                "subquestion": s.subquestion.text,
                "tentative_answer": s.tentative_answer,
                "retrieved_statement": s.retrieved_statement,
                "score": s.extra.get("score"),
                "verdict": s.verdict,
                "intermediate_answer": s.intermediate_answer,
            })
        return out

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "step", **r}, ensure_ascii=False) for r in self.step_records()]
        lines.append(json.dumps({
            "type": "summary",
            "question": self.question,
            "final_answer": self.final_answer,
            "terminated": self.terminated,
            "steps": len(self.steps),
            "error": self.error,
        }, ensure_ascii=False))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    def transcript(self) -> str:
        """Human-readable rendering in the question/subquestion/fact layout."""
        lines = [f"Question: {self.question}"]
        for s in self.steps:
            lines.append(f"Subquestion: {s.subquestion.text}")
            lines.append(f"Generated answer: {s.tentative_answer}")
            if s.retrieved_statement is None:
                lines.append("Retrieved fact: (memory is empty)")
                lines.append(f"No edited fact to check, so the intermediate answer is: {s.intermediate_answer}")
            else:
                lines.append(f"Retrieved fact: {s.retrieved_statement}")
                lines.append(format_check_line(s.verdict, s.intermediate_answer or ""))
        if self.terminated == "final":
            lines.append(f"Final answer: {self.final_answer}")
        else:
            lines.append(f"Stopped ({self.terminated}); last answer: {self.final_answer}")
        return "\n".join(lines)


def run_mello(
    question: str,
    lm,
    memory: EditMemory,
    max_hops: int = DEFAULT_MAX_HOPS,
    retriever: Retriever = cosine_retriever,
    edit_labels: KnowledgeGraph | None = None,
) -> MelloTrace:
    """Answer ``question`` against ``memory`` one subquestion at a time.

    On a contradiction the intermediate answer becomes the retrieved edit's
    new object (``edit_labels`` resolves its label), unless the backend
    already stated an adjusted answer in free text. Backend failures end the
    run with ``terminated="backend-error"`` rather than raising.
    """
    if max_hops < 1:
        raise HopEditError("max_hops must be at least 1")
    trace = MelloTrace(question)
    try:
        for _ in range(max_hops):
            nxt = lm.propose_subquestion(question, trace.steps)
            if isinstance(nxt, Final):
                trace.final_answer = nxt.answer
                trace.terminated = "final"
                return trace
            tentative = lm.answer_subquestion(nxt)
            step = TranscriptStep(nxt, tentative)
            hit = retriever(memory, nxt) if len(memory) else None
            if hit is None:
                step.verdict = NO_MEMORY if not len(memory) else CONSISTENT
                step.intermediate_answer = tentative
            else:
                entry, score = hit
                step.retrieved_statement = entry.text
                step.extra["score"] = score
                check = lm.check_contradiction(entry.text, tentative, nxt)
                step.verdict = check.verdict
                if check.verdict == CONTRADICTS:
                    if check.intermediate_answer:
                        step.intermediate_answer = check.intermediate_answer
                    else:
                        labels = edit_labels if edit_labels is not None else getattr(lm, "g", None)
                        new = entry.edit.new
                        step.intermediate_answer = labels.label(new) if labels is not None else new
                        step.extra["entity"] = new
                else:
                    step.intermediate_answer = check.intermediate_answer or tentative
            trace.steps.append(step)
        trace.terminated = "hop-cap"
        trace.final_answer = trace.steps[-1].intermediate_answer if trace.steps else ""
    except Exception as exc:  # backend faults are recorded, never raised
        log.debug("mello run failed: %s", exc)
        trace.terminated = "backend-error"
        trace.error = f"{type(exc).__name__}: {exc}"
        trace.final_answer = trace.steps[-1].intermediate_answer if trace.steps else ""
    return trace


class MelloModel:
    """Present MeLLo over a frozen backend as an edited model.

    Multi-hop questions go through :func:`run_mello`; single-hop clozes run
    one retrieve-and-check step so edit-wise and instance-wise metrics are
    defined for this editor too.
    """

    def __init__(self, lm, memory: EditMemory, max_hops: int = DEFAULT_MAX_HOPS,
                 retriever: Retriever = cosine_retriever, edit_labels: KnowledgeGraph | None = None):
        self.lm = lm
        self.memory = memory
        self.max_hops = max_hops
        self.retriever = retriever
        self.edit_labels = edit_labels

    def with_context(self, instance) -> "MelloModel":
        clone = MelloModel(bind_context(self.lm, instance), self.memory, self.max_hops,
                           self.retriever, self.edit_labels)
        return clone

    def answer_multihop(self, question: str, mode: str = "direct") -> str:
        trace = run_mello(question, self.lm, self.memory, self.max_hops, self.retriever, self.edit_labels)
        return trace.final_answer

    def answer_cloze(self, prompt: str) -> str:
        tentative = self.lm.answer_cloze(prompt)
        if not len(self.memory):
            return tentative
        parse = getattr(self.lm, "_resolve", None)
        key = parse(Subquestion(prompt)) if parse else None
        sub = Subquestion(prompt, *(key or (None, None)))
        hit = self.retriever(self.memory, sub)
        if hit is None:
            return tentative
        entry, _ = hit
        check = self.lm.check_contradiction(entry.text, tentative, sub)
        if check.verdict != CONTRADICTS:
            return tentative
        if check.intermediate_answer:
            return check.intermediate_answer
        labels = self.edit_labels if self.edit_labels is not None else getattr(self.lm, "g", None)
        return labels.label(entry.edit.new) if labels is not None else entry.edit.new


def run_many(questions: Sequence[str], lm, memory: EditMemory, **kwargs) -> list[MelloTrace]:
    return [run_mello(q, lm, memory, **kwargs) for q in questions]
