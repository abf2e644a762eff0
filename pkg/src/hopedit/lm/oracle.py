"""Graph-backed stand-ins for a language model.

``OracleBackend`` knows the graph perfectly. ``HardEditBackend`` recalls a
batch of edits on single-hop queries but ignores them when chaining facts,
which is the signature failure of parameter-editing methods.
``StochasticRecall`` forgets cloze answers at random.
"""

from __future__ import annotations

import random
import threading
from typing import Iterable, Mapping, Sequence

from ..errors import PromptParseError
from ..kg import Edit, KnowledgeGraph
from ..templates import normalize_answer, parse_cloze, parse_multihop_question, parse_question, parse_statement, render_question
from .base import CONSISTENT, CONTRADICTS, CheckResult, Final, Subquestion, TranscriptStep

UNKNOWN = "unknown"


class OracleBackend:
    def __init__(self, g: KnowledgeGraph, context: Mapping[str, tuple[str, Sequence[str]]] | None = None):
        self.g = g
        self._context = dict(context or {})

    def with_context(self, instance) -> "OracleBackend":
        """Copy that knows the gold relation path behind ``instance``'s questions."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        ctx = dict(self._context)
        path = (instance.head, tuple(instance.relations))
        for q in instance.questions:
            ctx[q] = path
        clone._context = ctx
        return clone

    def register(self, question: str, head: str, relations: Sequence[str]) -> None:
        self._context[question] = (head, tuple(relations))

    # -- fact access (overridden by the hard-edit simulator) --------------
    def _fact(self, s: str, r: str) -> str | None:
        return self.g.canonical_object(s, r)

    def _label(self, eid: str | None) -> str:
        return self.g.label(eid) if eid is not None else UNKNOWN

    def _path(self, question: str) -> tuple[str, Sequence[str]] | None:
        path = self._context.get(question)
        if path is None:
            path = parse_multihop_question(question, self.g)
        return path

    def _entity_for_answer(self, answer: str, relation: str | None = None) -> str | None:
        ids = self.g.ids_for_label(answer.strip())
        if not ids:
            norm = normalize_answer(answer)
            ids = [e.id for e in self.g.entities.values() if normalize_answer(e.label) == norm]
        if relation is not None:
            for eid in ids:
                if self.g.canonical_object(eid, relation) is not None:
                    return eid
        return ids[0] if ids else None

    # -- capabilities ------------------------------------------------------
    def answer_cloze(self, prompt: str) -> str:
        parsed = parse_cloze(prompt, self.g) or parse_question(prompt, self.g)
        if parsed is None:
            raise PromptParseError("cannot map cloze onto any relation template", prompt)
        return self._label(self._fact(*parsed))

    def answer_multihop(self, question: str, mode: str = "direct") -> str:
        path = self._path(question)
        if path is None:
            return UNKNOWN
        cur: str | None = path[0]
        for r in path[1]:
            cur = self.g.canonical_object(cur, r)
            if cur is None:
                return UNKNOWN
        return self._label(cur)

    def propose_subquestion(self, question: str, transcript: Sequence[TranscriptStep]) -> Subquestion | Final:
        path = self._path(question)
        if path is None:
            raise PromptParseError("no relation path known for question", question)
        head, relations = path
        hop = len(transcript)
        if hop >= len(relations):
            return Final(transcript[-1].intermediate_answer or UNKNOWN)
        r = relations[hop]
        if hop == 0:
            subject = head
        else:
            prev = transcript[-1]
            subject = prev.extra.get("entity") or self._entity_for_answer(prev.intermediate_answer or "", r)
            if subject is None:
                return Final(prev.intermediate_answer or UNKNOWN)
        text = render_question(self.g.relation(r), self.g.label(subject)).text
        return Subquestion(text, subject, r)

    def _resolve(self, sub: Subquestion) -> tuple[str, str] | None:
        if sub.resolved_subject is not None and sub.relation is not None:
            return sub.resolved_subject, sub.relation
        return parse_question(sub.text, self.g) or parse_cloze(sub.text, self.g)

    def answer_subquestion(self, subquestion: Subquestion) -> str:
        key = self._resolve(subquestion)
        if key is None:
            raise PromptParseError("cannot resolve subquestion", subquestion.text)
        return self._label(self.g.canonical_object(*key))

    def check_contradiction(self, statement: str, tentative_answer: str, subquestion: Subquestion) -> CheckResult:
        fact = parse_statement(statement, self.g)
        key = self._resolve(subquestion)
        if fact is None or key is None:
            return CheckResult(CONSISTENT)
        s, r, o = fact
        if (s, r) == key and normalize_answer(self.g.label(o)) != normalize_answer(tentative_answer):
            return CheckResult(CONTRADICTS)
        return CheckResult(CONSISTENT)


class HardEditBackend(OracleBackend):
    """Edits are visible to cloze queries only."""

    def __init__(self, g: KnowledgeGraph, edits: Iterable[Edit], context=None):
        super().__init__(g, context)
        self.edits = {e.key: e.new for e in edits}

    def answer_cloze(self, prompt: str) -> str:
        parsed = parse_cloze(prompt, self.g) or parse_question(prompt, self.g)
        if parsed is None:
            raise PromptParseError("cannot map cloze onto any relation template", prompt)
        new = self.edits.get(parsed)
        return self._label(new if new is not None else self._fact(*parsed))


class StochasticRecall:
    """Wrap a backend so each cloze is forgotten with probability ``1 - recall``."""

    def __init__(self, base, recall: float, rng: random.Random):
        if not 0 <= recall <= 1:
            raise ValueError("recall must be in [0, 1]")
        self.base = base
        self.recall = recall
        self.rng = rng
        self._lock = threading.Lock()

    def answer_cloze(self, prompt: str) -> str:
        with self._lock:
            keep = self.rng.random() < self.recall
        return self.base.answer_cloze(prompt) if keep else UNKNOWN

    def __getattr__(self, name):
        return getattr(self.base, name)


class FailingRelations(OracleBackend):
    """Oracle that gets every cloze over the given relations wrong."""

    def __init__(self, g: KnowledgeGraph, relations: Iterable[str], context=None):
        super().__init__(g, context)
        self.failing = set(relations)

    def answer_cloze(self, prompt: str) -> str:
        parsed = parse_cloze(prompt, self.g) or parse_question(prompt, self.g)
        if parsed is not None and parsed[1] in self.failing:
            return UNKNOWN
        return super().answer_cloze(prompt)


def oracle_base(g: KnowledgeGraph) -> OracleBackend:
    return OracleBackend(g)


def oracle_hard_edit(g: KnowledgeGraph, edits: Iterable[Edit]) -> HardEditBackend:
    return HardEditBackend(g, edits)
