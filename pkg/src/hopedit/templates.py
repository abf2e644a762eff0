"""Deterministic text rendering for clozes, questions and edit statements.

Every relation carries four text fragments in its metadata: a cloze
template, a single-hop question template, a statement template and a short
noun phrase ("capital city", "spouse") used to compose multi-hop questions.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Mapping, Sequence

from .errors import TemplateError
from .kg import OBJECT, SUBJECT, Edit, KnowledgeGraph, RelationMeta, Triple

if TYPE_CHECKING:
    from .sampler import FactChain

KINDS = ("cloze", "question", "statement", "multihop_question")

_ARTICLES = re.compile(r"^(the|a|an)\s+")
_TERMINAL_PUNCT = re.compile(r"[\s.,;:!?\"']+$")
_WS = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """Canonical form used for every answer comparison."""
    t = unicodedata.normalize("NFKC", text).lower()
    t = _WS.sub(" ", t).strip()
    t = _TERMINAL_PUNCT.sub("", t)
    t = _ARTICLES.sub("", t)
    return t.strip()


def answers_match(predicted: str, target: str, aliases: Sequence[str] = ()) -> bool:
    p = normalize_answer(predicted)
    return any(p == normalize_answer(t) for t in (target, *aliases))


@dataclass(frozen=True)
class RenderedText:
    text: str
    kind: str

    def __post_init__(self):
        if not self.text.strip():
            raise TemplateError("rendered text is empty")
        if SUBJECT in self.text or OBJECT in self.text:
            raise TemplateError(f"unreplaced placeholder in {self.text!r}")
        if self.kind not in KINDS:
            raise TemplateError(f"unknown text kind {self.kind!r}")

    def __str__(self) -> str:
        return self.text


def _fill(template: str, subject: str, obj: str | None = None) -> str:
    if not subject:
        raise TemplateError("missing subject label")
    out = template.replace(SUBJECT, subject)
    if obj is not None:
        if not obj:
            raise TemplateError("missing object label")
        out = out.replace(OBJECT, obj)
    return out


def render_cloze(r: RelationMeta, subject_label: str) -> RenderedText:
    return RenderedText(_fill(r.cloze_template, subject_label), "cloze")


def render_question(r: RelationMeta, subject_label: str) -> RenderedText:
    return RenderedText(_fill(r.question_template, subject_label), "question")


def render_statement(r: RelationMeta, subject_label: str, object_label: str) -> RenderedText:
    if not r.statement_template:
        raise TemplateError(f"relation {r.id} has no statement template")
    return RenderedText(_fill(r.statement_template, subject_label, object_label), "statement")


def render_edit_statement(e: Edit, g: KnowledgeGraph) -> RenderedText:
    """Sentence stating the edited fact with its NEW object."""
    return render_statement(g.relation(e.r), g.label(e.s), g.label(e.new))


# -- inverse matching -------------------------------------------------------

@lru_cache(maxsize=4096)
def _template_regex(template: str) -> re.Pattern:
    parts = re.split(r"(\{subject\}|\{object\})", template)
    out = []
    for p in parts:
        if p == SUBJECT:
            out.append(r"(?P<subject>.+?)")
        elif p == OBJECT:
            out.append(r"(?P<object>.+?)")
        else:
            out.append(re.escape(p))
    return re.compile("^" + "".join(out) + "$", re.DOTALL)


def match_template(template: str, text: str) -> dict[str, str] | None:
    m = _template_regex(template).match(text.strip())
    return m.groupdict() if m else None


def _resolve_label(g: KnowledgeGraph, label: str) -> list[str]:
    return g.ids_for_label(label.strip())


def parse_statement(text: str, g: KnowledgeGraph) -> tuple[str, str, str] | None:
    """Recover ``(s, r, o)`` ids from a rendered statement, or None."""
    for meta in g.relations.values():
        m = match_template(meta.statement_template, text)
        if not m:
            continue
        subs = _resolve_label(g, m["subject"])
        objs = _resolve_label(g, m["object"])
        if subs and objs:
            return subs[0], meta.id, objs[0]
    return None


def _parse_single(text: str, g: KnowledgeGraph, field: str) -> tuple[str, str] | None:
    hits = []
    for meta in g.relations.values():
        m = match_template(getattr(meta, field), text)
        if not m:
            continue
        for sid in _resolve_label(g, m["subject"]):
            hits.append((sid, meta.id))
    if not hits:
        return None
    # prefer a pair the graph actually knows about
    for sid, rid in hits:
        if g.canonical_object(sid, rid) is not None:
            return sid, rid
    return hits[0]


def parse_cloze(text: str, g: KnowledgeGraph) -> tuple[str, str] | None:
    return _parse_single(text, g, "cloze_template")


def parse_question(text: str, g: KnowledgeGraph) -> tuple[str, str] | None:
    return _parse_single(text, g, "question_template")


# -- multi-hop composition --------------------------------------------------

def _noun_phrase(head: str, nouns: Sequence[str]) -> str:
    """``nouns=[spouse, country of citizenship]`` ->
    "the country of citizenship of Ivanka Trump's spouse"."""
    np = f"{head}'s {nouns[0]}"
    for noun in nouns[1:]:
        np = f"the {noun} of {np}"
    return np


def _of_chain(head: str, nouns: Sequence[str]) -> str:
    np = head
    for noun in nouns:
        np = f"the {noun} of {np}"
    return np


def _possessive_chain(head: str, nouns: Sequence[str]) -> str:
    return "'s ".join([head, *nouns])


def compose_questions(head_label: str, relations: Sequence[RelationMeta]) -> list[str]:
    """Three phrasings asking for the tail of a relation path from ``head_label``."""
    if not 2 <= len(relations) <= 4:
        raise TemplateError(f"multi-hop questions need 2-4 hops, got {len(relations)}")
    nouns = [r.noun for r in relations]
    last = relations[-1]
    prefix = _fill(last.question_template, _noun_phrase(head_label, nouns[:-1]))
    of_form = f"What is {_of_chain(head_label, nouns)}?"
    inner = _possessive_chain(head_label, nouns[:-1])
    inverted = f"Starting from {head_label}, {inner} has what {nouns[-1]}?"
    qs = [prefix, of_form, inverted]
    if len(set(qs)) != 3:
        raise TemplateError(f"question schemes collapsed for head {head_label!r}")
    return qs


def render_multihop_questions(chain: "FactChain | Sequence[Triple]", g: KnowledgeGraph) -> list[RenderedText]:
    triples = list(getattr(chain, "triples", chain))
    if not 2 <= len(triples) <= 4:
        raise TemplateError(f"chain length must be 2-4, got {len(triples)}")
    head = g.label(triples[0].s)
    qs = compose_questions(head, [g.relation(t.r) for t in triples])
    bridges = [g.label(t.o) for t in triples[:-1]]
    for q in qs:
        for b in bridges:
            if b in q:
                raise TemplateError(f"bridge entity {b!r} leaks into question {q!r}")
    return [RenderedText(q, "multihop_question") for q in qs]


def parse_multihop_question(text: str, g: KnowledgeGraph) -> tuple[str, list[str]] | None:
    """Invert :func:`compose_questions`: return ``(head_id, [relation ids])``.

    Only the three built-in phrasings are recognised; anything else yields
    None.
    """
    text = text.strip()
    by_noun: dict[str, list[RelationMeta]] = {}
    for meta in g.relations.values():
        by_noun.setdefault(meta.noun, []).append(meta)
    nouns_longest_first = sorted(by_noun, key=len, reverse=True)

    def resolve(head: str, nouns: list[str]) -> tuple[str, list[str]] | None:
        ids = _resolve_label(g, head)
        if not ids:
            return None
        for hid in ids:
            rels = _walk_nouns(g, hid, nouns, by_noun)
            if rels is not None:
                return hid, rels
        return None

    def peel_of(np: str) -> tuple[str, list[str]] | None:
        # "the N of X" -> recurse into X; nouns returned innermost first
        for noun in nouns_longest_first:
            prefix = f"the {noun} of "
            if np.startswith(prefix):
                rest = np[len(prefix):]
                inner = peel_of(rest)
                if inner is not None:
                    head, nouns = inner
                    return head, nouns + [noun]
                poss = peel_possessive(rest)
                if poss is not None:
                    head, nouns = poss
                    return head, nouns + [noun]
                return rest, [noun]
        return None

    def peel_possessive(np: str) -> tuple[str, list[str]] | None:
        for noun in nouns_longest_first:
            suffix = f"'s {noun}"
            if np.endswith(suffix):
                rest = np[: -len(suffix)]
                inner = peel_possessive(rest)
                if inner is not None and resolve(inner[0], inner[1] + [noun]) is not None:
                    return inner[0], inner[1] + [noun]
                return rest, [noun]
        return None

    candidates: list[tuple[str, list[str]]] = []
    m = re.match(r"^Starting from (.+?), (.+) has what (.+)\?$", text)
    if m:
        head, inner, last = m.groups()
        if inner.startswith(head):
            poss = peel_possessive(inner)
            if poss is not None and last in by_noun:
                candidates.append((poss[0], poss[1] + [last]))
    m = re.match(r"^What is (the .+)\?$", text)
    if m:
        got = peel_of(m.group(1))
        if got is not None:
            candidates.append(got)
    for meta in g.relations.values():
        mm = match_template(meta.question_template, text)
        if not mm:
            continue
        np = mm["subject"]
        got = peel_of(np) or peel_possessive(np)
        if got is not None:
            candidates.append((got[0], got[1] + [meta.noun]))
    for head, nouns in candidates:
        if len(nouns) < 2:
            continue
        res = resolve(head, nouns)
        if res is not None:
            return res
    return None


def _walk_nouns(g: KnowledgeGraph, head: str, nouns: list[str],
                by_noun: Mapping[str, list[RelationMeta]]) -> list[str] | None:
    """Pick relation ids for each noun, preferring ones the graph can traverse."""
    rels: list[str] = []
    cur: str | None = head
    for noun in nouns:
        options = by_noun.get(noun, [])
        if not options:
            return None
        chosen = None
        if cur is not None:
            for meta in options:
                if g.canonical_object(cur, meta.id) is not None:
                    chosen = meta
                    break
        if chosen is None:
            chosen = options[0]
        rels.append(chosen.id)
        cur = g.canonical_object(cur, chosen.id) if cur is not None else None
    return rels
