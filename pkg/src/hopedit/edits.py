"""Counterfactual and temporal edit construction, plus batch-of-k grouping."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import EditConflictError, EditSamplingError, ExhaustionError, HopEditError, TemplateError
from .kg import Edit, KnowledgeGraph, Triple
from .sampler import FactChain, SampleStats, filter_recallable, sample_chain
from .templates import normalize_answer, render_multihop_questions

if TYPE_CHECKING:
    from .lm.base import LMBackend

__all__ = [
    "Edit",
    "Instance",
    "sample_counterfactual",
    "build_temporal_instance",
    "build_edit_batch",
    "traverse",
    "instance_problems",
    "generate_instances",
]


@dataclass
class Instance:
    edits: list[Edit]
    questions: list[str]
    answer: str
    new_answer: str
    orig_triples: list[Triple]
    new_triples: list[Triple]
    id: str = ""
    answer_aliases: list[str] = field(default_factory=list)
    new_answer_aliases: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            self.id = instance_id(self.orig_triples, self.edits)

    @property
    def hops(self) -> int:
        return len(self.orig_triples)

    @property
    def head(self) -> str:
        return self.orig_triples[0].s

    @property
    def relations(self) -> list[str]:
        return [t.r for t in self.orig_triples]


def instance_id(triples: Sequence[Triple], edits: Sequence[Edit]) -> str:
    payload = json.dumps(
        {"chain": [t.as_list() for t in triples], "edits": [[e.s, e.r, e.old, e.new] for e in edits]},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def traverse(g: KnowledgeGraph, head: str, relations: Sequence[str],
             edits: Iterable[Edit] = ()) -> list[Triple] | None:
    """Follow ``relations`` from ``head``; edited pairs override the graph.

    Returns the visited triples, or None when a hop has no object.
    """
    overrides = {e.key: e.new for e in edits}
    cur = head
    out = []
    for r in relations:
        o = overrides.get((cur, r)) or g.canonical_object(cur, r)
        if o is None:
            return None
        out.append(Triple(cur, r, o))
        cur = o
    return out


def sample_counterfactual(g: KnowledgeGraph, chain: FactChain, rng: random.Random
                          ) -> tuple[list[Edit], list[Triple], str]:
    """Pick ``t ~ U{1..N}`` hops to edit and rebuild the chain forward.

    Raises :class:`EditSamplingError` with reason ``no-candidate-object``,
    ``broken-chain`` or ``unchanged-answer``.
    """
    n = chain.hops
    t = rng.randint(1, n)
    positions = set(rng.sample(range(n), t))
    edits: list[Edit] = []
    new_triples: list[Triple] = []
    cur = chain.head
    for i, orig in enumerate(chain.triples):
        old = g.canonical_object(cur, orig.r)
        if old is None:
            raise EditSamplingError("broken-chain", f"no {orig.r} for {cur}")
        if i in positions:
            candidates = [o for o in g.objects_of_relation(orig.r) if o != old]
            if not candidates:
                raise EditSamplingError("no-candidate-object", orig.r)
            new = candidates[rng.randrange(len(candidates))]
            edits.append(Edit(cur, orig.r, old, new))
            obj = new
        else:
            obj = old
        new_triples.append(Triple(cur, orig.r, obj))
        cur = obj
    a = g.label(chain.tail)
    a_star = g.label(cur)
    if normalize_answer(a) == normalize_answer(a_star):
        raise EditSamplingError("unchanged-answer", a)
    return edits, new_triples, cur


def build_counterfactual_instance(g: KnowledgeGraph, chain: FactChain, rng: random.Random,
                                  questions: Sequence[str] | None = None) -> Instance:
    edits, new_triples, tail = sample_counterfactual(g, chain, rng)
    if questions is None:
        questions = [q.text for q in render_multihop_questions(chain, g)]
    return Instance(
        edits=edits,
        questions=list(questions),
        answer=g.label(chain.tail),
        new_answer=g.label(tail),
        orig_triples=list(chain.triples),
        new_triples=new_triples,
    )


def build_temporal_instance(chain: FactChain, diff: Sequence[Edit], new_graph: KnowledgeGraph,
                            questions: Sequence[str] | None = None) -> Instance:
    """Single-edit instance whose edit comes from a snapshot diff.

    The new answer is obtained by traversing ``new_graph`` from the edited
    hop onwards.
    """
    by_key = {e.key: e for e in diff}
    hits = [(i, by_key[(t.s, t.r)]) for i, t in enumerate(chain.triples) if (t.s, t.r) in by_key]
    if not hits:
        raise EditSamplingError("no-matching-edit")
    if len(hits) > 1:
        raise EditSamplingError("multiple-matching-edits", ", ".join(f"{e.s}/{e.r}" for _, e in hits))
    pos, edit = hits[0]
    if edit.old != chain.triples[pos].o:
        raise EditSamplingError("no-matching-edit", f"diff old object {edit.old} is not on the chain")
    new_triples = list(chain.triples[:pos]) + [Triple(edit.s, edit.r, edit.new)]
    rest = traverse(new_graph, edit.new, chain.relations[pos + 1:])
    if rest is None:
        raise EditSamplingError("broken-chain", f"no completion from {edit.new}")
    new_triples += rest
    tail = new_triples[-1].o
    a, a_star = new_graph.label(chain.tail), new_graph.label(tail)
    if normalize_answer(a) == normalize_answer(a_star):
        raise EditSamplingError("unchanged-answer", a)
    if questions is None:
        questions = [q.text for q in render_multihop_questions(chain, new_graph)]
    return Instance(
        edits=[edit],
        questions=list(questions),
        answer=a,
        new_answer=a_star,
        orig_triples=list(chain.triples),
        new_triples=new_triples,
    )


def build_edit_batch(instances: Sequence[Instance], k: int) -> list[tuple[list[Instance], list[Edit]]]:
    """Consecutive groups of ``k`` instances with their merged edit set.

    Identical edits are merged; two edits on the same ``(s, r)`` with
    different new objects raise :class:`EditConflictError`.
    """
    if k < 1:
        raise HopEditError(f"batch size must be positive, got {k}")
    out = []
    for bi, start in enumerate(range(0, len(instances), k)):
        group = list(instances[start:start + k])
        merged: dict[tuple[str, str], Edit] = {}
        for inst in group:
            for e in inst.edits:
                prev = merged.get(e.key)
                if prev is None:
                    merged[e.key] = e
                elif prev.new != e.new:
                    raise EditConflictError(e.s, e.r, bi)
        out.append((group, list(merged.values())))
    return out


def instance_problems(inst: Instance, g: KnowledgeGraph) -> list[str]:
    """Invariant violations of an instance against its source graph."""
    problems = []
    if not 1 <= len(inst.edits) <= len(inst.orig_triples):
        problems.append("edit count out of range")
    if len(inst.questions) != 3:
        problems.append("needs three questions")
    if normalize_answer(inst.answer) == normalize_answer(inst.new_answer):
        problems.append("answer unchanged")
    c, cs = inst.orig_triples, inst.new_triples
    if len(c) != len(cs):
        problems.append("chain lengths differ")
        return problems
    for seq, name in ((c, "C"), (cs, "C*")):
        for a, b in zip(seq, seq[1:]):
            if a.o != b.s:
                problems.append(f"{name} disconnected")
    if [t.r for t in c] != [t.r for t in cs]:
        problems.append("relations differ between C and C*")
    walk = traverse(g, inst.head, inst.relations)
    if walk != list(c) or g.label(c[-1].o) != inst.answer:
        problems.append("C does not reproduce a")
    walk_star = traverse(g, cs[0].s, inst.relations, inst.edits)
    if walk_star != list(cs) or g.label(cs[-1].o) != inst.new_answer:
        problems.append("C* does not reproduce a*")
    edit_keys = {e.key for e in inst.edits}
    for e in inst.edits:
        if Triple(e.s, e.r, e.new) not in cs:
            problems.append(f"edit {e.key} missing from C*")
    for t in cs:
        if (t.s, t.r) not in edit_keys and g.canonical_object(t.s, t.r) != t.o:
            problems.append(f"unedited hop {t} not in graph")
    return problems


@dataclass
class GenerationResult:
    instances: list[Instance]
    stats: SampleStats
    shortfall: int = 0


def generate_instances(
    g: KnowledgeGraph,
    count: int,
    hops: Sequence[int],
    rng: random.Random,
    lm: "LMBackend | None" = None,
    retries: int = 1000,
    max_attempts: int | None = None,
    edit_rng: random.Random | None = None,
) -> GenerationResult:
    """Sample chains and counterfactual edits until ``count`` instances exist.

    Walks draw from ``rng`` and edits from ``edit_rng`` (``rng`` when not
    given), so callers can keep the two streams independent.

    Chains are drawn with hop counts cycling through ``hops``. Candidates are
    rejected when the chain was already used, a fact is not recallable by
    ``lm``, the questions leak a bridge entity, the edit sampling fails, an
    edit conflicts with an earlier edit on the same ``(s, r)``, or the new
    instance and an earlier one would rewrite each other's unedited hops.
    The last two keep every ``a*`` valid under the union of all corpus
    edits, whatever the batch size. Every rejection is tallied once in
    ``stats.rejected``.
    """
    stats = SampleStats()
    out: list[Instance] = []
    seen_chains: set[tuple[Triple, ...]] = set()
    committed: dict[tuple[str, str], str] = {}
    relied_on: set[tuple[str, str]] = set()
    max_attempts = max_attempts or count * 200
    i = 0
    while len(out) < count and stats.attempts < max_attempts:
        n = hops[i % len(hops)]
        i += 1
        chain_stats = SampleStats()
        try:
            chain = sample_chain(g, n, rng, retries=retries, stats=chain_stats)
        except ExhaustionError:
            stats.attempts += chain_stats.attempts
            stats.rejected.update(chain_stats.rejected)
            continue
        # the accepted walk is counted as an attempt; rejections below offset it
        stats.attempts += chain_stats.attempts
        stats.rejected.update(chain_stats.rejected)
        if chain.triples in seen_chains:
            stats.reject("duplicate-chain")
            continue
        if lm is not None and not filter_recallable(chain, lm, g):
            stats.reject("unrecallable")
            continue
        try:
            questions = [q.text for q in render_multihop_questions(chain, g)]
        except TemplateError:
            stats.reject("bridge-leak")
            continue
        try:
            inst = build_counterfactual_instance(g, chain, edit_rng or rng, questions)
        except EditSamplingError as exc:
            stats.reject(exc.reason)
            continue
        if any(committed.get(e.key, e.new) != e.new for e in inst.edits):
            stats.reject("edit-conflict")
            continue
        own = {e.key for e in inst.edits}
        passive = {(t.s, t.r) for t in inst.new_triples if (t.s, t.r) not in own}
        if own & relied_on or passive & committed.keys():
            stats.reject("edit-entanglement")
            continue
        seen_chains.add(chain.triples)
        for e in inst.edits:
            committed[e.key] = e.new
        relied_on |= passive
        stats.accepted += 1
        out.append(inst)
    return GenerationResult(out, stats, count - len(out))


def generate_temporal_instances(
    old: KnowledgeGraph,
    new: KnowledgeGraph,
    diff: Sequence[Edit],
    count: int,
    hops: Sequence[int],
    rng: random.Random,
    lm: "LMBackend | None" = None,
    retries: int = 1000,
    max_attempts: int | None = None,
) -> GenerationResult:
    """Temporal counterpart of :func:`generate_instances` (one edit each)."""
    stats = SampleStats()
    out: list[Instance] = []
    seen: set[tuple[Triple, ...]] = set()
    max_attempts = max_attempts or count * 200
    i = 0
    while len(out) < count and stats.attempts < max_attempts:
        n = hops[i % len(hops)]
        i += 1
        chain_stats = SampleStats()
        try:
            chain = sample_chain(old, n, rng, retries=retries, stats=chain_stats)
        except ExhaustionError:
            stats.attempts += chain_stats.attempts
            stats.rejected.update(chain_stats.rejected)
            continue
        stats.attempts += chain_stats.attempts
        stats.rejected.update(chain_stats.rejected)
        if chain.triples in seen:
            stats.reject("duplicate-chain")
            continue
        if lm is not None and not filter_recallable(chain, lm, old):
            stats.reject("unrecallable")
            continue
        try:
            inst = build_temporal_instance(chain, diff, new)
        except EditSamplingError as exc:
            stats.reject(exc.reason)
            continue
        except TemplateError:
            stats.reject("bridge-leak")
            continue
        # later hops must read the same in both snapshots, or a* would
        # depend on changes outside this instance's single edit
        if instance_problems(inst, old):
            stats.reject("snapshot-drift")
            continue
        seen.add(chain.triples)
        stats.accepted += 1
        out.append(inst)
    return GenerationResult(out, stats, count - len(out))

