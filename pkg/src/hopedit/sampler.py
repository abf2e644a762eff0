"""Fact-chain sampling with rejection on the seven coherence rules."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from .errors import ExhaustionError, HopEditError, MissingClassError
from .kg import KnowledgeGraph, RelationMeta, Triple
from .templates import answers_match, render_cloze

if TYPE_CHECKING:
    from .lm.base import LMBackend

HOPS = (2, 3, 4)
DEFAULT_RETRIES = 1000

RULES = {
    1: "chain contains a cycle",
    2: "two triples share a relation",
    3: "country object outside the last two hops",
    4: "more than three object types",
    5: "person or location objects are not consecutive",
    6: "headquarters location subject is not an organization",
    7: "capital subject is not a country",
}

HEADQUARTERS = ("P159", "headquarters location")
CAPITAL = ("P36", "capital")


@dataclass(frozen=True)
class FactChain:
    triples: tuple[Triple, ...]

    def __post_init__(self):
        object.__setattr__(self, "triples", tuple(self.triples))
        if len(self.triples) not in HOPS:
            raise HopEditError(f"chain length must be 2-4, got {len(self.triples)}")
        for a, b in zip(self.triples, self.triples[1:]):
            if a.o != b.s:
                raise HopEditError(f"chain is disconnected at {a} -> {b}")

    @property
    def hops(self) -> int:
        return len(self.triples)

    @property
    def head(self) -> str:
        return self.triples[0].s

    @property
    def tail(self) -> str:
        return self.triples[-1].o

    @property
    def relations(self) -> list[str]:
        return [t.r for t in self.triples]


@dataclass
class ConstraintReport:
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def rules(self) -> list[int]:
        return [rid for rid, _ in self.violations]


def _is_rel(meta: RelationMeta, names: tuple[str, str]) -> bool:
    return meta.id == names[0] or meta.label == names[1]


def _contiguous(positions: list[int]) -> bool:
    return not positions or positions[-1] - positions[0] + 1 == len(positions)


def check_constraints(
    triples: Sequence[Triple],
    relations: Mapping[str, RelationMeta],
    entity_class: Mapping[str, str | None] | KnowledgeGraph,
) -> ConstraintReport:
    """Evaluate every coherence rule and report all violations.

    Object types come from the relation metadata; subject classes (rules 6
    and 7) from ``entity_class``, which may be a graph.
    """
    if isinstance(entity_class, KnowledgeGraph):
        g = entity_class
        classes = {e: g.entity(e).cls for t in triples for e in (t.s, t.o) if e in g.entities}
    else:
        classes = entity_class
    metas = [relations[t.r] for t in triples]
    n = len(triples)
    report = ConstraintReport()

    def fail(rule: int, detail: str = ""):
        report.violations.append((rule, RULES[rule] + (f": {detail}" if detail else "")))

    nodes = [triples[0].s, *(t.o for t in triples)] if triples else []
    seen = Counter(nodes)
    repeated = sorted(e for e, c in seen.items() if c > 1)
    if repeated:
        fail(1, ", ".join(repeated))

    rel_counts = Counter(t.r for t in triples)
    dup = sorted(r for r, c in rel_counts.items() if c > 1)
    if dup:
        fail(2, ", ".join(dup))

    obj_cls = [m.object_class for m in metas]
    early_country = [i for i, c in enumerate(obj_cls) if c == "country" and i < n - 2]
    if early_country:
        fail(3, f"hop {early_country[0] + 1}")

    if len(set(obj_cls)) > 3:
        fail(4, ", ".join(sorted(set(obj_cls))))

    # Rule 5 is applied per class: person objects form one run and location
    # objects form one run (the chain WALL-E -> Stanton -> Pixar -> Emeryville
    # must pass).
    for cls in ("person", "location"):
        pos = [i for i, c in enumerate(obj_cls) if c == cls]
        if not _contiguous(pos):
            fail(5, cls)
            break

    def subject_class(eid: str) -> str:
        c = classes.get(eid)
        if not c:
            raise MissingClassError(eid)
        return c

    for rule, names, default in ((6, HEADQUARTERS, "organization"), (7, CAPITAL, "country")):
        for t, m in zip(triples, metas):
            if _is_rel(m, names):
                need = m.subject_class_constraint or default
                if subject_class(t.s) != need:
                    fail(rule, t.s)
                    break
    report.violations.sort(key=lambda v: v[0])
    return report


@dataclass
class SampleStats:
    attempts: int = 0
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)

    def reject(self, reason: str) -> None:
        self.rejected[reason] += 1

    def merge(self, other: "SampleStats") -> None:
        self.attempts += other.attempts
        self.accepted += other.accepted
        self.rejected.update(other.rejected)

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "accepted": self.accepted,
            "rejected": dict(sorted(self.rejected.items())),
        }


def random_walk(g: KnowledgeGraph, n: int, rng: random.Random, heads: Sequence[str] | None = None) -> list[Triple] | None:
    """Uniform head, then uniform relation at each step, canonical object."""
    heads = heads if heads is not None else g.subjects()
    if not heads:
        return None
    cur = heads[rng.randrange(len(heads))]
    out = []
    for _ in range(n):
        rels = g.out_relations(cur)
        if not rels:
            return None
        r = rels[rng.randrange(len(rels))]
        o = g.canonical_object(cur, r)
        out.append(Triple(cur, r, o))
        cur = o
    return out


def sample_chain(
    g: KnowledgeGraph,
    n: int,
    rng: random.Random,
    retries: int = DEFAULT_RETRIES,
    stats: SampleStats | None = None,
) -> FactChain:
    """Rejection-sample an ``n``-hop chain satisfying every rule.

    Rejections are tallied in ``stats`` under the lowest violated rule id
    (or ``dead-end``), so ``sum(rejected) == attempts - accepted``.
    """
    if n not in HOPS:
        raise HopEditError(f"hop count must be one of {HOPS}, got {n}")
    if len(g) == 0:
        raise HopEditError("cannot sample from an empty graph")
    local = SampleStats()
    heads = g.subjects()
    try:
        for _ in range(retries):
            local.attempts += 1
            walk = random_walk(g, n, rng, heads)
            if walk is None:
                local.reject("dead-end")
                continue
            report = check_constraints(walk, g.relations, g)
            if not report.ok:
                local.reject(f"rule-{report.rules[0]}")
                continue
            local.accepted += 1
            return FactChain(tuple(walk))
        raise ExhaustionError(local.attempts, local.rejected)
    finally:
        if stats is not None:
            stats.merge(local)


def filter_recallable(chain: FactChain | Sequence[Triple], lm: "LMBackend", g: KnowledgeGraph) -> bool:
    """True iff the model answers every single-hop cloze of the chain."""
    for t in getattr(chain, "triples", chain):
        cloze = render_cloze(g.relation(t.r), g.label(t.s))
        if not answers_match(lm.answer_cloze(cloze.text), g.label(t.o)):
            return False
    return True
