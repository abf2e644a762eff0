"""Immutable knowledge-graph store.

Triples live in a tab-separated file (``subject<TAB>relation<TAB>object``),
relation metadata in a JSON array, and optional entity metadata (labels and
coarse classes) in a second JSON array.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import (
    GraphParseError,
    HopEditError,
    RegistryMismatchError,
    UnknownEntityError,
    UnknownRelationError,
)

log = logging.getLogger(__name__)

ENTITY_CLASSES = ("person", "location", "country", "organization", "other")

SUBJECT = "{subject}"
OBJECT = "{object}"


@dataclass(frozen=True)
class Entity:
    id: str
    label: str
    cls: str | None = None
    degree: int = 0


@dataclass(frozen=True)
class RelationMeta:
    id: str
    label: str
    object_class: str
    cloze_template: str
    question_template: str
    statement_template: str
    noun: str
    subject_class_constraint: str | None = None

    def __post_init__(self):
        if self.object_class not in ENTITY_CLASSES:
            raise HopEditError(f"relation {self.id}: bad object_class {self.object_class!r}")
        if self.subject_class_constraint not in (None, *ENTITY_CLASSES):
            raise HopEditError(f"relation {self.id}: bad subject_class_constraint")
        for name in ("cloze_template", "question_template"):
            tmpl = getattr(self, name)
            if tmpl.count(SUBJECT) != 1 or OBJECT in tmpl:
                raise HopEditError(f"relation {self.id}: {name} needs exactly one {SUBJECT}")
        st = self.statement_template
        if st.count(SUBJECT) != 1 or st.count(OBJECT) != 1:
            raise HopEditError(f"relation {self.id}: statement_template needs one subject and one object slot")
        if not self.noun.strip():
            raise HopEditError(f"relation {self.id}: empty noun fragment")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RelationMeta":
        return cls(
            id=d["id"],
            label=d["label"],
            object_class=d["object_class"],
            cloze_template=d["cloze_template"],
            question_template=d["question_template"],
            statement_template=d["statement_template"],
            noun=d.get("noun") or d["label"],
            subject_class_constraint=d.get("subject_class_constraint"),
        )

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "label": self.label,
            "object_class": self.object_class,
            "cloze_template": self.cloze_template,
            "question_template": self.question_template,
            "statement_template": self.statement_template,
            "noun": self.noun,
        }
        if self.subject_class_constraint:
            d["subject_class_constraint"] = self.subject_class_constraint
        return d


@dataclass(frozen=True, order=True)
class Triple:
    s: str
    r: str
    o: str

    def as_list(self) -> list[str]:
        return [self.s, self.r, self.o]


@dataclass(frozen=True)
class Edit:
    """A single fact replacement ``(s, r, old -> new)``."""

    s: str
    r: str
    old: str
    new: str

    def __post_init__(self):
        if self.old == self.new:
            raise HopEditError(f"edit ({self.s}, {self.r}) does not change the object")

    @property
    def key(self) -> tuple[str, str]:
        return (self.s, self.r)

    def to_dict(self) -> dict:
        return {"subject": self.s, "relation": self.r, "old": self.old, "new": self.new}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Edit":
        return cls(d["subject"], d["relation"], d["old"], d["new"])


class KnowledgeGraph:
    """A read-only set of triples with a forward ``(s, r) -> [o]`` index.

    Entities that appear only in the entity metadata (no triples) are still
    registered so that labels resolve, but they have degree 0.
    """

    def __init__(
        self,
        triples: Iterable[Triple],
        relations: Mapping[str, RelationMeta],
        entities: Mapping[str, Entity] | None = None,
        snapshot: str = "",
    ):
        self.snapshot = snapshot
        self._relations = MappingProxyType(dict(relations))
        tset = frozenset(triples)
        for t in tset:
            if t.r not in self._relations:
                raise UnknownRelationError(t.r)
        self._triples = tset

        degree: dict[str, int] = defaultdict(int)
        fwd: dict[tuple[str, str], list[str]] = defaultdict(list)
        by_rel: dict[str, set[str]] = defaultdict(set)
        for t in tset:
            degree[t.s] += 1
            degree[t.o] += 1
            fwd[(t.s, t.r)].append(t.o)
            by_rel[t.r].add(t.o)

        ents: dict[str, Entity] = {}
        for eid, e in (entities or {}).items():
            ents[eid] = Entity(eid, e.label, e.cls, degree.get(eid, 0))
        for eid in degree:
            if eid not in ents:
                ents[eid] = Entity(eid, eid, None, degree[eid])
        self._entities = MappingProxyType(ents)
        self._forward = MappingProxyType({k: tuple(sorted(v)) for k, v in fwd.items()})
        self._relation_objects = MappingProxyType({r: tuple(sorted(v)) for r, v in by_rel.items()})
        rel_of: dict[str, list[str]] = defaultdict(list)
        for s, r in self._forward:
            rel_of[s].append(r)
        self._out_relations = MappingProxyType({s: tuple(sorted(v)) for s, v in rel_of.items()})
        self._label_index: dict[str, list[str]] = defaultdict(list)
        for e in ents.values():
            self._label_index[e.label].append(e.id)

    # -- read-only views --------------------------------------------------
    @property
    def triples(self) -> frozenset[Triple]:
        return self._triples

    @property
    def relations(self) -> Mapping[str, RelationMeta]:
        return self._relations

    @property
    def entities(self) -> Mapping[str, Entity]:
        return self._entities

    @property
    def forward_index(self) -> Mapping[tuple[str, str], tuple[str, ...]]:
        return self._forward

    def __len__(self) -> int:
        return len(self._triples)

    def __repr__(self) -> str:
        return f"KnowledgeGraph(snapshot={self.snapshot!r}, triples={len(self)}, entities={len(self._entities)})"

    def relation(self, rid: str) -> RelationMeta:
        try:
            return self._relations[rid]
        except KeyError:
            raise UnknownRelationError(rid) from None

    def entity(self, eid: str) -> Entity:
        try:
            return self._entities[eid]
        except KeyError:
            raise UnknownEntityError(eid) from None

    def label(self, eid: str) -> str:
        return self.entity(eid).label

    def ids_for_label(self, label: str) -> list[str]:
        return list(self._label_index.get(label, ()))

    def out_relations(self, s: str) -> tuple[str, ...]:
        return self._out_relations.get(s, ())

    def objects_of_relation(self, r: str) -> tuple[str, ...]:
        """All objects that appear with relation ``r``, sorted by id."""
        return self._relation_objects.get(r, ())

    def canonical_object(self, s: str, r: str) -> str | None:
        objs = self._forward.get((s, r))
        return objs[0] if objs else None

    def subjects(self) -> list[str]:
        return sorted(self._out_relations)

    def with_triples(self, triples: Iterable[Triple], snapshot: str | None = None) -> "KnowledgeGraph":
        """New graph sharing this graph's registries but holding ``triples``."""
        return KnowledgeGraph(
            triples,
            self._relations,
            self._entities,
            self.snapshot if snapshot is None else snapshot,
        )


def query_objects(g: KnowledgeGraph, s: str, r: str) -> list[str]:
    """Objects for ``(s, r)`` in lexicographic id order."""
    g.entity(s)
    g.relation(r)
    return list(g.forward_index.get((s, r), ()))


def _load_relations(path: Path) -> dict[str, RelationMeta]:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise HopEditError(f"{path}: relation metadata must be a JSON array")
    rels = {}
    for d in raw:
        meta = RelationMeta.from_dict(d)
        rels[meta.id] = meta
    return rels


def load_relations(path: str | Path) -> dict[str, RelationMeta]:
    return _load_relations(Path(path))


def _load_entities(path: Path) -> dict[str, Entity]:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    ents = {}
    for i, d in enumerate(raw):
        label = d.get("label", "")
        if not d.get("id") or not label:
            raise GraphParseError(str(path), i + 1, "entity needs a non-empty id and label")
        ents[d["id"]] = Entity(d["id"], label, d.get("class"))
    return ents


def load_graph(
    source: str | Path,
    relations: str | Path,
    snapshot: str = "",
    entities: str | Path | None = None,
) -> KnowledgeGraph:
    """Load a graph from a triple TSV plus relation (and entity) metadata."""
    rels = _load_relations(Path(relations))
    ents = _load_entities(Path(entities)) if entities else {}
    triples = set()
    with open(source, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise GraphParseError(str(source), lineno, f"expected 3 tab-separated fields, got {line!r}")
            s, r, o = (p.strip() for p in parts)
            if r not in rels:
                raise UnknownRelationError(r)
            triples.add(Triple(s, r, o))
    return KnowledgeGraph(triples, rels, ents, snapshot)


def save_graph(g: KnowledgeGraph, triples_path: str | Path, relations_path: str | Path | None = None,
               entities_path: str | Path | None = None) -> None:
    with open(triples_path, "w", encoding="utf-8") as f:
        for t in sorted(g.triples):
            f.write(f"{t.s}\t{t.r}\t{t.o}\n")
    if relations_path:
        with open(relations_path, "w", encoding="utf-8") as f:
            json.dump([m.to_dict() for m in g.relations.values()], f, indent=2, ensure_ascii=False)
    if entities_path:
        rows = []
        for e in sorted(g.entities.values(), key=lambda e: e.id):
            row = {"id": e.id, "label": e.label}
            if e.cls:
                row["class"] = e.cls
            rows.append(row)
        with open(entities_path, "w", encoding="utf-8") as f:
            json.dump(rows, f, indent=1, ensure_ascii=False)


@dataclass
class RestrictResult:
    graph: KnowledgeGraph
    kept_entities: list[str] = field(default_factory=list)
    warning: str | None = None


def rank_entities(g: KnowledgeGraph) -> list[str]:
    """Entity ids by descending degree, ties broken by id."""
    return sorted((e for e in g.entities.values() if e.degree > 0), key=lambda e: (-e.degree, e.id))


def restrict_subgraph(g: KnowledgeGraph, relations: Iterable[str], top_fraction: float) -> RestrictResult:
    """Keep triples over ``relations`` whose endpoints are both popular.

    Popularity is graph degree; the top ``ceil(top_fraction * |entities|)``
    entities survive.
    """
    rels = set(relations)
    for r in rels:
        g.relation(r)
    if not 0 < top_fraction <= 1:
        raise HopEditError(f"top_fraction must be in (0, 1], got {top_fraction}")
    ranked = [e.id for e in rank_entities(g)]
    n_keep = math.ceil(top_fraction * len(ranked))
    keep = set(ranked[:n_keep])
    kept = [t for t in g.triples if t.r in rels and t.s in keep and t.o in keep]
    out = g.with_triples(kept)
    warning = None
    if not kept:
        warning = "empty-result"
        log.warning("restrict_subgraph: no triple survived (relations=%s, top_fraction=%s)",
                    sorted(rels), top_fraction)
    return RestrictResult(out, ranked[:n_keep], warning)


def diff_snapshots(old: KnowledgeGraph, new: KnowledgeGraph, relations: Iterable[str]) -> list[Edit]:
    """Fact updates between two snapshots.

    Only ``(s, r)`` pairs present in both snapshots are compared, using the
    canonical (lexicographically first) object on each side.
    """
    if set(old.relations) != set(new.relations) or any(
        old.relations[k] != new.relations[k] for k in old.relations
    ):
        raise RegistryMismatchError("snapshots do not share a relation registry")
    rels = set(relations)
    edits = []
    for (s, r), objs in old.forward_index.items():
        if r not in rels:
            continue
        new_objs = new.forward_index.get((s, r))
        if not new_objs:
            continue
        if objs[0] != new_objs[0]:
            edits.append(Edit(s, r, objs[0], new_objs[0]))
    edits.sort(key=lambda e: (e.s, e.r))
    return edits


def apply_edits(g: KnowledgeGraph, edits: Iterable[Edit], snapshot: str | None = None) -> KnowledgeGraph:
    """Replace the object of every edited ``(s, r)`` pair.

    All objects for an edited pair are dropped and replaced by the new one.
    """
    by_key = {e.key: e for e in edits}
    kept = [t for t in g.triples if (t.s, t.r) not in by_key]
    kept.extend(Triple(e.s, e.r, e.new) for e in by_key.values())
    return g.with_triples(kept, snapshot)
