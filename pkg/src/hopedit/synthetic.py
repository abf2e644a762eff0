"""Synthetic world graphs and the bundled walkthrough graph.

The synthetic generator builds a typed graph (people, organisations,
cities, countries, creative works, continents, languages) where every
entity of a class carries every relation of that class, so edited chains
can almost always be completed. Labels are invented words, each used once,
and no label is a substring of another label or of any template text.
"""

from __future__ import annotations

import json
import random
from importlib import resources
from pathlib import Path

from .kg import Entity, KnowledgeGraph, RelationMeta, Triple, load_graph

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kr", "st", "tr", "th", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ou"]
_CODAS = ["", "n", "r", "s", "l", "x", "m", "nd", "rt"]

# entity mix per 600 entities
_MIX = {
    "country": 30,
    "city": 120,
    "org": 100,
    "person": 220,
    "work": 100,
    "continent": 5,
    "language": 25,
}
_CLASS = {
    "country": "country",
    "city": "location",
    "org": "organization",
    "person": "person",
    "work": "other",
    "continent": "other",
    "language": "other",
}


def default_relations() -> dict[str, RelationMeta]:
    raw = json.loads((resources.files("hopedit") / "data" / "relations.json").read_text(encoding="utf-8"))
    return {d["id"]: RelationMeta.from_dict(d) for d in raw}


def relations_path() -> Path:
    return Path(str(resources.files("hopedit") / "data" / "relations.json"))


def walkthrough_paths() -> dict[str, Path]:
    root = Path(str(resources.files("hopedit") / "data" / "walkthrough"))
    return {
        "triples": root / "triples.tsv",
        "triples_new": root / "triples_new.tsv",
        "entities": root / "entities.json",
        "memory": root / "memory.json",
        "relations": relations_path(),
    }


def walkthrough_graph(new_snapshot: bool = False) -> KnowledgeGraph:
    p = walkthrough_paths()
    src = p["triples_new"] if new_snapshot else p["triples"]
    return load_graph(src, p["relations"], "walkthrough-new" if new_snapshot else "walkthrough", p["entities"])


class _Namer:
    def __init__(self, rng: random.Random, forbidden: list[str]):
        self.rng = rng
        self.used: set[str] = set()
        self.forbidden = [f.lower() for f in forbidden]

    def word(self) -> str:
        while True:
            n = self.rng.choice((2, 2, 3))
            w = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(n))
            w += self.rng.choice(_CODAS)
            if len(w) < 5 or w in self.used:
                continue
            if any(w in u or u in w for u in self.used):
                continue
            if any(w in f for f in self.forbidden):
                continue
            self.used.add(w)
            return w.capitalize()


def synthetic_graph(n_entities: int = 600, seed: int = 0, snapshot: str = "synthetic",
                    relations: dict[str, RelationMeta] | None = None) -> KnowledgeGraph:
    rels = relations or default_relations()
    rng = random.Random(seed)
    templates = []
    for m in rels.values():
        templates += [m.cloze_template, m.question_template, m.statement_template, m.noun]
    templates.append("Starting from has what")
    namer = _Namer(rng, templates)

    scale = n_entities / sum(_MIX.values())
    counts = {k: max(2, round(v * scale)) for k, v in _MIX.items()}
    counts["person"] += n_entities - sum(counts.values())

    ents: dict[str, Entity] = {}
    pools: dict[str, list[str]] = {k: [] for k in _MIX}
    next_id = 1
    for kind in _MIX:
        for _ in range(counts[kind]):
            eid = f"Q{next_id}"
            next_id += 1
            # two-word labels keep hashed-bucket collisions from tying scores
            label = f"{namer.word()} {namer.word()}"
            ents[eid] = Entity(eid, label, _CLASS[kind])
            pools[kind].append(eid)

    P = pools
    triples: set[Triple] = set()

    def add(s, r, o):
        triples.add(Triple(s, r, o))

    city_country = {}
    for city in P["city"]:
        c = rng.choice(P["country"])
        city_country[city] = c
        add(city, "P17", c)
    cities_of: dict[str, list[str]] = {c: [] for c in P["country"]}
    for city, c in city_country.items():
        cities_of[c].append(city)
    for c in P["country"]:
        if not cities_of[c]:
            city = rng.choice(P["city"])
            cities_of[c].append(city)
        add(c, "P36", rng.choice(cities_of[c]))
        hog, hos = rng.sample(P["person"], 2)
        add(c, "P6", hog)
        add(c, "P35", hos)
        add(c, "P30", rng.choice(P["continent"]))
        add(c, "P37", rng.choice(P["language"]))
    for org in P["org"]:
        hq = rng.choice(P["city"])
        add(org, "P159", hq)
        add(org, "P112", rng.choice(P["person"]))
        add(org, "P17", city_country[hq])
    people = list(P["person"])
    rng.shuffle(people)
    married = people[: int(0.8 * len(people)) // 2 * 2]
    for a, b in zip(married[::2], married[1::2]):
        add(a, "P26", b)
        add(b, "P26", a)
    for p in P["person"]:
        add(p, "P108", rng.choice(P["org"]))
        for org in rng.sample(P["org"], rng.choice((1, 1, 1, 2))):
            add(p, "P69", org)
        add(p, "P27", rng.choice(P["country"]))
        add(p, "P19", rng.choice(P["city"]))
    for w in P["work"]:
        add(w, rng.choice(("P170", "P50")), rng.choice(P["person"]))
        if rng.random() < 0.5:
            add(w, "P178", rng.choice(P["org"]))
    return KnowledgeGraph(triples, rels, ents, snapshot)


def perturb(g: KnowledgeGraph, n_changes: int, rng: random.Random, relations=None,
            snapshot: str = "perturbed") -> KnowledgeGraph:
    """Copy of ``g`` with ``n_changes`` random object replacements, plus a few
    added and removed pairs (which a fact diff must ignore)."""
    rels = set(relations) if relations is not None else set(g.relations)
    keys = sorted(k for k in g.forward_index if k[1] in rels)
    chosen = rng.sample(keys, min(n_changes, len(keys)))
    drop = set(chosen)
    triples = [t for t in g.triples if (t.s, t.r) not in drop]
    for s, r in chosen:
        old = g.canonical_object(s, r)
        pool = [o for o in g.objects_of_relation(r) if o != old]
        triples.append(Triple(s, r, rng.choice(pool) if pool else old))
    # schema-style noise: a removed pair and an added pair
    remaining = [t for t in triples if (t.s, t.r) not in drop]
    if remaining:
        victim = rng.choice(sorted(remaining))
        triples = [t for t in triples if (t.s, t.r) != (victim.s, victim.r)]
    subjects = g.subjects()
    if subjects:
        s = rng.choice(subjects)
        free = [r for r in sorted(g.relations) if (s, r) not in g.forward_index]
        if free and g.objects_of_relation(free[0]):
            triples.append(Triple(s, free[0], g.objects_of_relation(free[0])[0]))
    return g.with_triples(triples, snapshot)
