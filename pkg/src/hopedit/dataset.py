"""JSON (de)serialisation of instances and corpus statistics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from .edits import Instance
from .errors import HopEditError, SchemaError
from .kg import Edit, Triple

SCHEMA_VERSION = "1"

REQUIRED = ("id", "edits", "questions", "answer", "new_answer", "orig_triples", "new_triples", "hops")
KNOWN = set(REQUIRED) | {"schema_version", "answer_aliases", "new_answer_aliases"}


def instance_to_dict(inst: Instance) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "id": inst.id,
        "hops": inst.hops,
        "edits": [e.to_dict() for e in inst.edits],
        "questions": list(inst.questions),
        "answer": inst.answer,
        "answer_aliases": list(inst.answer_aliases),
        "new_answer": inst.new_answer,
        "new_answer_aliases": list(inst.new_answer_aliases),
        "orig_triples": [t.as_list() for t in inst.orig_triples],
        "new_triples": [t.as_list() for t in inst.new_triples],
    }
    for k, v in inst.extra.items():
        d.setdefault(k, v)
    return d


def _triples(raw: Any, name: str, index: int) -> list[Triple]:
    if not isinstance(raw, list):
        raise SchemaError(name, index, "expected a list of triples")
    out = []
    for t in raw:
        if not (isinstance(t, list) and len(t) == 3 and all(isinstance(x, str) for x in t)):
            raise SchemaError(name, index, f"bad triple {t!r}")
        out.append(Triple(*t))
    return out


def instance_from_dict(d: dict, index: int = 0) -> Instance:
    if not isinstance(d, dict):
        raise SchemaError("instance", index, "expected an object")
    for name in ("schema_version", *REQUIRED):
        if name not in d:
            raise SchemaError(name, index, "missing")
    if str(d["schema_version"]) != SCHEMA_VERSION:
        raise SchemaError("schema_version", index, f"unsupported version {d['schema_version']!r}")
    for name in ("answer", "new_answer", "id"):
        if not isinstance(d[name], str):
            raise SchemaError(name, index, "expected a string")
    if not isinstance(d["questions"], list) or not all(isinstance(q, str) for q in d["questions"]):
        raise SchemaError("questions", index, "expected a list of strings")
    try:
        edits = [Edit.from_dict(e) for e in d["edits"]]
    except (KeyError, TypeError, ValueError, HopEditError) as exc:
        raise SchemaError("edits", index, str(exc)) from exc
    orig = _triples(d["orig_triples"], "orig_triples", index)
    new = _triples(d["new_triples"], "new_triples", index)
    if d["hops"] != len(orig):
        raise SchemaError("hops", index, f"hops={d['hops']} but chain has {len(orig)} triples")
    extra = {k: v for k, v in d.items() if k not in KNOWN}
    return Instance(
        edits=edits,
        questions=list(d["questions"]),
        answer=d["answer"],
        new_answer=d["new_answer"],
        orig_triples=orig,
        new_triples=new,
        id=d["id"],
        answer_aliases=list(d.get("answer_aliases", [])),
        new_answer_aliases=list(d.get("new_answer_aliases", [])),
        extra=extra,
    )


def dumps_instances(instances: Iterable[Instance]) -> str:
    return json.dumps([instance_to_dict(i) for i in instances], indent=1, ensure_ascii=False) + "\n"


def save_instances(instances: Iterable[Instance], path: str | Path) -> None:
    Path(path).write_text(dumps_instances(instances), encoding="utf-8")


def load_instances(path: str | Path) -> list[Instance]:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise SchemaError("root", None, "expected a JSON array")
    return [instance_from_dict(d, i) for i, d in enumerate(raw)]


@dataclass
class CorpusStats:
    cells: dict[tuple[int, int], int] = field(default_factory=dict)
    total: int = 0

    def by_hops(self) -> dict[int, int]:
        out: Counter = Counter()
        for (h, _), c in self.cells.items():
            out[h] += c
        return dict(out)

    def by_edits(self) -> dict[int, int]:
        out: Counter = Counter()
        for (_, e), c in self.cells.items():
            out[e] += c
        return dict(out)

    def to_dict(self) -> dict:
        return {
            "cells": {f"{h}-hop/{e}-edit": c for (h, e), c in sorted(self.cells.items())},
            "by_hops": {str(k): v for k, v in sorted(self.by_hops().items())},
            "by_edits": {str(k): v for k, v in sorted(self.by_edits().items())},
            "total": self.total,
        }

    def table(self) -> str:
        lines = [f"{'#Edits':<8}{'2-hop':>8}{'3-hop':>8}{'4-hop':>8}{'Total':>8}"]
        for e in (1, 2, 3, 4):
            row = [self.cells.get((h, e), 0) if e <= h else None for h in (2, 3, 4)]
            cells = "".join(f"{'-' if c is None else c:>8}" for c in row)
            lines.append(f"{e:<8}{cells}{sum(c or 0 for c in row):>8}")
        hops = self.by_hops()
        lines.append(f"{'All':<8}" + "".join(f"{hops.get(h, 0):>8}" for h in (2, 3, 4)) + f"{self.total:>8}")
        return "\n".join(lines)


def stats(instances: Sequence[Instance]) -> CorpusStats:
    cells = Counter((inst.hops, len(inst.edits)) for inst in instances)
    return CorpusStats(dict(cells), len(instances))


# -- importer for the publicly released benchmark layout --------------------

def _mapping() -> dict:
    path = resources.files("hopedit") / "data" / "public_mapping.json"
    return json.loads(path.read_text(encoding="utf-8"))


def _dig(d: dict, dotted: str):
    cur: Any = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


@dataclass
class ImportResult:
    instances: list[Instance]
    unmapped: dict[str, int]


def import_public(path: str | Path, mapping: dict | None = None) -> ImportResult:
    """Best-effort conversion of externally released records.

    Field names come from a mapping table (``data/public_mapping.json``);
    fields it does not cover are counted in ``unmapped`` and kept in
    ``extra`` rather than guessed at.
    """
    mapping = mapping or _mapping()
    fields = mapping["fields"]
    edit_spec = mapping["edits"]
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise SchemaError("root", None, "expected a JSON array")
    used_top = {v.split(".")[0] for v in fields.values()} | {edit_spec["source"].split(".")[0]}
    unmapped: Counter = Counter()
    out = []
    for i, rec in enumerate(raw):
        for k in rec:
            if k not in used_top:
                unmapped[k] += 1
        orig = [Triple(*t) for t in (_dig(rec, fields["orig_triples"]) or [])]
        new = [Triple(*t) for t in (_dig(rec, fields["new_triples"]) or [])]
        edits = []
        for e in _dig(rec, edit_spec["source"]) or []:
            s, r, o = e
            old = next((t.o for t in orig if (t.s, t.r) == (s, r)), None)
            if old is None:
                raise SchemaError(edit_spec["source"], i, f"edit ({s}, {r}) has no matching original triple")
            edits.append(Edit(s, r, old, o))
        answer = _dig(rec, fields["answer"])
        new_answer = _dig(rec, fields["new_answer"])
        if answer is None:
            raise SchemaError(fields["answer"], i, "missing")
        if new_answer is None:
            raise SchemaError(fields["new_answer"], i, "missing")
        out.append(Instance(
            edits=edits,
            questions=list(_dig(rec, fields["questions"]) or []),
            answer=answer,
            new_answer=new_answer,
            orig_triples=orig,
            new_triples=new,
            id=str(_dig(rec, fields["id"]) or ""),
            answer_aliases=list(_dig(rec, fields["answer_aliases"]) or []),
            new_answer_aliases=list(_dig(rec, fields["new_answer_aliases"]) or []),
            extra={k: v for k, v in rec.items() if k not in used_top},
        ))
    return ImportResult(out, dict(unmapped))
