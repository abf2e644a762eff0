"""Edit-wise, instance-wise and multi-hop accuracy, and the batch harness."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

from .edits import Instance, build_edit_batch
from .errors import EmptyInputError, HopEditError
from .kg import Edit, KnowledgeGraph
from .lm.base import bind_context
from .lm.oracle import HardEditBackend, OracleBackend
from .mello import DEFAULT_MAX_HOPS, MelloModel, cosine_retriever, exact_retriever
from .retrieval import Embedder, build_memory
from .templates import answers_match, render_cloze

EDITORS = ("none", "hard-edit", "mello")
PHASES = ("pre", "post")


def _cloze(g: KnowledgeGraph, s: str, r: str) -> str:
    return render_cloze(g.relation(r), g.label(s)).text


def edit_wise(model, edits: Sequence[Edit], g: KnowledgeGraph) -> float:
    """Share of edits whose cloze the model completes with the new object."""
    if not edits:
        raise EmptyInputError("edit_wise needs at least one edit")
    hits = sum(answers_match(model.answer_cloze(_cloze(g, e.s, e.r)), g.label(e.new)) for e in edits)
    return hits / len(edits)


def instance_wise(model, inst: Instance, phase: str, g: KnowledgeGraph) -> bool:
    """All facts of C (pre) or C* (post) recalled."""
    triples = inst.orig_triples if phase == "pre" else inst.new_triples
    return all(answers_match(model.answer_cloze(_cloze(g, t.s, t.r)), g.label(t.o)) for t in triples)


def multi_hop(model, inst: Instance, phase: str, mode: str = "direct") -> bool:
    """Any of the questions answered with a (pre) or a* (post)."""
    if phase == "pre":
        target, aliases = inst.answer, inst.answer_aliases
    else:
        target, aliases = inst.new_answer, inst.new_answer_aliases
    model = bind_context(model, inst)
    results = [answers_match(model.answer_multihop(q, mode), target, aliases) for q in inst.questions]
    return any(results)


@dataclass
class Tally:
    true: int = 0
    total: int = 0

    def add(self, ok: bool) -> None:
        self.true += int(ok)
        self.total += 1

    @property
    def ratio(self) -> float:
        return self.true / self.total if self.total else 0.0


@dataclass
class EvalReport:
    k: int
    editor: str
    modes: list[str]
    edit_wise: float
    instance_wise_pre: float
    instance_wise_post: float
    multihop_pre: dict[str, float]
    multihop_post: dict[str, float]
    counts: dict[str, int]
    per_hop: dict[str, dict]
    fingerprint: str
    batches: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _ratios(t: dict) -> dict:
    return {k: v.ratio for k, v in t.items()}


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def make_editor(editor: str, g: KnowledgeGraph, edits: Sequence[Edit], base=None,
                embedder: Embedder | None = None, retrieval: str = "cosine",
                max_hops: int = DEFAULT_MAX_HOPS):
    """Edited model for one batch."""
    base = base if base is not None else OracleBackend(g)
    if editor == "none":
        return base
    if editor == "hard-edit":
        return HardEditBackend(g, edits)
    if editor == "mello":
        memory = build_memory(edits, g, embedder)
        retriever = exact_retriever if retrieval == "exact" else cosine_retriever
        return MelloModel(base, memory, max_hops, retriever, edit_labels=g)
    raise HopEditError(f"unknown editor {editor!r}")


def evaluate(
    instances: Sequence[Instance],
    g: KnowledgeGraph,
    editor: str,
    k: int,
    modes: Sequence[str] = ("direct",),
    base=None,
    embedder: Embedder | None = None,
    retrieval: str = "cosine",
    max_hops: int = DEFAULT_MAX_HOPS,
    jobs: int = 1,
    config: dict | None = None,
    on_batch: Callable[[int, dict], None] | None = None,
) -> EvalReport:
    """Run every metric over batches of ``k`` instances.

    Each batch's edited model is built from the union of the batch's edits.
    Micro-averaged over instances (edits, for edit-wise). With
    ``editor="none"`` nothing is edited, so post-phase targets fall back to
    the original chain and answer.
    """
    if editor not in EDITORS:
        raise HopEditError(f"unknown editor {editor!r}")
    base = base if base is not None else OracleBackend(g)
    batches = build_edit_batch(instances, k)
    ew = Tally()
    iw = {p: Tally() for p in PHASES}
    mh = {(p, m): Tally() for p in PHASES for m in modes}
    per_hop: dict[int, dict] = {}

    def score(inst: Instance, model) -> dict:
        post_inst = inst
        if editor == "none":
            post_inst = Instance(inst.edits, inst.questions, inst.answer, inst.answer,
                                 inst.orig_triples, inst.orig_triples, inst.id,
                                 inst.answer_aliases, inst.answer_aliases)
        row = {
            "iw_pre": instance_wise(base, inst, "pre", g),
            "iw_post": instance_wise(model, post_inst, "post", g),
        }
        for m in modes:
            row[("pre", m)] = multi_hop(base, inst, "pre", m)
            row[("post", m)] = multi_hop(model, post_inst, "post", m)
        return row

    for bi, (group, edits) in enumerate(batches):
        model = make_editor(editor, g, edits, base, embedder, retrieval, max_hops)
        for e in edits:
            ew.add(answers_match(model.answer_cloze(_cloze(g, e.s, e.r)), g.label(e.new)))
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(lambda i: score(i, model), group))
        else:
            rows = [score(i, model) for i in group]
        for inst, row in zip(group, rows):
            iw["pre"].add(row["iw_pre"])
            iw["post"].add(row["iw_post"])
            hop = per_hop.setdefault(inst.hops, {
                "instances": 0,
                "iw": {p: Tally() for p in PHASES},
                "mh": {(p, m): Tally() for p in PHASES for m in modes},
            })
            hop["instances"] += 1
            hop["iw"]["pre"].add(row["iw_pre"])
            hop["iw"]["post"].add(row["iw_post"])
            for p in PHASES:
                for m in modes:
                    mh[(p, m)].add(row[(p, m)])
                    hop["mh"][(p, m)].add(row[(p, m)])
        if on_batch is not None:
            on_batch(bi, {"instances": len(group), "edits": len(edits)})

    per_hop_out = {}
    for hop, d in sorted(per_hop.items()):
        per_hop_out[f"{hop}-hop"] = {
            "instances": d["instances"],
            "instance_wise_pre": d["iw"]["pre"].ratio,
            "instance_wise_post": d["iw"]["post"].ratio,
            "multihop_pre": {m: d["mh"][("pre", m)].ratio for m in modes},
            "multihop_post": {m: d["mh"][("post", m)].ratio for m in modes},
        }
    cfg = {"editor": editor, "k": k, "modes": list(modes), "retrieval": retrieval,
           "max_hops": max_hops, **(config or {})}
    return EvalReport(
        k=k,
        editor=editor,
        modes=list(modes),
        edit_wise=ew.ratio,
        instance_wise_pre=iw["pre"].ratio,
        instance_wise_post=iw["post"].ratio,
        multihop_pre={m: mh[("pre", m)].ratio for m in modes},
        multihop_post={m: mh[("post", m)].ratio for m in modes},
        counts={
            "instances": len(instances),
            "edits": ew.total,
            "edits_recalled": ew.true,
            "instance_wise_pre": iw["pre"].true,
            "instance_wise_post": iw["post"].true,
            **{f"multihop_{p}_{m}": mh[(p, m)].true for p in PHASES for m in modes},
        },
        per_hop=per_hop_out,
        fingerprint=config_fingerprint(cfg),
        batches=len(batches),
    )


def format_table(reports: Iterable[EvalReport]) -> str:
    """Fixed-width table: Edit-wise, Instance-wise, Multi-hop, Multi-hop (CoT)."""
    header = f"{'Editor':<10} {'k':>5} {'Edit-wise':>10} {'Instance-wise':>14} {'Multi-hop':>10} {'Multi-hop (CoT)':>16}"
    lines = [header, "-" * len(header)]
    for r in reports:
        cot = r.multihop_post.get("cot")
        cot_s = f"{100 * cot:.1f}" if cot is not None else "-"
        direct = r.multihop_post.get("direct")
        direct_s = f"{100 * direct:.1f}" if direct is not None else "-"
        lines.append(
            f"{r.editor:<10} {r.k:>5} {100 * r.edit_wise:>10.1f} {100 * r.instance_wise_post:>14.1f} "
            f"{direct_s:>10} {cot_s:>16}"
        )
    return "\n".join(lines)
