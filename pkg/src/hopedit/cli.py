"""Command-line entry point: sample, edit, eval, mello, stats, diff.

Every command takes ``--config run.json`` plus flags; flags win over the
file. File outputs are deterministic for a fixed seed and inputs; wall-clock
data goes only to ``metadata.json``.

Exit codes: 0 success, 1 evaluation-time error, 2 configuration/input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from . import __version__
from .dataset import dumps_instances, load_instances, stats as corpus_stats
from .edits import generate_instances, generate_temporal_instances
from .errors import HopEditError, SchemaError
from .kg import Edit, KnowledgeGraph, diff_snapshots, load_graph, load_relations
from .lm.http import TOKEN_ENV, Decoding, HttpBackend, PromptLibrary
from .lm.oracle import OracleBackend, StochasticRecall
from .mello import exact_retriever, cosine_retriever, run_mello
from .metrics import EDITORS, evaluate, format_table
from .retrieval import DEFAULT_DIM, HashEmbedder, HttpEmbedder, build_memory
from .synthetic import perturb, relations_path, synthetic_graph, walkthrough_paths

log = logging.getLogger("hopedit")

EXIT_OK, EXIT_EVAL, EXIT_INPUT = 0, 1, 2
_SECRET_KEYS = {"token", "api_key", "apikey", "auth_token", "authorization", "password"}


class ConfigError(HopEditError):
    pass


@dataclass
class RunConfig:
    graph: str | None = None
    graph_new: str | None = None
    entities: str | None = None
    entities_new: str | None = None
    relations: str | None = None
    synthetic: int = 600
    graph_seed: int = 0
    perturb: int = 200
    seed: int | None = None
    hops: list[int] = field(default_factory=lambda: [2, 3, 4])
    count: int = 300
    k: list[int] = field(default_factory=lambda: [1])
    editor: str = "mello"
    modes: list[str] = field(default_factory=lambda: ["direct"])
    backend: str = "oracle"
    endpoint: str | None = None
    prompts: str | None = None
    recall: float | None = None
    embedding: str = "hash"
    embed_endpoint: str | None = None
    embed_dim: int = DEFAULT_DIM
    retrieval: str = "cosine"
    diff_relations: list[str] | None = None
    out: str = "runs"
    run_id: str | None = None
    max_hops: int = 8
    retries: int = 1000
    max_attempts: int | None = None
    timeout: float = 60.0
    http_attempts: int = 3
    jobs: int = 1

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        secrets = sorted(k for k in raw if k.lower() in _SECRET_KEYS)
        if secrets:
            raise ConfigError(f"config must not carry credentials ({', '.join(secrets)}); "
                              f"set {TOKEN_ENV} in the environment instead")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def validate(self) -> None:
        if self.editor not in EDITORS:
            raise ConfigError(f"editor must be one of {EDITORS}")
        if self.backend not in ("oracle", "http"):
            raise ConfigError("backend must be 'oracle' or 'http'")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("backend 'http' needs --endpoint")
        if self.backend == "http" and self.editor == "hard-edit":
            raise ConfigError("the hard-edit simulator needs the oracle backend")
        if self.embedding not in ("hash", "http"):
            raise ConfigError("embedding must be 'hash' or 'http'")
        if self.embedding == "http" and not self.embed_endpoint:
            raise ConfigError("embedding 'http' needs --embed-endpoint")
        if self.retrieval not in ("cosine", "exact"):
            raise ConfigError("retrieval must be 'cosine' or 'exact'")
        if any(h not in (2, 3, 4) for h in self.hops) or not self.hops:
            raise ConfigError("hops must be drawn from 2, 3, 4")
        if any(k < 1 for k in self.k) or not self.k:
            raise ConfigError("every k must be positive")
        if self.recall is not None and not 0 <= self.recall <= 1:
            raise ConfigError("recall must lie in [0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def fingerprint(self) -> str:
        d = _portable(self)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def sub_rng(seed: int, name: str) -> random.Random:
    """Independent stream per consumer, derived from the run seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


# -- plumbing ------------------------------------------------------------------

BUILTIN = "builtin:walkthrough"


def _relations_file(cfg: RunConfig) -> str:
    return cfg.relations or str(relations_path())


def _builtin(path: str | None, key: str) -> str | None:
    """Map ``builtin:walkthrough`` to the bundled fixture file ``key``."""
    if path == BUILTIN:
        return str(walkthrough_paths()[key])
    return path


def load_run_graph(cfg: RunConfig) -> KnowledgeGraph:
    if cfg.graph:
        entities = cfg.entities
        if cfg.graph == BUILTIN and entities is None:
            entities = BUILTIN
        src = _builtin(cfg.graph, "triples")
        return load_graph(src, _relations_file(cfg), Path(src).stem, _builtin(entities, "entities"))
    rels = load_relations(cfg.relations) if cfg.relations else None
    return synthetic_graph(cfg.synthetic, seed=cfg.graph_seed, relations=rels)


def load_new_graph(cfg: RunConfig, old: KnowledgeGraph) -> KnowledgeGraph:
    if cfg.graph_new:
        entities = cfg.entities_new or cfg.entities
        if cfg.graph_new == BUILTIN and entities is None:
            entities = BUILTIN
        src = _builtin(cfg.graph_new, "triples_new")
        return load_graph(src, _relations_file(cfg), Path(src).stem, _builtin(entities, "entities"))
    if cfg.graph:
        raise ConfigError("--graph-new is required when --graph is given")
    return perturb(old, cfg.perturb, sub_rng(cfg.graph_seed, "snapshot"), cfg.diff_relations)


def make_base(cfg: RunConfig, g: KnowledgeGraph):
    if cfg.backend == "http":
        prompts = PromptLibrary.from_dir(cfg.prompts) if cfg.prompts else None
        base = HttpBackend(cfg.endpoint, prompts, Decoding(), timeout=cfg.timeout,
                           max_attempts=cfg.http_attempts)
    else:
        base = OracleBackend(g)
    if cfg.recall is not None:
        seed = cfg.seed if cfg.seed is not None else 0
        base = StochasticRecall(base, cfg.recall, sub_rng(seed, "backend"))
    return base


def make_embedder(cfg: RunConfig):
    if cfg.embedding == "http":
        return HttpEmbedder(cfg.embed_endpoint, cfg.embed_dim, timeout=cfg.timeout)
    return HashEmbedder(cfg.embed_dim)


def run_dir(cfg: RunConfig, command: str) -> Path:
    run_id = cfg.run_id or f"{command}-{cfg.fingerprint()}"
    path = Path(cfg.out) / run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# arguments of the current main() call, recorded in the metadata sidecar
_invocation: list[str] = []


def write_metadata(path: Path, command: str, started: float) -> None:
    _write(path / "metadata.json", _dump({
        "command": command,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "elapsed_s": round(time.time() - started, 3),
        "argv": _invocation,
    }))


def _portable(cfg: RunConfig) -> dict:
    """Config as recorded in provenance; output placement is left out so
    identical runs written to different places stay byte-identical."""
    d = asdict(cfg)
    for k in ("out", "run_id", "jobs"):
        d.pop(k)
    return d


def _require_seed(cfg: RunConfig, command: str) -> int:
    if cfg.seed is None:
        raise ConfigError(f"'{command}' needs --seed (or 'seed' in the config)")
    return cfg.seed


def _graph_record(g: KnowledgeGraph, cfg: RunConfig) -> dict:
    src = cfg.graph or f"synthetic(n={cfg.synthetic}, graph_seed={cfg.graph_seed})"
    return {"snapshot": g.snapshot, "source": src, "triples": len(g),
            "entities": len(g.entities), "relations": len(g.relations)}


# -- commands ------------------------------------------------------------------

def cmd_sample(cfg: RunConfig) -> int:
    started = time.time()
    seed = _require_seed(cfg, "sample")
    g = load_run_graph(cfg)
    res = generate_instances(
        g, cfg.count, cfg.hops, sub_rng(seed, "sampler"),
        lm=make_base(cfg, g), retries=cfg.retries, max_attempts=cfg.max_attempts,
        edit_rng=sub_rng(seed, "edits"),
    )
    out = run_dir(cfg, "sample")
    _write(out / "instances.json", dumps_instances(res.instances))
    _write(out / "provenance.json", _dump({
        "command": "sample",
        "seed": seed,
        "graph": _graph_record(g, cfg),
        "hops": cfg.hops,
        "requested": cfg.count,
        "produced": len(res.instances),
        "shortfall": res.shortfall,
        "stats": res.stats.to_dict(),
        "config": _portable(cfg),
    }))
    write_metadata(out, "sample", started)
    print(f"wrote {len(res.instances)} instances to {out / 'instances.json'}")
    if res.shortfall:
        print(f"shortfall: {res.shortfall} of {cfg.count} requested instances could not be built "
              f"within {res.stats.attempts} attempts", file=sys.stderr)
    return EXIT_OK


def cmd_edit(cfg: RunConfig) -> int:
    """Temporal instances: the edits are real changes between two snapshots."""
    started = time.time()
    seed = _require_seed(cfg, "edit")
    old = load_run_graph(cfg)
    new = load_new_graph(cfg, old)
    rels = cfg.diff_relations or sorted(old.relations)
    diff = diff_snapshots(old, new, rels)
    res = generate_temporal_instances(
        old, new, diff, cfg.count, cfg.hops, sub_rng(seed, "sampler"),
        lm=make_base(cfg, old), retries=cfg.retries, max_attempts=cfg.max_attempts,
    )
    out = run_dir(cfg, "edit")
    _write(out / "instances.json", dumps_instances(res.instances))
    _write(out / "provenance.json", _dump({
        "command": "edit",
        "seed": seed,
        "graph": _graph_record(old, cfg),
        "graph_new": {"snapshot": new.snapshot, "triples": len(new)},
        "diff_relations": rels,
        "diff_size": len(diff),
        "requested": cfg.count,
        "produced": len(res.instances),
        "shortfall": res.shortfall,
        "stats": res.stats.to_dict(),
        "config": _portable(cfg),
    }))
    write_metadata(out, "edit", started)
    print(f"wrote {len(res.instances)} temporal instances ({len(diff)} snapshot changes) "
          f"to {out / 'instances.json'}")
    if res.shortfall:
        print(f"shortfall: {res.shortfall} of {cfg.count} requested instances", file=sys.stderr)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, instances_path: str) -> int:
    started = time.time()
    instances = load_instances(instances_path)
    g = load_run_graph(cfg)
    base = make_base(cfg, g)
    embedder = make_embedder(cfg)
    out = run_dir(cfg, "eval")
    reports, failed = [], []
    for k in cfg.k:
        def progress(bi, info, k=k):
            log.info("k=%d batch %d: %d instances, %d edits", k, bi, info["instances"], info["edits"])
        try:
            rep = evaluate(instances, g, cfg.editor, k, cfg.modes, base, embedder, cfg.retrieval,
                           cfg.max_hops, cfg.jobs, config={"instances": Path(instances_path).name},
                           on_batch=progress)
        except HopEditError as exc:
            failed.append(k)
            _write(out / f"error_k{k}.json", _dump({"k": k, "error": f"{type(exc).__name__}: {exc}"}))
            print(f"k={k}: {type(exc).__name__}: {exc}", file=sys.stderr)
            continue
        reports.append(rep)
        _write(out / f"report_{cfg.editor}_k{k}.json", rep.to_json() + "\n")
        _write(out / f"table_{cfg.editor}_k{k}.txt", format_table([rep]) + "\n")
    if reports:
        table = format_table(reports)
        _write(out / f"table_{cfg.editor}.txt", table + "\n")
        print(table)
    write_metadata(out, "eval", started)
    return EXIT_EVAL if failed else EXIT_OK


def load_memory_file(path: str) -> list[Edit]:
    path = _builtin(path, "memory")
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("memory", None, f"not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaError("memory", None, "expected a JSON list of edits")
    edits = []
    for i, d in enumerate(raw):
        try:
            edits.append(Edit.from_dict(d))
        except Exception as exc:
            raise SchemaError("memory", i, f"bad edit {d!r}: {exc}") from exc
    return edits


def cmd_mello(cfg: RunConfig, question: str, memory_path: str, trace_out: str | None) -> int:
    g = load_run_graph(cfg)
    edits = load_memory_file(memory_path)
    for e in edits:
        g.entity(e.s)
        g.relation(e.r)
        g.entity(e.new)
    memory = build_memory(edits, g, make_embedder(cfg))
    retriever = exact_retriever if cfg.retrieval == "exact" else cosine_retriever
    trace = run_mello(question, make_base(cfg, g), memory, cfg.max_hops, retriever, g)
    print(trace.transcript())
    path = Path(trace_out) if trace_out else run_dir(cfg, "mello") / "trace.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.write_jsonl(path)
    if trace.terminated == "backend-error":
        print(f"backend error: {trace.error}", file=sys.stderr)
        return EXIT_EVAL
    return EXIT_OK


def cmd_stats(instances_path: str, as_json: bool) -> int:
    st = corpus_stats(load_instances(instances_path))
    print(_dump(st.to_dict()) if as_json else st.table())
    return EXIT_OK


def cmd_diff(cfg: RunConfig, out_path: str | None) -> int:
    old = load_run_graph(cfg)
    new = load_new_graph(cfg, old)
    edits = diff_snapshots(old, new, cfg.diff_relations or sorted(old.relations))
    text = json.dumps([e.to_dict() for e in edits], indent=1, ensure_ascii=False) + "\n"
    if out_path:
        _write(Path(out_path), text)
        print(f"{len(edits)} changed facts written to {out_path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _str_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run config (overrides --config)")
    g.add_argument("--config", help="JSON run config")
    g.add_argument("--graph", help=f"triple TSV or {BUILTIN}; omit for a synthetic graph")
    g.add_argument("--graph-new", help="second snapshot TSV")
    g.add_argument("--entities", help="entity metadata JSON")
    g.add_argument("--entities-new")
    g.add_argument("--relations", help="relation metadata JSON")
    g.add_argument("--synthetic", type=int, help="synthetic graph size (entities)")
    g.add_argument("--graph-seed", type=int)
    g.add_argument("--perturb", type=int, help="changes in a synthetic second snapshot")
    g.add_argument("--seed", type=int)
    g.add_argument("--hops", type=_int_list, help="e.g. 2,3,4")
    g.add_argument("--count", type=int)
    g.add_argument("--k", type=_int_list, help="batch sizes, e.g. 1,100,1000")
    g.add_argument("--editor", choices=EDITORS)
    g.add_argument("--modes", type=_str_list, help="direct,cot")
    g.add_argument("--backend", choices=("oracle", "http"))
    g.add_argument("--endpoint")
    g.add_argument("--prompts", help="directory of prompt templates")
    g.add_argument("--recall", type=float, help="per-fact recall probability of the base model")
    g.add_argument("--embedding", choices=("hash", "http"))
    g.add_argument("--embed-endpoint")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--retrieval", choices=("cosine", "exact"))
    g.add_argument("--diff-relations", type=_str_list)
    g.add_argument("--out", help="output directory")
    g.add_argument("--run-id")
    g.add_argument("--max-hops", type=int)
    g.add_argument("--retries", type=int)
    g.add_argument("--max-attempts", type=int)
    g.add_argument("--timeout", type=float)
    g.add_argument("--http-attempts", type=int)
    g.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hopedit", description="Multi-hop knowledge-editing benchmark tools.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="generate counterfactual instances")
    _add_common(p)

    p = sub.add_parser("edit", help="generate temporal instances from a snapshot diff")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate an editor on an instance file")
    p.add_argument("instances")
    _add_common(p)

    p = sub.add_parser("mello", help="run the memory-based loop on one question")
    p.add_argument("question")
    p.add_argument("--memory", required=True, help=f"JSON list of edits ({BUILTIN} for the bundled one)")
    p.add_argument("--trace", help="JSONL trace path")
    _add_common(p)

    p = sub.add_parser("stats", help="hop/edit breakdown of an instance file")
    p.add_argument("instances")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("diff", help="fact changes between two snapshots")
    p.add_argument("--output", help="write the edits here instead of stdout")
    _add_common(p)
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    global _invocation
    argv = sys.argv[1:] if argv is None else list(argv)
    _invocation = argv
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            return cmd_stats(args.instances, args.json)
        cfg = resolve_config(args)
        if args.command == "sample":
            return cmd_sample(cfg)
        if args.command == "edit":
            return cmd_edit(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.instances)
        if args.command == "mello":
            return cmd_mello(cfg, args.question, args.memory, args.trace)
        if args.command == "diff":
            return cmd_diff(cfg, args.output)
    except (HopEditError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
