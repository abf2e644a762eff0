"""One check per acceptance criterion; each prints a PASS/FAIL line.

Run under pytest (lines are repeated in the terminal summary) or directly
with ``python tests/test_acceptance.py``.
"""

import json
import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, distinct_statement_edits
from oracles import (
    argmax_sparse,
    connected,
    index_by_scan,
    ref_edit_wise,
    ref_instance_wise,
    ref_multi_hop,
    same_answer,
    sparse_embed,
    violated_rules,
)
from hopedit.cli import main
from hopedit.edits import generate_instances
from hopedit.kg import apply_edits, diff_snapshots
from hopedit.lm import HardEditBackend, OracleBackend, StochasticRecall
from hopedit.metrics import edit_wise, evaluate, instance_wise, multi_hop
from hopedit.retrieval import build_memory, retrieve_top1
from hopedit.sampler import filter_recallable, sample_chain
from hopedit.synthetic import perturb, synthetic_graph

IVANKA_Q = "What is the capital city of the country of citizenship of Ivanka Trump's spouse?"


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{n:>2}] {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def setting():
    """Synthetic graph plus a 300-instance corpus, with the time it took."""
    t0 = time.perf_counter()
    g = synthetic_graph(600, seed=21)
    res = generate_instances(g, 300, (2, 3, 4), random.Random(21), lm=OracleBackend(g))
    return g, res.instances, time.perf_counter() - t0


class Noisy:
    """Deterministic per prompt, wrong on roughly ``rate`` of queries."""

    def __init__(self, base, rate, salt):
        self.base, self.rate, self.salt = base, rate, salt

    def _bad(self, text):
        return random.Random(f"{self.salt}|{text}").random() < self.rate

    def with_context(self, inst):
        return Noisy(self.base.with_context(inst), self.rate, self.salt)

    def answer_cloze(self, prompt):
        return "nonsense" if self._bad(prompt) else self.base.answer_cloze(prompt)

    def answer_multihop(self, q, mode="direct"):
        return "nonsense" if self._bad(q) else self.base.answer_multihop(q, mode)


def test_01_metric_fidelity():
    t0 = time.perf_counter()
    g = synthetic_graph(500, seed=31)
    insts = generate_instances(g, 100, (2, 3, 4), random.Random(31), lm=OracleBackend(g)).instances
    checks = mismatches = 0
    for i, inst in enumerate(insts):
        models = [OracleBackend(g), HardEditBackend(g, inst.edits), Noisy(OracleBackend(g), 0.3, i),
                  Noisy(HardEditBackend(g, inst.edits), 0.4, -i)]
        for m in models:
            got = [edit_wise(m, inst.edits, g),
                   instance_wise(m, inst, "pre", g), instance_wise(m, inst, "post", g),
                   multi_hop(m, inst, "pre"), multi_hop(m, inst, "post")]
            bound = m.with_context(inst)
            want = [ref_edit_wise(m, inst.edits, g.relations, g.label),
                    ref_instance_wise(m, inst.orig_triples, g.relations, g.label),
                    ref_instance_wise(m, inst.new_triples, g.relations, g.label),
                    ref_multi_hop(bound, inst.questions, inst.answer, inst.answer_aliases),
                    ref_multi_hop(bound, inst.questions, inst.new_answer, inst.new_answer_aliases)]
            checks += len(got)
            mismatches += sum(a != b for a, b in zip(got, want))
    dt = time.perf_counter() - t0
    report(1, "metric fidelity", len(insts) == 100 and mismatches == 0 and dt < 10,
           f"{checks} metric values on {len(insts)} instances, {mismatches} mismatches, {dt:.1f}s (< 10s)")


def test_02_hard_edit_failure_mode(setting):
    g, insts, gen_time = setting
    t0 = time.perf_counter()
    rep = evaluate(insts, g, "hard-edit", 1)
    dt = time.perf_counter() - t0 + gen_time
    ok = (len(g.entities) >= 500 and len(g.relations) >= 10 and len(insts) >= 300
          and rep.edit_wise == 1.0 and rep.multihop_post["direct"] <= 0.05
          and rep.multihop_pre["direct"] == 1.0 and dt < 60)
    report(2, "hard-edit failure mode", ok,
           f"{len(g.entities)} entities, {len(g.relations)} relations, {len(insts)} instances; "
           f"edit-wise {rep.edit_wise:.2f}, multi-hop post {rep.multihop_post['direct']:.3f} (<= 0.05), "
           f"base multi-hop pre {rep.multihop_pre['direct']:.2f}, {dt:.1f}s (< 60s)")


def test_03_mello_beats_hard_edit(setting):
    g, insts, _ = setting
    t0 = time.perf_counter()
    mello = {k: evaluate(insts, g, "mello", k).multihop_post["direct"] for k in (1, 100, 1000)}
    hard = {k: evaluate(insts, g, "hard-edit", k).multihop_post["direct"] for k in (1, 100, 1000)}
    dt = time.perf_counter() - t0
    ok = (mello[1] >= 0.95 and mello[100] >= 0.90 and all(mello[k] > hard[k] for k in mello) and dt < 300)
    detail = ", ".join(f"k={k}: mello {mello[k]:.3f} vs hard-edit {hard[k]:.3f}" for k in mello)
    report(3, "mello beats hard-edit", ok, f"{detail}; need >= 0.95 at k=1, >= 0.90 at k=100; {dt:.1f}s (< 300s)")


def test_04_mello_exact_lookup(setting):
    g, insts, _ = setting
    t0 = time.perf_counter()
    accs = {k: evaluate(insts, g, "mello", k, retrieval="exact").multihop_post["direct"] for k in (1, 100, 1000)}
    dt = time.perf_counter() - t0
    report(4, "mello with exact lookup", all(a == 1.0 for a in accs.values()) and dt < 60,
           ", ".join(f"k={k}: {a:.3f}" for k, a in accs.items()) + f" (= 1.000), {dt:.1f}s (< 60s)")


def test_05_sampler_soundness():
    t0 = time.perf_counter()
    g = synthetic_graph(2000, seed=41)
    rng = random.Random(41)
    bad_rules = bad_links = 0
    for i in range(10_000):
        chain = sample_chain(g, (2, 3, 4)[i % 3], rng)
        tup = [(t.s, t.r, t.o) for t in chain.triples]
        cls = {e: g.entity(e).cls for t in tup for e in (t[0], t[2])}
        bad_rules += bool(violated_rules(tup, g.relations, cls))
        bad_links += not connected(tup)
    dt = time.perf_counter() - t0
    report(5, "sampler soundness", bad_rules == 0 and bad_links == 0 and dt < 60,
           f"10000 chains, {bad_rules} constraint violations, {bad_links} connectivity violations, {dt:.1f}s (< 60s)")


def test_06_retrieval_self_consistency():
    g, edits = distinct_statement_edits(10_000)
    worst, misses = 0.0, 0
    for size in (1, 100, 3000, 10_000):
        memory = build_memory(edits[:size], g)
        for e in memory.entries:
            hit, score = retrieve_top1(memory, e.text)
            misses += hit.id != e.id
            worst = max(worst, abs(score - 1.0))
    memory = build_memory(edits, g)
    vectors = [sparse_embed(e.text) for e in memory.entries]
    rng = random.Random(61)
    vocab = sorted({w for e in memory.entries for w in e.text.rstrip(".").split()})
    queries = []
    for i in range(1000):
        if i % 2:
            queries.append(" ".join(rng.sample(vocab, rng.randint(2, 8))) + "?")
        else:
            words = memory.entries[rng.randrange(len(memory))].text.split()
            words.pop(rng.randrange(len(words)))
            queries.append(" ".join(words))
    disagree = 0
    for q in queries:
        hit, _ = retrieve_top1(memory, q)
        disagree += hit.id != argmax_sparse(vectors, q)[0]
    report(6, "retrieval self-consistency", misses == 0 and worst <= 1e-6 and disagree == 0,
           f"sizes 1/100/3000/10000: {misses} self-retrieval misses, max |score-1| {worst:.1e} (<= 1e-6); "
           f"1000 random queries: {disagree} disagreements with brute-force argmax")


def test_07_walkthrough_transcript(tmp_path, capsys):
    trace = tmp_path / "trace.jsonl"
    rc = main(["mello", IVANKA_Q, "--graph", "builtin:walkthrough", "--memory", "builtin:walkthrough",
               "--trace", str(trace)])
    out = capsys.readouterr().out.strip().splitlines()
    steps = [json.loads(line) for line in trace.read_text(encoding="utf-8").splitlines()]
    verdicts = [s["verdict"] for s in steps if s["type"] == "step"]
    last = out[-1] if out else ""
    ok = (rc == 0 and verdicts == ["consistent", "contradicts", "consistent"]
          and last.startswith("Final answer:") and same_answer(last.split(":", 1)[1], "Ottawa"))
    report(7, "walkthrough transcript", ok, f"exit {rc}, verdicts {verdicts}, final line {last!r}")


def test_08_determinism(tmp_path):
    def run(root):
        common = ["--synthetic", "600", "--graph-seed", "3", "--seed", "8", "--out", str(root)]
        codes = [main(["sample", *common, "--count", "300", "--run-id", "sample"]),
                 main(["edit", *common, "--count", "50", "--run-id", "edit"])]
        for name in ("sample", "edit"):
            codes.append(main(["eval", str(root / name / "instances.json"), *common, "--editor", "mello",
                               "--k", "1,100", "--run-id", f"eval-{name}"]))
        files = {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
                 if p.is_file() and p.name != "metadata.json"}
        return codes, files

    codes_a, a = run(tmp_path / "a")
    codes_b, b = run(tmp_path / "b")
    differing = sorted(n for n in a.keys() | b.keys() if a.get(n) != b.get(n))
    ok = codes_a == codes_b == [0, 0, 0, 0] and not differing and "eval-sample/report_mello_k100.json" in a
    report(8, "determinism", ok, f"{len(a)} output files compared, {len(differing)} differ {differing}")


def test_09_diff_correctness():
    g = synthetic_graph(2000, seed=51)
    rng = random.Random(51)
    bad_pairs = trials = checked = 0
    for n in (0, 1, 10, 100, 500, 1000):
        for _ in range(3):
            rels = sorted(rng.sample(sorted(g.relations), rng.randint(1, len(g.relations))))
            new = perturb(g, n, random.Random(rng.random()), relations=rels)
            patched = apply_edits(g, diff_snapshots(g, new, rels))
            got, want = index_by_scan(patched.triples), index_by_scan(new.triples)
            old = index_by_scan(g.triples)
            pairs = {k for k in old if k[1] in rels} & want.keys()
            checked += len(pairs)
            bad_pairs += sum(got[k][0] != want[k][0] for k in pairs)
            trials += 1
    self_diff = diff_snapshots(g, g, sorted(g.relations))
    report(9, "diff correctness", bad_pairs == 0 and self_diff == [],
           f"{trials} perturbed snapshot pairs (up to 1000 changes), {checked} shared facts, "
           f"{bad_pairs} unreconciled; "
           f"diff(G, G) has {len(self_diff)} entries")


def test_10_recall_filter_calibration():
    g = synthetic_graph(600, seed=71)
    rng = random.Random(71)
    chains = [sample_chain(g, 3, rng) for _ in range(500)]
    lm = StochasticRecall(OracleBackend(g), 0.8, random.Random(72))
    accepted = sum(filter_recallable(chains[i % 500], lm, g) for i in range(10_000))
    rate = accepted / 10_000
    report(10, "recall filter calibration", abs(rate - 0.512) <= 0.05,
           f"acceptance rate {rate:.4f} over 10000 three-hop trials (0.512 +/- 0.05)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
