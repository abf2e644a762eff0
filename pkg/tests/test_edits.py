import random

import pytest

from oracles import norm, walk
from hopedit.edits import (
    Instance,
    build_edit_batch,
    build_temporal_instance,
    generate_instances,
    generate_temporal_instances,
    instance_problems,
    sample_counterfactual,
    traverse,
)
from hopedit.errors import EditConflictError, EditSamplingError
from hopedit.kg import Edit, Entity, KnowledgeGraph, Triple, diff_snapshots
from hopedit.lm import OracleBackend
from hopedit.sampler import FactChain, sample_chain
from hopedit.synthetic import default_relations, perturb, synthetic_graph
from hopedit.templates import render_multihop_questions

WALLE_CHAIN = FactChain((Triple("Q_walle", "P170", "Q_stanton"), Triple("Q_stanton", "P108", "Q_pixar"),
                    Triple("Q_pixar", "P159", "Q_emeryville")))
WALLE_EDITS = [Edit("Q_walle", "P170", "Q_stanton", "Q_watt"),
                Edit("Q_glasgow_uni", "P159", "Q_glasgow", "Q_beijing")]


def walle_instance(g):
    new = traverse(g, "Q_walle", WALLE_CHAIN.relations, WALLE_EDITS)
    return Instance(WALLE_EDITS, [q.text for q in render_multihop_questions(WALLE_CHAIN, g)],
                    g.label(WALLE_CHAIN.tail), g.label(new[-1].o), list(WALLE_CHAIN.triples), new)


def test_walle_counterfactual(wt):
    inst = walle_instance(wt)
    assert inst.answer == "Emeryville" and inst.new_answer == "Beijing"
    assert inst.new_triples == [Triple("Q_walle", "P170", "Q_watt"), Triple("Q_watt", "P108", "Q_glasgow_uni"),
                                Triple("Q_glasgow_uni", "P159", "Q_beijing")]
    assert instance_problems(inst, wt) == []


def test_traverse_matches_reference_walk(synth, corpus):
    for inst in corpus[:200]:
        overrides = {e.key: e.new for e in inst.edits}
        ref = walk(synth.triples, inst.head, inst.relations, overrides)
        got = traverse(synth, inst.head, inst.relations, inst.edits)
        assert [(t.s, t.r, t.o) for t in got] == ref


def test_no_candidate_object():
    rels = default_relations()
    ents = {"P": Entity("P", "Pat Doe", "person"), "O": Entity("O", "Oco Inc", "organization"),
            "C": Entity("C", "Cville", "location")}
    g = KnowledgeGraph([Triple("P", "P108", "O"), Triple("O", "P159", "C")], rels, ents)
    chain = FactChain((Triple("P", "P108", "O"), Triple("O", "P159", "C")))
    with pytest.raises(EditSamplingError) as exc:
        sample_counterfactual(g, chain, random.Random(0))
    assert exc.value.reason == "no-candidate-object"


def test_unchanged_answer_and_broken_chain():
    rels = default_relations()
    # both employers sit in the same city, so editing the employer cannot change the answer
    ts = [Triple("P", "P108", "O1"), Triple("Q", "P108", "O2"), Triple("O1", "P159", "C"), Triple("O2", "P159", "C")]
    g = KnowledgeGraph(ts, rels)
    chain = FactChain((Triple("P", "P108", "O1"), Triple("O1", "P159", "C")))
    reasons = set()
    for seed in range(40):
        try:
            sample_counterfactual(g, chain, random.Random(seed))
        except EditSamplingError as exc:
            reasons.add(exc.reason)
    assert "unchanged-answer" in reasons
    # an employer without a headquarters breaks the rewired chain
    g2 = KnowledgeGraph(ts[:3], rels)
    reasons = set()
    for seed in range(40):
        try:
            sample_counterfactual(g2, chain, random.Random(seed))
        except EditSamplingError as exc:
            reasons.add(exc.reason)
    assert "broken-chain" in reasons


def test_edit_count_is_uniform(synth):
    rng = random.Random(4)
    counts = {1: 0, 2: 0, 3: 0, 4: 0}
    chains = [sample_chain(synth, 4, rng) for _ in range(50)]
    tries = 0
    while tries < 4000:
        ch = chains[tries % 50]
        tries += 1
        try:
            edits, _, _ = sample_counterfactual(synth, ch, rng)
        except EditSamplingError:
            continue
        counts[len(edits)] += 1
    total = sum(counts.values())
    # unchanged-answer failures skew small t slightly; every t must still be common
    assert all(c / total > 0.15 for c in counts.values()), counts


def test_thousand_instances_satisfy_invariants(big):
    synth, res = big
    assert len(res.instances) == 1000
    for inst in res.instances:
        assert instance_problems(inst, synth) == [], inst.id
        assert norm(inst.answer) != norm(inst.new_answer)
        assert 1 <= len(inst.edits) <= inst.hops
        diff_pos = [i for i, (a, b) in enumerate(zip(inst.orig_triples, inst.new_triples)) if (a.s, a.o) != (b.s, b.o)]
        edited = [i for i, t in enumerate(inst.new_triples) if any(e.key == (t.s, t.r) for e in inst.edits)]
        assert set(edited) <= set(diff_pos)
    st = res.stats
    assert sum(st.rejected.values()) == st.attempts - st.accepted


def test_corpus_is_globally_consistent(synth, corpus):
    union = {}
    for inst in corpus:
        for e in inst.edits:
            assert union.setdefault(e.key, e.new) == e.new
    for inst in corpus:
        got = traverse(synth, inst.head, inst.relations, [Edit(s, r, synth.canonical_object(s, r), o)
                                                          for (s, r), o in union.items()
                                                          if synth.canonical_object(s, r) != o])
        assert got[-1].o == inst.new_triples[-1].o


def test_instance_ids_are_stable(wt):
    a, b = walle_instance(wt), walle_instance(wt)
    assert a.id == b.id and len(a.id) == 16


# -- temporal ------------------------------------------------------------------

SUNAK = Edit("Q_uk", "P6", "Q_boris", "Q_sunak")


def test_temporal_sunak(wt, wt_new):
    chain = FactChain((Triple("Q_uk", "P6", "Q_boris"), Triple("Q_boris", "P26", "Q_carrie")))
    inst = build_temporal_instance(chain, [SUNAK], wt_new)
    assert inst.edits == [SUNAK]
    assert inst.new_triples == [Triple("Q_uk", "P6", "Q_sunak"), Triple("Q_sunak", "P26", "Q_akshata")]
    assert inst.answer == "Carrie Johnson" and inst.new_answer == "Akshata Murty"


def test_temporal_multiple_and_empty(wt, wt_new):
    chain = FactChain((Triple("Q_uk", "P6", "Q_boris"), Triple("Q_boris", "P26", "Q_carrie")))
    two = [SUNAK, Edit("Q_boris", "P26", "Q_carrie", "Q_akshata")]
    with pytest.raises(EditSamplingError) as exc:
        build_temporal_instance(chain, two, wt_new)
    assert exc.value.reason == "multiple-matching-edits"
    with pytest.raises(EditSamplingError) as exc:
        build_temporal_instance(chain, [], wt_new)
    assert exc.value.reason == "no-matching-edit"


def test_generated_temporal_instances(synth):
    new = perturb(synth, 200, random.Random(1))
    diff = diff_snapshots(synth, new, synth.relations)
    res = generate_temporal_instances(synth, new, diff, 40, (2, 3), random.Random(2), lm=OracleBackend(synth))
    assert res.instances
    keys = {e.key for e in diff}
    for inst in res.instances:
        assert len(inst.edits) == 1 and inst.edits[0].key in keys
        assert traverse(new, inst.head, inst.relations)[-1].o == inst.new_triples[-1].o
        assert instance_problems(inst, synth) == []


# -- batching -----------------------------------------------------------------

def test_batches(corpus):
    b1 = build_edit_batch(corpus[:5], 1)
    assert [len(g) for g, _ in b1] == [1] * 5
    assert all(edits == g[0].edits for g, edits in b1)
    sizes = [len(g) for g, _ in build_edit_batch(corpus[:250], 100)]
    assert sizes == [100, 100, 50]


def test_batch_merges_identical_and_rejects_conflicts(wt):
    a = walle_instance(wt)
    b = walle_instance(wt)
    (_, merged), = build_edit_batch([a, b], 2)
    assert merged == WALLE_EDITS
    c = Instance([Edit("Q_walle", "P170", "Q_stanton", "Q_kushner")], a.questions, a.answer, "x",
                 a.orig_triples, a.new_triples)
    with pytest.raises(EditConflictError) as exc:
        build_edit_batch([a, a, a, c], 2)
    assert (exc.value.subject, exc.value.relation, exc.value.batch_index) == ("Q_walle", "P170", 1)
