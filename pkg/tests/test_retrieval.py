import json
import random
import time

import httpx
import numpy as np
import pytest

from conftest import distinct_statement_edits
from oracles import argmax_scan, fnv1a, sparse_cos, sparse_embed
from hopedit.errors import HopEditError, TransportError
from hopedit.kg import Edit
from hopedit.retrieval import (
    HashEmbedder,
    HttpEmbedder,
    build_memory,
    cosine,
    embed,
    fnv1a_32,
    retrieve_exact,
    retrieve_linear,
    retrieve_top1,
)

KUSHNER = Edit("Q_kushner", "P27", "Q_us", "Q_canada")
CAPITAL = Edit("Q_us", "P36", "Q_dc", "Q_seattle")
CAMERON = Edit("Q_cameron", "P26", "Q_carrie", "Q_samantha")


def test_fnv_known_vectors():
    # published FNV-1a 32-bit test values
    assert fnv1a_32(b"") == 0x811C9DC5
    assert fnv1a_32(b"a") == 0xE40C292C
    assert fnv1a_32(b"foobar") == 0xBF9CF968
    assert all(fnv1a_32(w.encode()) == fnv1a(w.encode()) for w in ("jared", "kushner", "ottawa"))


def test_empty_text_is_zero_vector():
    v = embed("")
    assert v.shape == (256,) and not v.any()


@pytest.mark.parametrize("text", ["Ottawa", "Jared Kushner is a citizen of Canada.", "a a a b"])
def test_unit_norm_and_self_dot(text):
    v = embed(text)
    assert abs(np.linalg.norm(v) - 1) < 1e-6
    assert abs(v @ v - 1) < 1e-9


def test_embedding_matches_reference():
    for text in ["Jared Kushner is a citizen of Canada.", "The capital city of United States is Seattle.", "x"]:
        ref = sparse_embed(text)
        dense = embed(text)
        assert all(abs(dense[k] - v) < 1e-12 for k, v in ref.items())
        assert abs(sum(dense) - sum(ref.values())) < 1e-9


def test_keyword_query_prefers_matching_statement():
    q = "Jared Kushner citizen Canada"
    a, b = "Jared Kushner is a citizen of Canada.", "The capital city of United States is Seattle."
    ref_a, ref_b = sparse_cos(sparse_embed(q), sparse_embed(a)), sparse_cos(sparse_embed(q), sparse_embed(b))
    assert ref_a > ref_b
    assert cosine(embed(q), embed(a)) > cosine(embed(q), embed(b))
    assert abs(cosine(embed(q), embed(a)) - ref_a) < 1e-12


def test_build_memory_sizes(wt):
    assert len(build_memory([], wt)) == 0
    m = build_memory([KUSHNER, CAPITAL, CAMERON], wt)
    assert [e.id for e in m.entries] == [0, 1, 2]
    assert [e.edit for e in m.entries] == [KUSHNER, CAPITAL, CAMERON]


def test_empty_memory_status(wt):
    m = build_memory([], wt)
    assert retrieve_top1(m, "anything") is None
    assert retrieve_exact(m, "Q_us", "P36") is None


def test_ivanka_citizenship_query(wt):
    m = build_memory([KUSHNER, CAMERON], wt)
    entry, score = retrieve_top1(m, "What is the country of citizenship of Jared Kushner?")
    assert entry.text == "Jared Kushner is a citizen of Canada."
    # the same ordering under the reference embedding
    assert argmax_scan([e.text for e in m.entries], "What is the country of citizenship of Jared Kushner?")[0] == 0


def test_ties_go_to_lowest_id(wt):
    m = build_memory([Edit("Q_kushner", "P26", "Q_ivanka", "Q_samantha"),
                      Edit("Q_samantha", "P26", "Q_cameron", "Q_kushner")], wt)
    # "A is married to B" and "B is married to A" have identical token bags
    assert np.array_equal(m.vectors[0], m.vectors[1])
    for e in m.entries:
        hit, score = retrieve_top1(m, e.text)
        assert hit.id == 0 and abs(score - 1) < 1e-9


def test_memory_of_3000_builds_fast_and_self_retrieves():
    g, edits = distinct_statement_edits(3000)
    t0 = time.perf_counter()
    m = build_memory(edits, g)
    assert time.perf_counter() - t0 < 1.0
    for e in m.entries:
        hit, score = retrieve_top1(m, e.text)
        assert hit.id == e.id and abs(score - 1) < 1e-6


def test_top1_equals_linear_scan_and_reference(synth, corpus):
    edits = []
    keys = set()
    for inst in corpus:
        for e in inst.edits:
            if e.key not in keys:
                keys.add(e.key)
                edits.append(e)
    m = build_memory(edits, synth)
    statements = [e.text for e in m.entries]
    rng = random.Random(0)
    for inst in rng.sample(corpus, 60):
        for q in inst.questions + [statements[rng.randrange(len(statements))]]:
            top, score = retrieve_top1(m, q)
            lin, lin_score = retrieve_linear(m, q)
            ref_idx, ref_score = argmax_scan(statements, q)
            assert top.id == lin.id == ref_idx
            assert abs(score - ref_score) < 1e-9


def test_exact_lookup(wt):
    m = build_memory([KUSHNER, CAPITAL], wt)
    assert retrieve_exact(m, "Q_us", "P36")[0].edit == CAPITAL
    assert retrieve_exact(m, "Q_us", "P6") is None


def test_memory_is_immutable(wt):
    m = build_memory([KUSHNER], wt)
    with pytest.raises(ValueError):
        m.vectors[0, 0] = 5.0


# -- external embedding service -----------------------------------------------

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_embedder_normalizes():
    def handler(req):
        texts = json.loads(req.content)["texts"]
        return httpx.Response(200, json={"vectors": [[3.0, 4.0, 0.0] for _ in texts]})
    emb = HttpEmbedder("http://svc/embed", 3, client=_client(handler))
    out = emb.embed_many(["a", "b"])
    assert np.allclose(out, [[0.6, 0.8, 0.0]] * 2)


@pytest.mark.parametrize("body", [
    b'{"vectors": [[1.0, 0.0]]}',        # wrong dimension
    b'{"vectors": []}',                  # wrong count
    b'{"vectors": [[NaN, 0, 0]]}',       # non-finite
])
def test_http_embedder_validates(body):
    emb = HttpEmbedder("http://svc/embed", 3, client=_client(lambda req: httpx.Response(200, content=body)))
    with pytest.raises(HopEditError):
        emb.embed_many(["a"])


def test_http_embedder_transport_error():
    emb = HttpEmbedder("http://svc/embed", 3, client=_client(lambda req: httpx.Response(503)))
    with pytest.raises(TransportError):
        emb.embed_many(["a"])


def test_custom_dimension():
    assert HashEmbedder(64).embed("hello world").shape == (64,)
    with pytest.raises(HopEditError):
        HashEmbedder(0)
