import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hopedit.edits import generate_instances
from hopedit.kg import load_graph
from hopedit.lm import OracleBackend
from hopedit.synthetic import relations_path, synthetic_graph, walkthrough_graph

TEN_TRIPLES = [
    ("Q1", "P26", "Q2"),
    ("Q2", "P26", "Q1"),
    ("Q1", "P27", "Q10"),
    ("Q1", "P69", "Q5"),
    ("Q1", "P69", "Q4"),
    ("Q2", "P108", "Q4"),
    ("Q4", "P159", "Q7"),
    ("Q5", "P159", "Q8"),
    ("Q7", "P17", "Q10"),
    ("Q10", "P36", "Q7"),
]
TEN_ENTITIES = [
    {"id": "Q1", "label": "Ada Lovelace", "class": "person"},
    {"id": "Q2", "label": "William King", "class": "person"},
    {"id": "Q4", "label": "Acme Works", "class": "organization"},
    {"id": "Q5", "label": "Royal Institute", "class": "organization"},
    {"id": "Q7", "label": "Northport", "class": "location"},
    {"id": "Q8", "label": "Southby", "class": "location"},
    {"id": "Q10", "label": "Freedonia", "class": "country"},
]


def write_tsv(path, triples):
    path.write_text("".join(f"{s}\t{r}\t{o}\n" for s, r, o in triples), encoding="utf-8")
    return path


@pytest.fixture
def ten_files(tmp_path):
    tsv = write_tsv(tmp_path / "ten.tsv", TEN_TRIPLES)
    ents = tmp_path / "ents.json"
    ents.write_text(json.dumps(TEN_ENTITIES), encoding="utf-8")
    return tsv, ents


@pytest.fixture
def ten_graph(ten_files):
    tsv, ents = ten_files
    return load_graph(tsv, relations_path(), "ten", ents)


@pytest.fixture(scope="session")
def wt():
    return walkthrough_graph()


@pytest.fixture(scope="session")
def wt_new():
    return walkthrough_graph(new_snapshot=True)


@pytest.fixture(scope="session")
def synth():
    return synthetic_graph(600, seed=1)


@pytest.fixture(scope="session")
def corpus(synth):
    res = generate_instances(synth, 300, (2, 3, 4), random.Random(1), lm=OracleBackend(synth))
    assert res.shortfall == 0
    return res.instances


def distinct_statement_edits(n, entities=4000, seed=5):
    """``n`` edits on distinct (s, r) pairs whose statements embed to pairwise
    distinct hashed vectors.

    Bag-of-words hashing cannot separate "A is married to B" from "B is
    married to A", nor two statements whose differing tokens share buckets;
    such candidates are skipped so self-retrieval is well defined.
    """
    import numpy as np
    from hopedit.kg import Edit
    from hopedit.retrieval import HashEmbedder
    from hopedit.templates import render_edit_statement

    g = synthetic_graph(entities, seed=seed)
    emb = HashEmbedder()
    seen, edits = set(), []
    for i, (s, r) in enumerate(sorted(g.forward_index)):
        old = g.canonical_object(s, r)
        objs = g.objects_of_relation(r)
        new = objs[(i * 7919) % len(objs)]
        if new == old:
            new = objs[(objs.index(new) + 1) % len(objs)]
        if new == old:
            continue
        e = Edit(s, r, old, new)
        key = np.round(emb.embed(render_edit_statement(e, g).text), 12).tobytes()
        if key in seen:
            continue
        seen.add(key)
        edits.append(e)
        if len(edits) == n:
            return g, edits
    raise RuntimeError(f"only {len(edits)} distinct statements available")


@pytest.fixture(scope="session")
def big():
    """1000 instances; corpus-wide edit consistency needs a larger graph than ``synth``."""
    g = synthetic_graph(2000, seed=9)
    res = generate_instances(g, 1000, (2, 3, 4), random.Random(9), lm=OracleBackend(g))
    assert res.shortfall == 0
    return g, res


# PASS/FAIL lines from the acceptance module, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
