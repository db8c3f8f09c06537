import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astvuln.evaluation import (
    DEFAULT_KS,
    RankedPredictions,
    export_heatmap,
    heatmap_weights,
    hits_at_k,
    recall_f1,
    report,
)
from astvuln.exceptions import InvalidInputError


def ranked(probs, labels):
    return RankedPredictions.from_scores([f"s{i}" for i in range(len(probs))], probs, labels)


def test_hits_examples():
    r = ranked([0.9, 0.8, 0.1], [1, 0, 1])
    assert hits_at_k(r, 2) == 1
    assert hits_at_k(r, 10) == 2
    assert all(hits_at_k(ranked([0.3, 0.2], [0, 0]), k) == 0 for k in (1, 2, 5))
    with pytest.raises(InvalidInputError):
        hits_at_k(r, 0)


def test_recall_f1_examples():
    assert recall_f1(ranked([0.9, 0.1], [1, 0])) == (1.0, 1.0, 1.0)
    assert recall_f1(ranked([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]), 0.5) == (0.5, 0.5, 0.5)
    assert recall_f1(ranked([0.2, 0.1], [1, 0]), 0.5) == (0.0, 0.0, 0.0)
    with pytest.raises(InvalidInputError):
        recall_f1(ranked([0.2], [1]), 1.5)


def test_ranking_order_and_ids():
    r = RankedPredictions.from_scores(["b", "a", "c"], [0.5, 0.5, 0.9], [0, 1, 0])
    assert [e[0] for e in r.entries] == ["c", "a", "b"]
    with pytest.raises(InvalidInputError):
        RankedPredictions.from_scores(["a", "a"], [0.1, 0.2], [0, 1])
    with pytest.raises(InvalidInputError):
        RankedPredictions.from_scores(["a"], [0.1, 0.2], [0, 1])


def test_report_and_table():
    r = ranked([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0])
    rep = report(r)
    assert list(rep.hits) == list(DEFAULT_KS) == [50, 100, 200, 500]
    assert rep.threshold == 0.5 and rep.positives == 2 and rep.negatives == 2
    header = rep.table("ours").splitlines()[0].split()
    assert header == ["Model", "hits@50", "hits@100", "hits@200", "hits@500", "recall", "f1"]
    assert "threshold=0.5" in rep.table()
    data = json.loads(rep.to_json())
    assert data["hits"]["50"] == 2 and data["recall"] == 0.5
    with pytest.raises(InvalidInputError):
        report(RankedPredictions(()))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_report_invariants(rows):
    probs, labels = zip(*rows)
    r = ranked(probs, labels)
    n, pos = len(rows), sum(labels)
    hits = [hits_at_k(r, k) for k in range(1, n + 1)]
    assert hits == sorted(hits)
    assert hits[-1] == pos
    assert all(0 <= h <= min(k, pos) for k, h in enumerate(hits, 1))
    rec, prec, f1 = recall_f1(r, 0.0)
    if pos:
        assert rec == 1.0
    assert 0 <= f1 <= 1


def test_heatmap_examples(tmp_path):
    n = 4
    uniform = [(i, j, 1 / n) for i in range(n) for j in range(n)]
    assert np.allclose(heatmap_weights(uniform, n), 1.0)
    single = [(i, 0, 1.0) for i in range(n)]
    assert heatmap_weights(single, n).tolist() == [1.0, 0, 0, 0]
    text = export_heatmap(single, ["<bos>", "int", "\t", '"q"'], tmp_path / "h.tsv")
    rows = (tmp_path / "h.tsv").read_text().splitlines()
    assert rows[0] == "index\ttoken\tweight"
    assert rows[1] == '0\t"<bos>"\t1.000000'
    assert rows[3].split("\t")[1] == json.dumps("\t")
    assert text == (tmp_path / "h.tsv").read_text()
    assert export_heatmap([], []) == "index\ttoken\tweight\n"
