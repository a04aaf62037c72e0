import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daftir import retrieval as rt
from daftir.errors import DataFormatError, ShapeError

from conftest import unit_rows


def dot_scores(vectors, q):
    # same product form as the index, so the oracles test ordering, not BLAS rounding
    return (np.asarray(q)[None, :] @ np.asarray(vectors).T)[0]


def brute_search(vectors, ids, q, k):
    scores = dot_scores(vectors, q)
    order = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
    return [(ids[j], float(scores[j])) for j in order[:k]]


def brute_maxp(vectors, doc_of, q, k):
    best = {}
    for s, doc in zip(dot_scores(vectors, q).tolist(), doc_of):
        best[doc] = max(best.get(doc, -math.inf), s)
    order = sorted(best, key=lambda d: (-best[d], d))
    return [(d, best[d]) for d in order[:k]]


def definitional_metrics(ranked, judged, c):
    """nDCG, MRR and recall at cutoff ``c`` written out from their definitions."""
    top = ranked[:c]
    dcg = sum((2 ** judged.get(d, 0) - 1) / math.log2(i + 2) for i, d in enumerate(top))
    ideal_gains = sorted(judged.values(), reverse=True)[:c]
    idcg = sum((2 ** g - 1) / math.log2(i + 2) for i, g in enumerate(ideal_gains))
    rr = 0.0
    for i, d in enumerate(top):
        if judged.get(d, 0) >= 1:
            rr = 1.0 / (i + 1)
            break
    relevant = {d for d, g in judged.items() if g >= 1}
    return {f"nDCG@{c}": dcg / idcg, f"MRR@{c}": rr, f"Recall@{c}": len(relevant & set(top)) / len(relevant)}


def tied_instance(r, n, dim=4):
    """Unit rows with deliberate exact duplicates so ties occur."""
    base = unit_rows(r, max(1, n // 2), dim)
    vectors = base[r.integers(0, len(base), size=n)]
    ids = [f"p{i:04d}" for i in r.permutation(n)]
    return vectors, ids


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


def test_single_passage_index(rng):
    v = unit_rows(rng, 1, 5)
    index = rt.build_index(["a"], lambda ids: v)
    assert index.vectors.shape == (1, 5) and len(index) == 1


def test_index_invariants():
    with pytest.raises(ShapeError):
        rt.DenseIndex(["a", "b"], np.eye(3)[:1])
    with pytest.raises(ValueError):
        rt.DenseIndex(["a"], [[2.0, 0.0]])
    with pytest.raises(ValueError):
        rt.build_index([], lambda ids: np.zeros((0, 2)))


def test_index_save_load_round_trip(tmp_path, rng):
    index = rt.DenseIndex(["x", "y", "z"], unit_rows(rng, 3, 4), doc_of=["d1", "d1", "d2"])
    index.save(tmp_path / "index.bin")
    back = rt.DenseIndex.load(tmp_path / "index.bin")
    assert back.ids == index.ids and back.doc_of == index.doc_of
    assert np.array_equal(back.vectors, index.vectors)


def test_id_sort_key_numeric_and_string():
    assert rt.id_sort_key(["10", "9", "100"]).tolist() == [1, 0, 2]
    assert rt.id_sort_key(["D10", "D9", "D100"]).tolist() == [0, 2, 1]


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def test_k_at_least_size_gives_full_ranking(rng):
    v = unit_rows(rng, 7, 3)
    index = rt.DenseIndex([str(i) for i in range(7)], v)
    assert len(rt.search_topk(index, v[0], 50)) == 7


def test_query_equal_to_indexed_vector_ranks_first(rng):
    v = unit_rows(rng, 30, 6)
    index = rt.DenseIndex([f"d{i}" for i in range(30)], v)
    top = rt.search_topk(index, v[17], 3)
    assert top[0][0] == "d17" and abs(top[0][1] - 1.0) < 1e-12


def test_random_100_vector_index_k10(rng):
    v = unit_rows(rng, 100, 8)
    ids = [f"d{i:03d}" for i in range(100)]
    q = unit_rows(rng, 1, 8)[0]
    assert rt.search_topk(rt.DenseIndex(ids, v), q, 10) == brute_search(v, ids, q, 10)


def test_ties_break_to_smaller_id():
    v = np.tile([1.0, 0.0], (4, 1))
    index = rt.DenseIndex(["c", "a", "d", "b"], v)
    assert [d for d, _ in rt.search_topk(index, [1.0, 0.0], 4)] == ["a", "b", "c", "d"]


def test_search_rejects_bad_k_and_dim(rng):
    index = rt.DenseIndex(["a"], unit_rows(rng, 1, 3))
    with pytest.raises(ValueError):
        rt.search_topk(index, [1.0, 0.0, 0.0], 0)
    with pytest.raises(ShapeError):
        rt.search_topk(index, [1.0, 0.0], 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.data())
def test_search_equals_full_sort(n, data):
    r = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    k = data.draw(st.integers(1, n))
    v, ids = tied_instance(r, n)
    q = unit_rows(r, 1, 4)[0]
    assert rt.search_topk(rt.DenseIndex(ids, v), q, k) == brute_search(v, ids, q, k)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rotation_leaves_ranking_unchanged(seed):
    r = np.random.default_rng(seed)
    v = unit_rows(r, 60, 5)
    q = unit_rows(r, 1, 5)[0]
    rot, _ = np.linalg.qr(r.normal(size=(5, 5)))
    ids = [f"d{i}" for i in range(60)]
    before = [d for d, _ in rt.search_topk(rt.DenseIndex(ids, v), q, 20)]
    after = [d for d, _ in rt.search_topk(rt.DenseIndex(ids, v @ rot), q @ rot, 20)]
    assert before == after


# ---------------------------------------------------------------------------
# maxP
# ---------------------------------------------------------------------------


def test_maxp_one_passage_per_doc_equals_search(rng):
    v = unit_rows(rng, 25, 4)
    ids = [f"d{i:02d}" for i in range(25)]
    q = unit_rows(rng, 1, 4)[0]
    assert (rt.rank_documents_maxp(rt.DenseIndex(ids, v, doc_of=ids), q, 10)
            == rt.search_topk(rt.DenseIndex(ids, v), q, 10))


def test_maxp_two_passages_beat_single():
    q = np.array([1.0, 0.0])

    def at(c):
        return [c, math.sqrt(1 - c * c)]

    index = rt.DenseIndex(["p1", "p2", "p3"], [at(0.2), at(0.8), at(0.7)], doc_of=["A", "A", "B"])
    ranked = rt.rank_documents_maxp(index, q, 2)
    assert [d for d, _ in ranked] == ["A", "B"] and ranked[0][1] == pytest.approx(0.8)


def test_maxp_requires_map(rng):
    with pytest.raises(ValueError):
        rt.rank_documents_maxp(rt.DenseIndex(["a"], unit_rows(rng, 1, 2)), [1.0, 0.0], 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.data())
def test_maxp_equals_group_by_max(n, data):
    r = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    v, ids = tied_instance(r, n)
    doc_of = [f"D{j}" for j in r.integers(0, max(1, n // 3), size=n)]
    k = data.draw(st.integers(1, n))
    q = unit_rows(r, 1, 4)[0]
    got = rt.rank_documents_maxp(rt.DenseIndex(ids, v, doc_of=doc_of), q, k)
    assert got == brute_maxp(v, doc_of, q, k)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maxp_adding_passage_never_lowers_rank(seed):
    r = np.random.default_rng(seed)
    v = unit_rows(r, 20, 4)
    doc_of = [f"D{j}" for j in r.integers(0, 6, size=20)]
    q = unit_rows(r, 1, 4)[0]
    target = doc_of[0]
    before = [d for d, _ in rt.rank_documents_maxp(rt.DenseIndex(list(map(str, range(20))), v, doc_of), q, 20)]
    extra = unit_rows(r, 1, 4)
    after = [d for d, _ in rt.rank_documents_maxp(
        rt.DenseIndex(list(map(str, range(21))), np.vstack([v, extra]), doc_of + [target]), q, 20)]
    assert after.index(target) <= before.index(target)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def test_perfect_ranking():
    run = {"q": [("a", 3.0), ("b", 2.0), ("c", 1.0)]}
    m = rt.evaluate(run, {"q": {"a": 2, "b": 1}}, (10,))
    assert m["nDCG@10"] == 1.0 and m["MRR@10"] == 1.0 and m["Recall@10"] == 1.0


def test_relevant_at_rank_three():
    run = {"q": [("a", 3.0), ("b", 2.0), ("c", 1.0)]}
    assert rt.evaluate(run, {"q": {"c": 1}}, (10,))["MRR@10"] == pytest.approx(1 / 3, abs=1e-15)


def test_cutoff_excludes_later_hits():
    run = {"q": [(f"d{i}", -i) for i in range(20)]}
    m = rt.evaluate(run, {"q": {"d15": 1}}, (10, 100))
    assert m["MRR@10"] == 0.0 and m["Recall@10"] == 0.0 and m["MRR@100"] == pytest.approx(1 / 16)


def test_queries_without_relevant_excluded():
    run = {"q1": [("a", 1.0)], "q2": [("a", 1.0)]}
    m = rt.evaluate(run, {"q1": {"a": 1}, "q2": {"a": 0}}, (10,))
    assert m["MRR@10"] == 1.0


def test_empty_intersection_rejected():
    with pytest.raises(ValueError):
        rt.evaluate({"q1": [("a", 1.0)]}, {"q2": {"a": 1}})


def random_metric_instance(r, n_queries=4, n_docs=20):
    docs = [f"d{i}" for i in range(n_docs)]
    run, qrels = {}, {}
    for j in range(n_queries):
        order = r.permutation(n_docs)[: r.integers(1, n_docs + 1)]
        run[f"q{j}"] = [(docs[i], float(-rank)) for rank, i in enumerate(order)]
        judged = {docs[i]: int(r.integers(0, 4)) for i in r.choice(n_docs, size=r.integers(1, 8), replace=False)}
        judged[docs[int(r.integers(n_docs))]] = int(r.integers(1, 4))
        qrels[f"q{j}"] = judged
    return run, qrels


def test_metrics_match_definitional_scorer(rng):
    for _ in range(50):
        run, qrels = random_metric_instance(rng)
        for c in (1, 5, 10):
            got = rt.evaluate(run, qrels, (c,))
            rows = [definitional_metrics([d for d, _ in run[q]], qrels[q], c) for q in sorted(run)]
            for name in got:
                assert abs(got[name] - sum(row[name] for row in rows) / len(rows)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metrics_bounded_and_order_invariant(seed):
    r = np.random.default_rng(seed)
    run, qrels = random_metric_instance(r)
    a = rt.evaluate(run, qrels, (3, 10))
    keys = list(run)
    shuffled = {k: run[k] for k in (keys[i] for i in r.permutation(len(keys)))}
    b = rt.evaluate(shuffled, qrels, (3, 10))
    assert a == b and all(0.0 <= v <= 1.0 for v in a.values())


def test_random_mrr_baseline_exact():
    assert rt.random_mrr_baseline(2000) == pytest.approx(sum(1 / r for r in range(1, 11)) / 2000, rel=1e-15)
    assert rt.random_mrr_baseline(3) == pytest.approx((1 + 1 / 2 + 1 / 3) / 3)


def test_random_mrr_baseline_matches_simulation():
    r = np.random.default_rng(0)
    hits = r.integers(1, 51, size=200_000)
    simulated = np.where(hits <= 10, 1.0 / hits, 0.0).mean()
    assert abs(simulated - rt.random_mrr_baseline(50)) < 3e-3


# ---------------------------------------------------------------------------
# TREC files
# ---------------------------------------------------------------------------


def test_run_round_trip(tmp_path):
    run = {"q1": [("d2", 0.75), ("d1", 0.5)], "q2": [("d9", 1 / 3)]}
    rt.write_run(run, tmp_path / "run.trec")
    assert rt.read_run(tmp_path / "run.trec") == run
    first = (tmp_path / "run.trec").read_text().splitlines()[0].split()
    assert first[:4] == ["q1", "Q0", "d2", "1"]


def test_qrels_round_trip(tmp_path):
    qrels = {"q1": {"d1": 1, "d2": 0}, "q2": {"d3": 2}}
    rt.write_qrels(qrels, tmp_path / "qrels.txt")
    assert rt.read_qrels(tmp_path / "qrels.txt") == qrels


@pytest.mark.parametrize("body,line", [
    ("q1 0 d1 1\nq1 0 d2\n", 2),
    ("q1 0 d1 x\n", 1),
    ("q1 0 d1 1\n\nq1 0 d1 1\n", 3),
    ("q1 0 d1 -1\n", 1),
])
def test_malformed_qrels_report_line(tmp_path, body, line):
    path = tmp_path / "bad.txt"
    path.write_text(body)
    with pytest.raises(DataFormatError) as err:
        rt.read_qrels(path)
    assert err.value.lineno == line and f"bad.txt:{line}:" in str(err.value)


def test_malformed_run_reports_line(tmp_path):
    path = tmp_path / "run.trec"
    path.write_text("q1 Q0 d1 1 0.5 t\nq1 Q0 d2 two 0.4 t\n")
    with pytest.raises(DataFormatError) as err:
        rt.read_run(path)
    assert err.value.lineno == 2
