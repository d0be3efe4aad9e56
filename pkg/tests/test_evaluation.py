import csv
import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from text2vis import evaluation
from text2vis.evaluation import (EvalReport, Query, dcg, evaluate, lcs_length,
                                 relevance, rouge_l, rrank_ranking, vissim_ranking)
from text2vis.retrieval import build_index, query


class TestLcs:
    def test_identical(self):
        assert lcs_length("abc", "abc") == 3

    def test_empty(self):
        assert lcs_length("abc", "") == 0
        assert lcs_length("", "") == 0

    def test_caption_pair(self):
        a = ["a", "woman", "cuts", "pizza"]
        b = ["a", "woman", "cutting", "a", "pizza"]
        assert lcs_length(a, b) == 3

    def test_subsequence_not_substring(self):
        assert lcs_length(["x", "a", "y", "b", "z"], ["a", "b"]) == 2


class TestRougeL:
    def test_identical(self):
        assert rouge_l(["a", "b"], ["a", "b"]) == 1.0

    def test_disjoint(self):
        assert rouge_l(["a"], ["b"]) == 0.0

    def test_empty_sides(self):
        assert rouge_l([], ["a"]) == 0.0
        assert rouge_l(["a"], []) == 0.0

    def test_hand_value(self):
        # LCS 3, recall 3/5, precision 3/4, beta 1.2
        got = rouge_l(["a", "woman", "cuts", "pizza"],
                      ["a", "woman", "cutting", "a", "pizza"], beta=1.2)
        r, p, b2 = 3 / 5, 3 / 4, 1.2**2
        assert got == pytest.approx((1 + b2) * r * p / (r + b2 * p), abs=1e-15)
        assert got == pytest.approx(0.6535714285714286, abs=1e-12)

    def test_asymmetric_for_beta_not_one(self):
        a, b = ["a", "b", "c", "d"], ["a", "b"]
        assert rouge_l(a, b, beta=1.2) != rouge_l(b, a, beta=1.2)
        assert rouge_l(a, b, beta=1.0) == pytest.approx(rouge_l(b, a, beta=1.0))

    def test_range(self):
        rng = np.random.default_rng(0)
        alphabet = list("abcdef")
        for _ in range(200):
            x = list(rng.choice(alphabet, size=rng.integers(0, 8)))
            y = list(rng.choice(alphabet, size=rng.integers(0, 8)))
            assert 0.0 <= rouge_l(x, y) <= 1.0


class TestRelevance:
    def test_exact_match_among_references(self):
        refs = [("a", "dog"), ("the", "cat", "sat")]
        assert relevance(("the", "cat", "sat"), refs) == 1.0

    def test_disjoint(self):
        assert relevance(("x",), [("a",), ("b",)]) == 0.0

    def test_max_of_two(self):
        refs = [("a", "b"), ("a", "b", "c")]
        q = ("a", "b", "c")
        assert relevance(q, refs) == max(rouge_l(q, refs[0]), rouge_l(q, refs[1]))

    def test_mean_aggregate(self):
        refs = [("a", "b"), ("c",)]
        q = ("a", "b")
        assert relevance(q, refs, aggregate="mean") == pytest.approx(
            (rouge_l(q, refs[0]) + rouge_l(q, refs[1])) / 2)

    def test_empty_references_rejected(self):
        with pytest.raises(ValueError):
            relevance(("a",), [])


class TestDcg:
    def test_all_zero(self):
        assert dcg([0.0, 0.0, 0.0]) == 0.0

    def test_single_one(self):
        assert dcg([1.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        expect = 1.0 + (2**0.5 - 1) / math.log2(3)
        assert dcg([1.0, 0.5, 0.0], p=25) == pytest.approx(expect, abs=1e-12)
        assert dcg([1.0, 0.5, 0.0], p=25) == pytest.approx(1.26134, abs=1e-4)

    def test_cutoff(self):
        rels = [1.0] * 30
        assert dcg(rels, p=25) == pytest.approx(dcg(rels[:25], p=25))

    def test_bad_p(self):
        with pytest.raises(ValueError):
            dcg([1.0], p=0)

    @given(st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=10),
           st.integers(min_value=0, max_value=9), st.floats(min_value=0, max_value=1))
    def test_monotone_in_relevance(self, rels, pos, bump):
        pos = pos % len(rels)
        higher = list(rels)
        higher[pos] = min(1.0, higher[pos] + bump)
        assert dcg(higher, p=10) >= dcg(rels, p=10) - 1e-12

    def test_sorted_descending_is_maximal(self):
        rng = np.random.default_rng(1)
        for size in range(1, 6):
            rels = list(rng.uniform(0, 1, size))
            best = dcg(sorted(rels, reverse=True), p=size)
            assert all(dcg(list(p), p=size) <= best + 1e-12 for p in permutations(rels))

    def test_upper_bound(self):
        bound = sum(1 / math.log2(i + 1) for i in range(1, 26))
        rng = np.random.default_rng(2)
        for _ in range(50):
            rels = list(rng.uniform(0, 1, 25))
            assert 0.0 <= dcg(rels, p=25) <= bound + 1e-12


class TestRRank:
    def test_full_draw_is_permutation(self):
        ids = list(range(30))
        ranking = rrank_ranking(ids, np.random.default_rng(0), k=30)
        assert sorted(ranking.ids()) == ids

    def test_seed_reproducible(self):
        ids = list(range(50))
        a = rrank_ranking(ids, np.random.default_rng(7), k=10)
        b = rrank_ranking(ids, np.random.default_rng(7), k=10)
        assert a.ids() == b.ids()

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            rrank_ranking([1, 2], np.random.default_rng(0), k=3)

    def test_distances_are_monotone_placeholders(self):
        d = rrank_ranking(list(range(10)), np.random.default_rng(0), k=5).distances()
        assert d == sorted(d)


class TestVisSim:
    def test_wraps_query_with_exclusion(self):
        idx = build_index([1, 2, 3], np.array([[1.0, 0], [0.9, 0.1], [0, 1]]))
        feature = np.array([1.0, 0.0])
        got = vissim_ranking(idx, feature, query_image_id=1, k=3)
        direct = query(idx, feature, 3, exclude_id=1)
        assert got.ids() == direct.ids() and 1 not in got.ids()

    def test_without_exclusion_self_ranks_first(self):
        idx = build_index([1, 2], np.array([[1.0, 0], [0, 1]]))
        got = query(idx, np.array([1.0, 0.0]), 2)
        assert got.ids()[0] == 1 and got.distances()[0] == 0.0


def constant_method(ranking):
    return lambda q: ranking


class TestEvaluate:
    def setup_method(self):
        self.captions = {1: [("a", "dog")], 2: [("a", "cat")], 3: [("blue", "bus")]}
        self.queries = [Query(1, "a dog", ("a", "dog"))]
        idx = build_index([1, 2, 3], np.eye(3))
        self.ranking = query(idx, np.array([1.0, 0.0, 0.0]), k=3)

    def test_single_method_single_query(self):
        report = evaluate({"m": constant_method(self.ranking)}, self.queries,
                          self.captions, p=3)
        rels = [relevance(("a", "dog"), self.captions[i]) for i in self.ranking.ids()]
        assert report.dcg_by_method["m"] == [pytest.approx(dcg(rels, 3))]
        assert report.mean_dcg("m") == pytest.approx(dcg(rels, 3))

    def test_identical_methods_tie_at_half(self):
        methods = {"a": constant_method(self.ranking),
                   "b": constant_method(self.ranking)}
        report = evaluate(methods, self.queries, self.captions, p=3)
        assert report.win_rate("a", "b") == 0.5
        assert report.win_rate("a", "b") + report.win_rate("b", "a") == 1.0

    def test_unknown_image_reported(self):
        from text2vis.retrieval import RankedList, RankEntry
        bad = RankedList([RankEntry(99, 0.0)])
        with pytest.raises(ValueError, match="99"):
            evaluate({"m": constant_method(bad)}, self.queries, self.captions, p=1)

    def test_csv_outputs(self, tmp_path):
        methods = {"a": constant_method(self.ranking),
                   "b": constant_method(self.ranking)}
        report = evaluate(methods, self.queries, self.captions, p=3)
        report.write_summary_csv(tmp_path / "summary.csv")
        report.write_per_query_csv(tmp_path / "per_query.csv")
        paths = report.write_diff_cdf_csvs(tmp_path)

        with open(tmp_path / "summary.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["method", "mean_dcg", "p"]
        assert len(rows) == 3 and rows[1][2] == "3"

        with open(tmp_path / "per_query.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["query_id", "method", "dcg"]
        assert len(rows) == 3

        assert len(paths) == 1 and paths[0].endswith("diff_cdf_a_vs_b.csv")
        with open(paths[0], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["delta", "cumulative_fraction"]
        assert float(rows[-1][1]) == 1.0

    def test_diff_cdf_is_monotone(self):
        report = EvalReport(p=5, query_ids=[1, 2, 3],
                            dcg_by_method={"a": [1.0, 2.0, 0.5], "b": [0.5, 2.5, 0.5]})
        cdf = report.diff_cdf("a", "b")
        deltas = [d for d, _ in cdf]
        fracs = [f for _, f in cdf]
        assert deltas == sorted(deltas)
        assert fracs == sorted(fracs) and fracs[-1] == 1.0

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            evaluate({}, self.queries, self.captions)
        with pytest.raises(ValueError):
            evaluate({"m": constant_method(self.ranking)}, [], self.captions)


class TestRRankEstimatesCorpusPrior:
    def test_mean_dcg_insensitive_to_query_half(self):
        # RRank's mean DCG reflects the collection, not the queries
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(30)]
        captions = {i: [tuple(rng.choice(words, size=6))] for i in range(120)}
        ids = np.arange(120)
        queries = [Query(int(i), "", captions[int(i)][0]) for i in ids]

        def rrank(q):
            pool = ids[ids != q.image_id]
            return rrank_ranking(pool, rng, k=25)

        report = evaluate({"rrank": rrank}, queries, captions, p=25)
        values = report.dcg_by_method["rrank"]
        first, second = np.mean(values[:60]), np.mean(values[60:])
        spread = np.std(values) / np.sqrt(60)
        assert abs(first - second) < 4 * spread + 1e-9
