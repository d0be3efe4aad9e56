"""Retrieval evaluation: ROUGE-L caption relevance, DCG@p, baseline rankings,
and per-method comparison reports (means, win rates, difference CDFs)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .retrieval import RankedList, RankEntry, VisualIndex
from . import retrieval

DEFAULT_RANK_CUTOFF = 25
DEFAULT_ROUGE_BETA = 1.2


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence (classic DP, two rows)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: Sequence[str], reference: Sequence[str],
            beta: float = DEFAULT_ROUGE_BETA) -> float:
    """LCS-based F-measure between a candidate and a reference token sequence.

    Recall is taken against the reference, precision against the candidate;
    beta weights recall (the argument order matters unless beta == 1).
    """
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    recall = lcs / len(reference)
    precision = lcs / len(candidate)
    return ((1 + beta**2) * recall * precision) / (recall + beta**2 * precision)


def relevance(query_tokens: Sequence[str], reference_captions: Sequence[Sequence[str]],
              beta: float = DEFAULT_ROUGE_BETA, aggregate: str = "max") -> float:
    """Relevance of a retrieved image to a query caption.

    Scores the query against each of the image's captions with ROUGE-L and
    aggregates with max (default) or mean.
    """
    if not reference_captions:
        raise ValueError("relevance needs at least one reference caption")
    scores = [rouge_l(query_tokens, ref, beta) for ref in reference_captions]
    if aggregate == "max":
        return max(scores)
    if aggregate == "mean":
        return sum(scores) / len(scores)
    raise ValueError(f"unknown aggregate {aggregate!r}")


def dcg(rels: Sequence[float], p: int = DEFAULT_RANK_CUTOFF) -> float:
    """Discounted cumulative gain: sum of (2^rel - 1)/log2(i + 1) up to rank p."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return sum((2.0 ** rel - 1.0) / math.log2(i + 1)
               for i, rel in enumerate(rels[:p], start=1))


def rrank_ranking(ids: Sequence[int], rng: np.random.Generator, k: int) -> RankedList:
    """Random ranking baseline: k ids drawn uniformly without replacement.

    Rank positions double as monotone placeholder distances.
    """
    if k > len(ids):
        raise ValueError(f"cannot sample {k} of {len(ids)} ids")
    picks = rng.choice(len(ids), size=k, replace=False)
    entries = [RankEntry(int(ids[i]), float(rank)) for rank, i in enumerate(picks)]
    return RankedList(entries=entries)


def vissim_ranking(index: VisualIndex, query_feature: np.ndarray,
                   query_image_id: int, k: int) -> RankedList:
    """Similarity baseline: rank by the query caption's own image feature."""
    return retrieval.query(index, query_feature, k, exclude_id=query_image_id)


@dataclass(frozen=True)
class Query:
    """One evaluation query: a caption and the image it describes."""

    image_id: int
    text: str
    tokens: tuple[str, ...]


@dataclass
class EvalReport:
    p: int
    query_ids: list[int]
    dcg_by_method: dict[str, list[float]]

    @property
    def methods(self) -> list[str]:
        return list(self.dcg_by_method)

    def mean_dcg(self, method: str) -> float:
        return float(np.mean(self.dcg_by_method[method]))

    def win_rate(self, method_a: str, method_b: str) -> float:
        """Fraction of queries where A beats B on DCG; ties count half."""
        a = self.dcg_by_method[method_a]
        b = self.dcg_by_method[method_b]
        score = sum(1.0 if x > y else 0.5 if x == y else 0.0 for x, y in zip(a, b))
        return score / len(a)

    def diff_cdf(self, method_a: str, method_b: str) -> list[tuple[float, float]]:
        """Empirical CDF of per-query DCG(A) - DCG(B)."""
        deltas = sorted(x - y for x, y in zip(self.dcg_by_method[method_a],
                                              self.dcg_by_method[method_b]))
        n = len(deltas)
        return [(d, (i + 1) / n) for i, d in enumerate(deltas)]

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "mean_dcg", "p"])
            for method in self.methods:
                writer.writerow([method, repr(self.mean_dcg(method)), self.p])

    def write_per_query_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "method", "dcg"])
            for method, values in self.dcg_by_method.items():
                for query_id, value in zip(self.query_ids, values):
                    writer.writerow([query_id, method, repr(value)])

    def write_diff_cdf_csvs(self, out_dir) -> list[str]:
        """One `delta,cumulative_fraction` CSV per method pair; returns the paths."""
        from pathlib import Path

        out_dir = Path(out_dir)
        paths = []
        for method_a, method_b in combinations(self.methods, 2):
            path = out_dir / f"diff_cdf_{method_a}_vs_{method_b}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["delta", "cumulative_fraction"])
                for delta, frac in self.diff_cdf(method_a, method_b):
                    writer.writerow([repr(delta), repr(frac)])
            paths.append(str(path))
        return paths


RankFn = Callable[[Query], RankedList]


def evaluate(methods: dict[str, RankFn], queries: Sequence[Query],
             captions_tokens: dict[int, list[tuple[str, ...]]],
             p: int = DEFAULT_RANK_CUTOFF, beta: float = DEFAULT_ROUGE_BETA,
             aggregate: str = "max") -> EvalReport:
    """Score every method on every query with DCG@p under ROUGE-L relevance.

    captions_tokens maps each retrievable image id to its tokenized captions.
    All methods must rank the same collection, so per-query relevance scores
    are cached and shared across methods.
    """
    if not methods:
        raise ValueError("no methods to evaluate")
    if not queries:
        raise ValueError("no queries to evaluate")
    dcg_by_method: dict[str, list[float]] = {name: [] for name in methods}
    for q in queries:
        rel_cache: dict[int, float] = {}
        for name, rank_fn in methods.items():
            ranking = rank_fn(q)
            rels = []
            for entry in ranking.entries[:p]:
                rel = rel_cache.get(entry.image_id)
                if rel is None:
                    try:
                        refs = captions_tokens[entry.image_id]
                    except KeyError:
                        raise ValueError(
                            f"method {name!r} retrieved image {entry.image_id}, "
                            f"which has no captions") from None
                    rel = relevance(q.tokens, refs, beta, aggregate)
                    rel_cache[entry.image_id] = rel
                rels.append(rel)
            dcg_by_method[name].append(dcg(rels, p))
    return EvalReport(p=p, query_ids=[q.image_id for q in queries],
                      dcg_by_method=dcg_by_method)
