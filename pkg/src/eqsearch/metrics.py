"""Retrieval evaluation: ranking score over triplets, precision@k,
unnormalized mean average precision, the keyword-relevance heuristic with
approximate substring matching, recall@k over relation pairs, and
leave-one-out 1-NN accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .index import EmbeddingStore, query_exact

UMAP_HORIZON = 1000


@dataclass
class QuerySpec:
    query_latex: str
    keywords: list[str]

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("a query needs at least one keyword")
        self.keywords = [k.lower() for k in self.keywords]


def ranking_score(triplets: list[tuple[str, str, str]],
                  embeddings: dict[str, np.ndarray]) -> float:
    """Fraction of (anchor, positive, negative) id triples where the positive
    pair has the strictly higher inner product; ties count as losses.
    """
    if not triplets:
        raise ValueError("ranking score over an empty triplet list")
    wins = 0
    for anchor, positive, negative in triplets:
        a = embeddings[anchor]
        if float(a @ embeddings[positive]) > float(a @ embeddings[negative]):
            wins += 1
    return wins / len(triplets)


def precision_at_k(results: list[str], relevant: set[str], k: int) -> float:
    """Relevant results among the first k, divided by k even when fewer than
    k results were returned (under-retrieval is penalized).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = sum(1 for r in results[:k] if r in relevant)
    return hits / k


def umap_score(results: list[str], relevant: set[str], horizon: int = UMAP_HORIZON) -> float:
    """Unnormalized MAP: sum of P(k) over the ranks k <= horizon that hold a
    relevant result.
    """
    total = 0.0
    hits = 0
    for rank, result in enumerate(results[:horizon], start=1):
        if result in relevant:
            hits += 1
            total += hits / rank
    return total


def levenshtein_within(needle: str, text: str, max_distance: int) -> bool:
    """Approximate substring match: does any substring of text lie within
    the edit-distance budget of needle? Free start/end in the text.
    """
    n = len(needle)
    if n == 0:
        return True
    previous = list(range(n + 1))
    best = previous[n]
    for ch in text:
        current = [0] * (n + 1)
        for i in range(1, n + 1):
            current[i] = min(
                previous[i - 1] + (needle[i - 1] != ch),
                previous[i] + 1,
                current[i - 1] + 1,
            )
        best = min(best, current[n])
        if best <= max_distance:
            return True
        previous = current
    return best <= max_distance


def keyword_relevant(section_text: str, keywords: list[str]) -> bool:
    """A result counts as relevant if any keyword occurs in the section text;
    keywords longer than 10 characters also match within edit distance 1.
    """
    for keyword in keywords:
        if keyword in section_text:
            return True
        if len(keyword) > 10 and levenshtein_within(keyword, section_text, 1):
            return True
    return False


def recall_at_k(pair_ids: list[tuple[str, str]], store: EmbeddingStore, k: int) -> float:
    """Query each side of every pair; a hit means the partner id appears in
    the top-k neighbors with the query itself excluded.
    """
    if not pair_ids:
        raise ValueError("recall over an empty pair list")
    hits = 0
    for lhs_id, rhs_id in pair_ids:
        for query_id, partner_id in ((lhs_id, rhs_id), (rhs_id, lhs_id)):
            results = query_exact(store, store.vector(query_id), k + 1)
            top = [eq_id for eq_id, _ in results if eq_id != query_id][:k]
            if partner_id in top:
                hits += 1
    return hits / (2 * len(pair_ids))


def loo_1nn_accuracy(embeddings: np.ndarray, labels: list) -> float:
    """Leave-one-out nearest-neighbor accuracy under Euclidean distance;
    distance ties resolve to the lowest index.
    """
    n = len(labels)
    if n < 2:
        raise ValueError("leave-one-out needs at least two items")
    x = np.asarray(embeddings, dtype=np.float64)
    sq = (x * x).sum(axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(dist, np.inf)
    nearest = dist.argmin(axis=1)
    return float(np.mean([labels[i] == labels[j] for i, j in enumerate(nearest)]))
