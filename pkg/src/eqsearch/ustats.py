"""U-statistics over equation triples with dependent data: ranking and
histogram-overlap kernels, complete and incomplete estimators, the
triplet dependency graph with greedy coloring, and one-sided
concentration upper bounds via Janson's inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

COMPLETE_LIMIT = 60  # the complete estimator enumerates O(n^3) triples


@dataclass
class EvalItem:
    """One equation in the evaluation universe."""

    eq_id: str
    paper_id: str
    section_index: int
    vector: np.ndarray


def positive_matrix(items: list[EvalItem], citations: set[tuple[str, str]]) -> np.ndarray:
    """P[i, j] = whether item j is a possible positive partner of item i:
    same paper (hence same section) or papers joined by a citation edge in
    either direction.
    """
    n = len(items)
    out = np.zeros((n, n), dtype=bool)
    undirected = citations | {(b, a) for a, b in citations}
    for i, a in enumerate(items):
        for j, b in enumerate(items):
            out[i, j] = a.paper_id == b.paper_id or (a.paper_id, b.paper_id) in undirected
    np.fill_diagonal(out, False)
    return out


def _triangular_masses(sims: np.ndarray, n_bins: int) -> np.ndarray:
    """(.., n_bins) triangular-kernel weights of clamped similarities."""
    centers = np.linspace(-1.0, 1.0, n_bins)
    width = 2.0 / (n_bins - 1)
    clamped = np.clip(sims, -1.0, 1.0)
    return np.maximum(0.0, 1.0 - np.abs(clamped[..., None] - centers) / width)


def ranking_kernel(sim_pos: np.ndarray, sim_neg: np.ndarray) -> np.ndarray:
    """1 when the positive similarity strictly exceeds the negative one."""
    return (sim_pos > sim_neg).astype(np.float64)


def histogram_kernel(sim_pos: np.ndarray, sim_neg: np.ndarray, n_bins: int = 64) -> np.ndarray:
    """Per-triple histogram overlap: sum over bin pairs r' <= r of the
    positive mass at r' times the negative mass at r. Lies in [0, 1].
    """
    pos = _triangular_masses(sim_pos, n_bins)
    neg = _triangular_masses(sim_neg, n_bins)
    return np.einsum("...r,...r->...", np.cumsum(pos, axis=-1), neg)


KERNELS = ("ranking", "hist")


def complete_ustat(items: list[EvalItem], citations: set[tuple[str, str]],
                   kernel: str = "ranking", n_bins: int = 64) -> float:
    """Average kernel value over all ordered triples of distinct items.

    Triples without a (positive, negative) pattern contribute zero. Guarded
    to n <= 60; beyond that use the incomplete estimator.
    """
    n = len(items)
    if n < 3:
        raise ValueError("complete U-statistic needs at least three items")
    if n > COMPLETE_LIMIT:
        raise ValueError(f"complete U-statistic is O(n^3); n={n} exceeds {COMPLETE_LIMIT}")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    vectors = np.stack([item.vector for item in items]).astype(np.float64)
    sims = vectors @ vectors.T
    positives = positive_matrix(items, citations)

    valid = (
        positives[:, :, None]
        & ~positives[:, None, :]
        & ~np.eye(n, dtype=bool)[:, :, None]
        & ~np.eye(n, dtype=bool)[:, None, :]
        & ~np.eye(n, dtype=bool)[None, :, :]
    )
    sim_pos = np.broadcast_to(sims[:, :, None], (n, n, n))
    sim_neg = np.broadcast_to(sims[:, None, :], (n, n, n))
    if kernel == "ranking":
        values = ranking_kernel(sim_pos, sim_neg)
    else:
        values = histogram_kernel(sim_pos, sim_neg, n_bins)
    total = float((values * valid).sum())
    return total / (n * (n - 1) * (n - 2))


def incomplete_ustat(triples: list[tuple[EvalItem, EvalItem, EvalItem]],
                     citations: set[tuple[str, str]],
                     kernel: str = "ranking", n_bins: int = 64) -> float:
    """Mean kernel over an explicit sample of triples."""
    if not triples:
        raise ValueError("incomplete U-statistic needs at least one triple")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    undirected = citations | {(b, a) for a, b in citations}

    def is_positive(a: EvalItem, b: EvalItem) -> bool:
        return a.eq_id != b.eq_id and (
            a.paper_id == b.paper_id or (a.paper_id, b.paper_id) in undirected
        )

    values = []
    for anchor, second, third in triples:
        if not (is_positive(anchor, second) and not is_positive(anchor, third)
                and anchor.eq_id != third.eq_id):
            values.append(0.0)
            continue
        sim_pos = float(anchor.vector @ second.vector)
        sim_neg = float(anchor.vector @ third.vector)
        if kernel == "ranking":
            values.append(float(ranking_kernel(np.float64(sim_pos), np.float64(sim_neg))))
        else:
            values.append(float(histogram_kernel(np.float64(sim_pos), np.float64(sim_neg), n_bins)))
    return float(np.mean(values))


@dataclass
class DependencyGraph:
    """Triplet instances as nodes; an edge joins triplets sharing a paper."""

    paper_triples: list[tuple[str, str, str]]

    def adjacency(self) -> list[set[int]]:
        n = len(self.paper_triples)
        sets = [set(t) for t in self.paper_triples]
        adj: list[set[int]] = [set() for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if sets[i] & sets[j]:
                    adj[i].add(j)
                    adj[j].add(i)
        return adj


def greedy_coloring(graph: DependencyGraph) -> int:
    """First-fit coloring in descending-degree order; returns the number of
    colors, an upper bound on the chromatic number.
    """
    adj = graph.adjacency()
    n = len(adj)
    if n == 0:
        return 0
    order = sorted(range(n), key=lambda v: (-len(adj[v]), v))
    colors: dict[int, int] = {}
    for v in order:
        used = {colors[u] for u in adj[v] if u in colors}
        color = 0
        while color in used:
            color += 1
        colors[v] = color
    return max(colors.values()) + 1


def janson_margin_complete(n_papers: int, delta: float) -> float:
    """One-sided margin 3 * sqrt(ln(1/delta) / (2 N)) for the complete
    estimator over N independently sampled papers.
    """
    _check_delta(delta)
    if n_papers < 1:
        raise ValueError("need at least one paper")
    return 3.0 * math.sqrt(math.log(1.0 / delta) / (2.0 * n_papers))


def janson_margin_incomplete(chromatic_bound: int, n_triples: int, delta: float) -> float:
    """One-sided margin sqrt(ln(1/delta) * chi / (2 |D|)) for the incomplete
    estimator, scaled by the greedy chromatic bound of its dependency graph.
    """
    _check_delta(delta)
    if chromatic_bound < 1 or n_triples < 1:
        raise ValueError("need a positive chromatic bound and triple count")
    return math.sqrt(math.log(1.0 / delta) * chromatic_bound / (2.0 * n_triples))


def janson_upper_bound(s_hat: float, delta: float, n_papers: int | None = None,
                       chromatic_bound: int | None = None,
                       n_triples: int | None = None) -> float:
    """Upper confidence bound on the true score at level 1 - delta."""
    if n_papers is not None:
        return s_hat + janson_margin_complete(n_papers, delta)
    if chromatic_bound is None or n_triples is None:
        raise ValueError("incomplete bound needs chromatic_bound and n_triples")
    return s_hat + janson_margin_incomplete(chromatic_bound, n_triples, delta)


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie strictly between 0 and 1")
