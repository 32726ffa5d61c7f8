"""Weak-label triplet sampling over a corpus.

A positive partner shares the anchor's section, paper, or a citation edge
(treated as undirected); negatives come from an independently drawn random
paper. Failed method draws restart from a fresh anchor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import Corpus

MAX_RESTARTS = 100


class SamplingMethod(str, Enum):
    SAME_SECTION = "SAME_SECTION"
    SAME_PAPER = "SAME_PAPER"
    CITATION = "CITATION"


class ExhaustedRetriesError(RuntimeError):
    """No valid triplet found within the restart budget (degenerate corpus)."""


@dataclass
class TripletSample:
    anchor: str
    positive: str
    negative: str
    method: SamplingMethod


class TripletSampler:
    """Precomputes per-paper/per-section equation lists and the undirected
    in-corpus citation adjacency, then draws triplets from a seed stream.
    """

    def __init__(self, corpus: Corpus, rng: np.random.Generator):
        if len(corpus.papers) < 2:
            raise ValueError("triplet sampling needs at least two papers")
        self.corpus = corpus
        self.rng = rng
        self.paper_ids = [p.paper_id for p in corpus.papers]
        self.paper_eqs = {p.paper_id: corpus.paper_equations(p.paper_id) for p in corpus.papers}
        self.section_eqs = {
            (p.paper_id, idx): list(section)
            for p in corpus.papers
            for idx, section in enumerate(p.sections)
        }
        neighbors: dict[str, set[str]] = {pid: set() for pid in self.paper_ids}
        for src, dst in corpus.citation_edges():
            if src != dst:
                neighbors[src].add(dst)
                neighbors[dst].add(src)
        self.cited_eqs = {
            pid: [eq for other in sorted(adj) for eq in self.paper_eqs[other]]
            for pid, adj in neighbors.items()
        }
        self.methods = list(SamplingMethod)

    def _uniform_equation(self) -> str:
        for _ in range(MAX_RESTARTS):
            paper = self.paper_ids[self.rng.integers(len(self.paper_ids))]
            eqs = self.paper_eqs[paper]
            if eqs:
                return eqs[self.rng.integers(len(eqs))]
        raise ExhaustedRetriesError("could not draw an equation from a random paper")

    def _candidates(self, anchor: str, method: SamplingMethod) -> list[str]:
        record = self.corpus.equations[anchor]
        if method is SamplingMethod.SAME_SECTION:
            pool = self.section_eqs.get((record.paper_id, record.section_index), [])
        elif method is SamplingMethod.SAME_PAPER:
            pool = self.paper_eqs[record.paper_id]
        else:
            pool = self.cited_eqs[record.paper_id]
        return [eq for eq in pool if eq != anchor]

    def sample(self) -> TripletSample:
        for _ in range(MAX_RESTARTS):
            paper = self.paper_ids[self.rng.integers(len(self.paper_ids))]
            eqs = self.paper_eqs[paper]
            if not eqs:
                continue
            anchor = eqs[self.rng.integers(len(eqs))]
            method = self.methods[self.rng.integers(len(self.methods))]
            candidates = self._candidates(anchor, method)
            if not candidates:
                continue
            positive = candidates[self.rng.integers(len(candidates))]
            negative = self._uniform_equation()
            return TripletSample(anchor, positive, negative, method)
        raise ExhaustedRetriesError(
            f"no valid triplet after {MAX_RESTARTS} restarts"
        )


def sample_triplet(corpus: Corpus, rng: np.random.Generator) -> TripletSample:
    """One-shot draw; loops should reuse a TripletSampler instead."""
    return TripletSampler(corpus, rng).sample()


def satisfies_method(corpus: Corpus, triplet: TripletSample) -> bool:
    """True when the positive verifiably stands in the sampled relation."""
    a = corpus.equations[triplet.anchor]
    p = corpus.equations[triplet.positive]
    if triplet.method is SamplingMethod.SAME_SECTION:
        return a.paper_id == p.paper_id and a.section_index == p.section_index
    if triplet.method is SamplingMethod.SAME_PAPER:
        return a.paper_id == p.paper_id
    edges = set(corpus.citation_edges())
    return (a.paper_id, p.paper_id) in edges or (p.paper_id, a.paper_id) in edges


def materialize_triplets(corpus: Corpus, count: int, seed: int, path: str | Path) -> None:
    """Write a fixed triplet set as JSON Lines {anchor, positive, negative, method}."""
    sampler = TripletSampler(corpus, np.random.default_rng(seed))
    with open(path, "w", encoding="utf-8") as fh:
        for _ in range(count):
            t = sampler.sample()
            fh.write(json.dumps({
                "anchor": t.anchor, "positive": t.positive,
                "negative": t.negative, "method": t.method.value,
            }) + "\n")


def load_triplets(path: str | Path) -> list[TripletSample]:
    triplets: list[TripletSample] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            triplets.append(TripletSample(
                anchor=rec["anchor"], positive=rec["positive"],
                negative=rec["negative"], method=SamplingMethod(rec["method"]),
            ))
    return triplets
