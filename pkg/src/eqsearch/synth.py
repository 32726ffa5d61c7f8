"""Synthetic template corpora for experiments and the acceptance suite.

Papers draw a topic (a fixed pair of equation templates), fill one section
per template with identifier-renamed instances, and cite random papers of
the same topic. Contextual similarity is therefore learnable (topics) while
surface identifiers carry no signal.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, EquationRecord, PaperRecord
from .latex import compile_latex_subset, render_tokens, tokenize

PLACEHOLDERS = ("A", "B", "C", "D")

# Letters that appear literally in templates and must survive renaming.
RESERVED_LETTERS = {"P", "L", "d"}

TEMPLATES = (
    r"\frac{A}{B} = \frac{A C}{B C}",
    r"A^2 + B^2 = C^2",
    r"\sum_{A=1}^{B} C_A = C_B + D",
    r"\sqrt{A+B} \leq \sqrt{A} + \sqrt{B}",
    r"P(A|B) = \frac{P(A,B)}{P(B)}",
    r"\min_{A} \frac{1}{B} \sum_{C=1}^{B} L(A, D_C)",
    r"\mathbf{A} = \hbar \mathbf{B} + C",
    r"A_{B+1} = A_B + \alpha C_B",
    r"\int A(B) d B = C(B)",
    r"\langle A, B \rangle \leq |A| |B|",
)


@dataclass
class SynthConfig:
    n_papers: int = 200
    eqs_per_section: tuple[int, int] = (2, 3)  # inclusive range
    n_citations: int = 2
    seed: int = 0


def rename_identifiers(template: str, rng: np.random.Generator) -> str:
    """Substitute placeholder identifiers with fresh distinct letters."""
    pool = [c for c in string.ascii_letters if c not in RESERVED_LETTERS]
    picks = rng.choice(len(pool), size=len(PLACEHOLDERS), replace=False)
    mapping = {ph: pool[i] for ph, i in zip(PLACEHOLDERS, picks)}
    tokens = tokenize(template)
    for tok in tokens:
        if tok.kind == "letter" and tok.text in mapping:
            tok.text = mapping[tok.text]
    return render_tokens(tokens)


def generate_corpus(config: SynthConfig) -> Corpus:
    """Template corpus with one topic (template pair) per paper."""
    rng = np.random.default_rng(config.seed)
    n_topics = len(TEMPLATES) // 2
    papers: list[PaperRecord] = []
    equations: dict[str, EquationRecord] = {}
    topic_of: list[int] = []
    lo, hi = config.eqs_per_section

    for p in range(config.n_papers):
        topic = int(rng.integers(n_topics))
        topic_of.append(topic)
        paper_id = f"p{p:04d}"
        sections: list[list[str]] = []
        counter = 0
        for section_index, template_index in enumerate((2 * topic, 2 * topic + 1)):
            section: list[str] = []
            for _ in range(int(rng.integers(lo, hi + 1))):
                latex = rename_identifiers(TEMPLATES[template_index], rng)
                eq_id = f"{paper_id}:e{counter}"
                counter += 1
                equations[eq_id] = EquationRecord(
                    eq_id=eq_id, paper_id=paper_id, section_index=section_index,
                    latex=latex, mathml=compile_latex_subset(latex),
                )
                section.append(eq_id)
            sections.append(section)
        papers.append(PaperRecord(
            paper_id=paper_id, subject_tag=f"topic{topic}", sections=sections,
        ))

    by_topic: dict[int, list[int]] = {}
    for i, topic in enumerate(topic_of):
        by_topic.setdefault(topic, []).append(i)
    for i, paper in enumerate(papers):
        peers = [j for j in by_topic[topic_of[i]] if j != i]
        if not peers:
            continue
        n_cites = min(config.n_citations, len(peers))
        picks = rng.choice(len(peers), size=n_cites, replace=False)
        paper.citations = [papers[peers[j]].paper_id for j in picks]

    corpus = Corpus(papers=papers, equations=equations)
    corpus.validate()
    return corpus
