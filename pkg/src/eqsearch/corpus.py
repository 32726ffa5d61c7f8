"""Corpus construction: display-equation extraction from LaTeX sources,
citation scanning, relation-pair extraction and the JSON-Lines disk format.

A corpus is papers -> sections -> equations plus a directed citation edge
list; it is immutable after build and is the sampling universe for the
weak-label similarity tasks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from xml.etree import ElementTree

from .latex import LatexSyntaxError, Token, compile_latex_subset, render_tokens, tokenize


@dataclass
class EquationRecord:
    eq_id: str
    paper_id: str
    section_index: int
    latex: str
    mathml: str


@dataclass
class PaperRecord:
    paper_id: str
    subject_tag: str
    sections: list[list[str]]  # eq_ids per section
    citations: list[str] = field(default_factory=list)


@dataclass
class Corpus:
    papers: list[PaperRecord]
    equations: dict[str, EquationRecord]

    def __post_init__(self):
        self._paper_index = {p.paper_id: p for p in self.papers}

    def paper(self, paper_id: str) -> PaperRecord:
        return self._paper_index[paper_id]

    def has_paper(self, paper_id: str) -> bool:
        return paper_id in self._paper_index

    def paper_equations(self, paper_id: str) -> list[str]:
        return [eq for sec in self.paper(paper_id).sections for eq in sec]

    def citation_edges(self) -> list[tuple[str, str]]:
        """Directed (citing, cited) pairs restricted to in-corpus papers."""
        return [
            (p.paper_id, cited)
            for p in self.papers
            for cited in p.citations
            if cited in self._paper_index
        ]

    def validate(self) -> None:
        seen: set[str] = set()
        for paper in self.papers:
            for section in paper.sections:
                for eq_id in section:
                    if eq_id not in self.equations:
                        raise ValueError(f"section references unknown equation {eq_id}")
                    if eq_id in seen:
                        raise ValueError(f"duplicate equation id {eq_id}")
                    seen.add(eq_id)
        if seen != set(self.equations):
            orphans = set(self.equations) - seen
            raise ValueError(f"equations not referenced by any section: {sorted(orphans)[:5]}")
        for record in self.equations.values():
            root = ElementTree.fromstring(record.mathml)
            if root.tag.rsplit("}", 1)[-1] != "math":
                raise ValueError(f"{record.eq_id}: MathML root is <{root.tag}>, not <math>")

    @property
    def n_equations(self) -> int:
        return len(self.equations)


# ---------------------------------------------------------------------------
# Equation extraction
# ---------------------------------------------------------------------------

MATH_ENVIRONMENTS = (
    "equation", "equation*", "align", "align*", "displaymath", "gather", "multline",
)

_SECTION_RE = re.compile(r"\\(?:sub)?section\*?\s*\{")
_COMMENT_RE = re.compile(r"(?<!\\)%[^\n]*")
_NEWCOMMAND_RE = re.compile(
    r"\\newcommand\s*\{\\([A-Za-z]+)\}\s*(?:\[(\d)\])?\s*\{((?:[^{}]|\{[^{}]*\})*)\}"
)
_DEF_RE = re.compile(r"\\def\s*\\([A-Za-z]+)\s*\{((?:[^{}]|\{[^{}]*\})*)\}")


@dataclass
class ExtractionDiagnostics:
    equations: int = 0
    unmatched_environments: int = 0
    macros_defined: int = 0


def _collect_macros(source: str) -> dict[str, tuple[int, str]]:
    """Macro name -> (arity in {0, 1}, body)."""
    macros: dict[str, tuple[int, str]] = {}
    for m in _NEWCOMMAND_RE.finditer(source):
        arity = int(m.group(2)) if m.group(2) else 0
        if arity <= 1:
            macros[m.group(1)] = (arity, m.group(3))
    for m in _DEF_RE.finditer(source):
        macros.setdefault(m.group(1), (0, m.group(2)))
    return macros


def expand_macros(snippet: str, macros: dict[str, tuple[int, str]], passes: int = 3) -> str:
    """Expand user macros, non-recursively, with a bounded number of passes."""
    if not macros:
        return snippet
    names = sorted(macros, key=len, reverse=True)
    pattern = re.compile(r"\\(" + "|".join(re.escape(n) for n in names) + r")(?![A-Za-z])")
    for _ in range(passes):
        out: list[str] = []
        pos = 0
        changed = False
        for m in pattern.finditer(snippet):
            arity, body = macros[m.group(1)]
            end = m.end()
            if arity == 1:
                arg_match = re.match(r"\s*\{([^{}]*)\}", snippet[end:])
                if not arg_match:
                    continue
                body = body.replace("#1", arg_match.group(1))
                end += arg_match.end()
            out.append(snippet[pos : m.start()])
            out.append(body)
            pos = end
            changed = True
        out.append(snippet[pos:])
        snippet = "".join(out)
        if not changed:
            break
    return snippet


def extract_equations(
    latex_source: str, diagnostics: ExtractionDiagnostics | None = None
) -> list[tuple[str, int]]:
    """Display-math bodies with their running section counter.

    Inline $...$ math is excluded. User-defined macros are expanded in every
    snippet. Unmatched environments are skipped and counted in diagnostics.
    """
    diag = diagnostics if diagnostics is not None else ExtractionDiagnostics()
    source = _COMMENT_RE.sub("", latex_source)
    macros = _collect_macros(source)
    diag.macros_defined += len(macros)

    spans: list[tuple[int, str]] = []  # (start position, snippet)
    for env in MATH_ENVIRONMENTS:
        begin = re.compile(r"\\begin\{" + re.escape(env) + r"\}")
        end = re.compile(r"\\end\{" + re.escape(env) + r"\}")
        for m in begin.finditer(source):
            closer = end.search(source, m.end())
            if closer is None:
                diag.unmatched_environments += 1
                continue
            spans.append((m.start(), source[m.end() : closer.start()]))
    for m in re.finditer(r"\$\$(.+?)\$\$", source, re.DOTALL):
        spans.append((m.start(), m.group(1)))
    for m in re.finditer(r"\\\[(.+?)\\\]", source, re.DOTALL):
        spans.append((m.start(), m.group(1)))
    if source.count("$$") % 2 == 1:
        diag.unmatched_environments += 1

    section_starts = [m.start() for m in _SECTION_RE.finditer(source)]
    results: list[tuple[str, int]] = []
    for start, body in sorted(spans):
        section = sum(1 for s in section_starts if s < start)
        results.append((expand_macros(body, macros).strip(), section))
    diag.equations += len(results)
    return results


# ---------------------------------------------------------------------------
# Citation extraction
# ---------------------------------------------------------------------------

_ARXIV_ARCHIVES = (
    "astro-ph|cond-mat|gr-qc|hep-ex|hep-lat|hep-ph|hep-th|math-ph|nlin|nucl-ex|"
    "nucl-th|physics|quant-ph|math|cs|q-bio|q-fin|stat|eess|econ|chao-dyn|"
    "alg-geom|dg-ga|funct-an|solv-int|patt-sol|adap-org|cmp-lg|comp-gas|"
    "atom-ph|chem-ph|plasm-ph|mtrl-th|supr-con|acc-phys|ao-sci|bayes-an"
)
_MODERN_ID_RE = re.compile(r"(?<![\d.])(\d{4}\.\d{4,5})(?:v\d+)?(?!\d)")
_LEGACY_ID_RE = re.compile(
    r"\b((?:" + _ARXIV_ARCHIVES + r")(?:\.[A-Z]{2})?/\d{7})(?:v\d+)?(?!\d)"
)


def extract_citations(bibliography_text: str) -> list[str]:
    """arXiv ids (legacy and modern form), deduplicated in first-seen order."""
    found: list[tuple[int, str]] = []
    for m in _MODERN_ID_RE.finditer(bibliography_text):
        found.append((m.start(), m.group(1)))
    for m in _LEGACY_ID_RE.finditer(bibliography_text):
        found.append((m.start(), m.group(1)))
    seen: set[str] = set()
    ordered: list[str] = []
    for _, arxiv_id in sorted(found):
        if arxiv_id not in seen:
            seen.add(arxiv_id)
            ordered.append(arxiv_id)
    return ordered


# ---------------------------------------------------------------------------
# Relation pairs
# ---------------------------------------------------------------------------


class Relation(str, Enum):
    EQ = "EQ"
    LT = "LT"
    LEQ = "LEQ"
    GT = "GT"
    GEQ = "GEQ"


_RELATION_OF_TOKEN = {"=": Relation.EQ, "<": Relation.LT, ">": Relation.GT,
                      "\\leq": Relation.LEQ, "\\geq": Relation.GEQ}

EQUALITIES = frozenset({"="})
INEQUALITIES = frozenset({"<", "\\leq"})
RELATIONS = frozenset({"=", "<", ">", "\\leq", "\\geq"})

_OPENERS = {"{", "(", "[", "\\langle"}
_CLOSERS = {"}", ")", "]", "\\rangle"}

MAX_SIDE_RATIO = 3  # token-count ratio filter on LHS vs RHS


@dataclass
class RelationPair:
    lhs_mathml: str
    rhs_mathml: str
    relation: Relation
    source_eq_id: str
    lhs_latex: str = ""
    rhs_latex: str = ""


def split_at_relation(tokens: list[Token], relations: frozenset[str]) -> int | None:
    """Index of the unique bracket-depth-0 relation token, None otherwise."""
    depth = 0
    hit: int | None = None
    for i, tok in enumerate(tokens):
        if tok.text in _OPENERS:
            depth += 1
        elif tok.text in _CLOSERS:
            depth -= 1
        elif depth == 0 and tok.text in relations:
            if hit is not None:
                return None
            hit = i
    return hit


def extract_relation_pairs(corpus: Corpus, relations: frozenset[str]) -> list[RelationPair]:
    """Split equations with exactly one top-level relation symbol into
    (LHS, RHS) pairs, dropping single-symbol sides and pairs whose
    token-count ratio exceeds MAX_SIDE_RATIO.
    """
    pairs: list[RelationPair] = []
    for eq_id in sorted(corpus.equations):
        record = corpus.equations[eq_id]
        try:
            tokens = tokenize(record.latex)
        except LatexSyntaxError:
            continue
        split = split_at_relation(tokens, relations)
        if split is None:
            continue
        lhs, rhs = tokens[:split], tokens[split + 1 :]
        if len(lhs) < 2 or len(rhs) < 2:
            continue
        if max(len(lhs), len(rhs)) > MAX_SIDE_RATIO * min(len(lhs), len(rhs)):
            continue
        lhs_latex, rhs_latex = render_tokens(lhs), render_tokens(rhs)
        try:
            lhs_mathml = compile_latex_subset(lhs_latex)
            rhs_mathml = compile_latex_subset(rhs_latex)
        except LatexSyntaxError:
            continue
        pairs.append(
            RelationPair(
                lhs_mathml=lhs_mathml,
                rhs_mathml=rhs_mathml,
                relation=_RELATION_OF_TOKEN[tokens[split].text],
                source_eq_id=eq_id,
                lhs_latex=lhs_latex,
                rhs_latex=rhs_latex,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# On-disk format: one JSON-Lines record per paper plus an equations file
# ---------------------------------------------------------------------------

PAPERS_FILE = "papers.jsonl"
EQUATIONS_FILE = "equations.jsonl"


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / PAPERS_FILE, "w", encoding="utf-8") as fh:
        for paper in corpus.papers:
            fh.write(json.dumps({
                "paper_id": paper.paper_id,
                "subject": paper.subject_tag,
                "sections": paper.sections,
                "citations": paper.citations,
            }, ensure_ascii=False) + "\n")
    with open(out / EQUATIONS_FILE, "w", encoding="utf-8") as fh:
        for eq_id in sorted(corpus.equations):
            record = corpus.equations[eq_id]
            fh.write(json.dumps({
                "eq_id": record.eq_id,
                "paper_id": record.paper_id,
                "section": record.section_index,
                "latex": record.latex,
                "mathml": record.mathml,
            }, ensure_ascii=False) + "\n")


def load_corpus(corpus_dir: str | Path) -> Corpus:
    root = Path(corpus_dir)
    papers: list[PaperRecord] = []
    with open(root / PAPERS_FILE, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            papers.append(PaperRecord(
                paper_id=rec["paper_id"],
                subject_tag=rec["subject"],
                sections=rec["sections"],
                citations=rec["citations"],
            ))
    equations: dict[str, EquationRecord] = {}
    with open(root / EQUATIONS_FILE, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            equations[rec["eq_id"]] = EquationRecord(
                eq_id=rec["eq_id"],
                paper_id=rec["paper_id"],
                section_index=rec["section"],
                latex=rec["latex"],
                mathml=rec["mathml"],
            )
    corpus = Corpus(papers=papers, equations=equations)
    corpus.validate()
    return corpus


def save_pairs(pairs: list[RelationPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({
                "lhs_mathml": pair.lhs_mathml,
                "rhs_mathml": pair.rhs_mathml,
                "relation": pair.relation.value,
                "source_eq_id": pair.source_eq_id,
                "lhs_latex": pair.lhs_latex,
                "rhs_latex": pair.rhs_latex,
            }, ensure_ascii=False) + "\n")


def load_pairs(path: str | Path) -> list[RelationPair]:
    pairs: list[RelationPair] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            pairs.append(RelationPair(
                lhs_mathml=rec["lhs_mathml"],
                rhs_mathml=rec["rhs_mathml"],
                relation=Relation(rec["relation"]),
                source_eq_id=rec["source_eq_id"],
                lhs_latex=rec.get("lhs_latex", ""),
                rhs_latex=rec.get("rhs_latex", ""),
            ))
    return pairs


def subset_by_papers(corpus: Corpus, paper_ids: list[str]) -> Corpus:
    """Restricted corpus view used for paper-level train/hold-out splits."""
    keep = set(paper_ids)
    papers = [p for p in corpus.papers if p.paper_id in keep]
    equations = {
        eq_id: corpus.equations[eq_id]
        for p in papers
        for section in p.sections
        for eq_id in section
    }
    return Corpus(papers=papers, equations=equations)


def ingest_directory(
    src_dir: str | Path, subject_tag: str = "unknown"
) -> tuple[Corpus, ExtractionDiagnostics]:
    """Build a corpus from every .tex file in a directory (one paper each).

    Snippets that fail to compile under the LaTeX subset are skipped and
    counted; paper ids are the file stems.
    """
    src = Path(src_dir)
    diag = ExtractionDiagnostics()
    papers: list[PaperRecord] = []
    equations: dict[str, EquationRecord] = {}
    skipped = 0
    for tex_path in sorted(src.glob("*.tex")):
        paper_id = tex_path.stem
        source = tex_path.read_text(encoding="utf-8", errors="replace")
        snippets = extract_equations(source, diag)
        citations = extract_citations(source)
        sections: dict[int, list[str]] = {}
        for k, (snippet, section) in enumerate(snippets):
            try:
                mathml = compile_latex_subset(snippet)
            except LatexSyntaxError:
                skipped += 1
                continue
            eq_id = f"{paper_id}:{k}"
            equations[eq_id] = EquationRecord(eq_id, paper_id, section, snippet, mathml)
            sections.setdefault(section, []).append(eq_id)
        n_sections = max(sections) + 1 if sections else 0
        papers.append(PaperRecord(
            paper_id=paper_id,
            subject_tag=subject_tag,
            sections=[sections.get(i, []) for i in range(n_sections)],
            citations=citations,
        ))
    diag.equations -= skipped
    corpus = Corpus(papers=papers, equations=equations)
    corpus.validate()
    return corpus, diag
