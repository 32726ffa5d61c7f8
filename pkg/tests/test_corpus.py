"""Corpus construction: equation extraction, citations, relation pairs,
and the JSON-Lines round trip."""

import numpy as np
import pytest

from eqsearch.corpus import (EQUALITIES, INEQUALITIES, RELATIONS, Corpus,
                             EquationRecord, ExtractionDiagnostics, PaperRecord,
                             Relation, extract_citations, extract_equations,
                             extract_relation_pairs, ingest_directory, load_corpus,
                             load_pairs, save_corpus, save_pairs, split_at_relation,
                             subset_by_papers)
from eqsearch.latex import compile_latex_subset, tokenize


def make_corpus(latex_by_paper: dict[str, list[list[str]]],
                citations: dict[str, list[str]] | None = None) -> Corpus:
    papers, equations = [], {}
    for paper_id, sections in latex_by_paper.items():
        id_sections = []
        for s, section in enumerate(sections):
            ids = []
            for k, latex in enumerate(section):
                eq_id = f"{paper_id}:{s}:{k}"
                equations[eq_id] = EquationRecord(
                    eq_id=eq_id, paper_id=paper_id, section_index=s,
                    latex=latex, mathml=compile_latex_subset(latex))
                ids.append(eq_id)
            id_sections.append(ids)
        papers.append(PaperRecord(paper_id=paper_id, subject_tag="t",
                                  sections=id_sections,
                                  citations=(citations or {}).get(paper_id, [])))
    corpus = Corpus(papers=papers, equations=equations)
    corpus.validate()
    return corpus


class TestExtractEquations:
    def test_single_environment(self):
        source = "\\begin{equation}a+b\\end{equation}"
        assert extract_equations(source) == [("a+b", 0)]

    def test_macro_expansion(self):
        source = "\\newcommand{\\vv}{w}\n\\[\\vv^2\\]"
        assert extract_equations(source) == [("w^2", 0)]

    def test_parameterized_macro(self):
        source = "\\newcommand{\\norm}[1]{|#1|}\n$$\\norm{x}$$"
        assert extract_equations(source) == [("|x|", 0)]

    def test_inline_math_excluded(self):
        assert extract_equations("only $x$ inline") == []

    def test_section_counter(self):
        source = (
            "$$a$$ \\section{One} $$b$$ \\subsection{Two} "
            "\\begin{align}c\\end{align}"
        )
        assert extract_equations(source) == [("a", 0), ("b", 1), ("c", 2)]

    def test_all_environments_recognized(self):
        envs = ["equation", "equation*", "align", "align*", "displaymath",
                "gather", "multline"]
        source = "".join(f"\\begin{{{e}}}x{i}\\end{{{e}}}" for i, e in enumerate(envs))
        source += "$$y$$\\[z\\]"
        snippets = [s for s, _ in extract_equations(source)]
        assert snippets == [f"x{i}" for i in range(len(envs))] + ["y", "z"]

    def test_unmatched_environment_skipped_and_counted(self):
        diag = ExtractionDiagnostics()
        out = extract_equations("\\begin{equation}a+b", diag)
        assert out == []
        assert diag.unmatched_environments == 1

    def test_comments_are_ignored(self):
        source = "% \\section{hidden}\n$$a$$"
        assert extract_equations(source) == [("a", 0)]

    def test_macro_expansion_is_bounded(self):
        # Self-referential macro must not loop; three passes then stop.
        source = "\\newcommand{\\r}{\\r x}$$\\r$$"
        (snippet, _), = extract_equations(source)
        assert snippet.count("x") == 3

    def test_no_snippet_contains_environment_markers(self):
        source = "\\begin{align}a\\end{align}\\begin{equation*}b\\end{equation*}$$c$$"
        for snippet, _ in extract_equations(source):
            assert "\\begin{" not in snippet and "\\end{" not in snippet


class TestExtractCitations:
    def test_single_modern_id(self):
        assert extract_citations("see arXiv:1706.03762 for details") == ["1706.03762"]

    def test_legacy_and_versioned(self):
        text = "hep-ph/9905221 and 1409.0473v2"
        assert extract_citations(text) == ["hep-ph/9905221", "1409.0473"]

    def test_empty(self):
        assert extract_citations("") == []

    def test_deduplication_keeps_first_occurrence_order(self):
        text = "1706.03762, 1409.0473, 1706.03762 again"
        assert extract_citations(text) == ["1706.03762", "1409.0473"]

    def test_subject_classed_legacy_id(self):
        assert extract_citations("math.GT/0309136") == ["math.GT/0309136"]

    def test_plain_decimals_are_not_ids(self):
        assert extract_citations("pi is 3.14159 and e is 2.71828") == []


class TestRelationPairs:
    def test_symmetric_split(self):
        corpus = make_corpus({"p": [["a+b = b+a"]]})
        (pair,) = extract_relation_pairs(corpus, EQUALITIES)
        assert pair.relation is Relation.EQ
        assert pair.lhs_mathml == compile_latex_subset("a+b")
        assert pair.rhs_mathml == compile_latex_subset("b+a")

    def test_single_symbol_side_rejected(self):
        corpus = make_corpus({"p": [["E = m c^2"]]})
        assert extract_relation_pairs(corpus, EQUALITIES) == []

    def test_two_relations_at_depth_zero_rejected(self):
        corpus = make_corpus({"p": [["a + b = b + c = c"]]})
        assert extract_relation_pairs(corpus, EQUALITIES) == []

    def test_relation_inside_brackets_does_not_count(self):
        corpus = make_corpus({"p": [["f(a = b) + c \\leq d + e"]]})
        (pair,) = extract_relation_pairs(corpus, INEQUALITIES)
        assert pair.relation is Relation.LEQ

    def test_ratio_filter(self):
        long_side = " + ".join(["x"] * 12)
        corpus = make_corpus({"p": [[f"a + b = {long_side}"]]})
        assert extract_relation_pairs(corpus, EQUALITIES) == []

    def test_presets(self):
        corpus = make_corpus({"p": [[
            "a+b = b+a", "a+b < c+d", "a+b \\geq c+d",
        ]]})
        assert {p.relation for p in extract_relation_pairs(corpus, EQUALITIES)} == {Relation.EQ}
        assert {p.relation for p in extract_relation_pairs(corpus, INEQUALITIES)} == {Relation.LT}
        assert {p.relation for p in extract_relation_pairs(corpus, RELATIONS)} == {
            Relation.EQ, Relation.LT, Relation.GEQ}

    def test_split_reconcatenation_reproduces_token_stream(self):
        latex = "\\frac{a}{b} = \\frac{a c}{b c}"
        tokens = tokenize(latex)
        split = split_at_relation(tokens, EQUALITIES)
        rebuilt = [t.text for t in tokens[:split]] + ["="] + [t.text for t in tokens[split + 1:]]
        assert rebuilt == [t.text for t in tokens]

    def test_pairs_file_round_trip(self, tmp_path):
        corpus = make_corpus({"p": [["a+b = b+a", "x y \\leq y x"]]})
        pairs = extract_relation_pairs(corpus, RELATIONS)
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs, path)
        assert load_pairs(path) == pairs


class TestCorpusIO:
    def test_round_trip(self, tmp_path):
        corpus = make_corpus(
            {"p1": [["a+b", "c"], ["d^2"]], "p2": [["e_i"]]},
            citations={"p1": ["p2", "1706.03762"]},
        )
        save_corpus(corpus, tmp_path / "corpus")
        loaded = load_corpus(tmp_path / "corpus")
        assert [p.paper_id for p in loaded.papers] == ["p1", "p2"]
        assert loaded.equations == corpus.equations
        assert loaded.citation_edges() == [("p1", "p2")]

    def test_equation_count_invariant(self):
        corpus = make_corpus({"p1": [["a", "b"], ["c"]], "p2": [["d"]]})
        per_paper = sum(len(corpus.paper_equations(p.paper_id)) for p in corpus.papers)
        assert per_paper == corpus.n_equations == 4

    def test_validate_rejects_dangling_section_reference(self):
        corpus = make_corpus({"p": [["a"]]})
        corpus.papers[0].sections[0].append("missing")
        with pytest.raises(ValueError):
            corpus.validate()

    def test_subset_by_papers(self):
        corpus = make_corpus({"p1": [["a"]], "p2": [["b"]], "p3": [["c"]]})
        sub = subset_by_papers(corpus, ["p1", "p3"])
        assert {p.paper_id for p in sub.papers} == {"p1", "p3"}
        assert sub.n_equations == 2

    def test_ingest_directory(self, tmp_path):
        (tmp_path / "alpha.tex").write_text(
            "\\begin{equation}a+b\\end{equation}\\section{s}$$c^2$$\n"
            "arXiv:1706.03762", encoding="utf-8")
        (tmp_path / "beta.tex").write_text("\\[x_i\\] and $inline$", encoding="utf-8")
        corpus, diag = ingest_directory(tmp_path)
        assert [p.paper_id for p in corpus.papers] == ["alpha", "beta"]
        assert corpus.n_equations == 3
        assert corpus.paper("alpha").citations == ["1706.03762"]
        assert diag.equations == 3
        by_section = corpus.paper("alpha").sections
        assert len(by_section) == 2
