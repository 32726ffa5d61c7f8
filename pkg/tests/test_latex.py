"""Compiler tests: golden fixtures, positioned errors, determinism."""

import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from eqsearch.latex import (LatexSyntaxError, UnbalancedGroupError,
                            compile_latex_subset, render_tokens, tokenize)

FIXTURES = Path(__file__).parent / "fixtures"


def golden_cases() -> list[tuple[str, str]]:
    cases = []
    with open(FIXTURES / "compiler_golden.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            cases.append((rec["latex"], rec["mathml"]))
    return cases


@pytest.mark.parametrize("latex,expected", golden_cases())
def test_golden_fixture(latex, expected):
    assert compile_latex_subset(latex) == expected


def test_golden_corpus_has_30_fixtures():
    assert len(golden_cases()) == 30


@pytest.mark.parametrize("latex,error,position", [
    ("\\frac{a}{", UnbalancedGroupError, 8),
    ("a}", UnbalancedGroupError, 1),
    ("{a", UnbalancedGroupError, 0),
    ("x^", UnbalancedGroupError, 2),
    ("\\frac{a}", UnbalancedGroupError, 8),
    ("\\foo", LatexSyntaxError, 0),
    ("x #", LatexSyntaxError, 2),
    ("x^2^3", LatexSyntaxError, 3),
    ("x_i_j", LatexSyntaxError, 3),
    ("x__i", LatexSyntaxError, 2),
    ("~", LatexSyntaxError, 0),
])
def test_malformed_inputs_carry_positions(latex, error, position):
    with pytest.raises(error) as excinfo:
        compile_latex_subset(latex)
    assert excinfo.value.position == position


def test_unbalanced_is_a_syntax_error():
    # Callers that only care about "bad query" can catch one type.
    assert issubclass(UnbalancedGroupError, LatexSyntaxError)


def test_repeat_compilation_is_byte_identical():
    latex = "\\sum_{i=1}^{n} \\frac{\\alpha_i}{\\sqrt{2}}"
    assert compile_latex_subset(latex) == compile_latex_subset(latex)


def test_whitespace_is_insignificant():
    assert compile_latex_subset("a + b") == compile_latex_subset("a+b")
    assert compile_latex_subset("\\frac {a} {b}") == compile_latex_subset("\\frac{a}{b}")


def test_fixture_outputs_are_pairwise_distinct():
    outputs = [compile_latex_subset(latex) for latex, _ in golden_cases()]
    assert len(set(outputs)) == len(outputs)


def test_token_render_round_trip():
    latex = "\\min_{w} \\frac{1}{n} \\sum_{i=1}^{n} L(w, x_i)"
    rendered = render_tokens(tokenize(latex))
    assert compile_latex_subset(rendered) == compile_latex_subset(latex)


# Random well-formed expressions from a small grammar: compilation must be
# deterministic and whitespace-insensitive on all of them.
_atoms = st.sampled_from(["x", "y", "2", "10", "\\alpha", "\\hbar", "a+b", "p(q)"])


@st.composite
def expressions(draw, depth=2):
    if depth == 0:
        return draw(_atoms)
    inner = expressions(depth=depth - 1)
    form = draw(st.sampled_from(["atom", "frac", "sqrt", "sup", "sum", "font"]))
    if form == "atom":
        return draw(_atoms)
    if form == "frac":
        return f"\\frac{{{draw(inner)}}}{{{draw(inner)}}}"
    if form == "sqrt":
        return f"\\sqrt{{{draw(inner)}}}"
    if form == "sup":
        return f"{{{draw(inner)}}}^{{{draw(inner)}}}"
    if form == "sum":
        return f"\\sum_{{i=1}}^{{n}} {{{draw(inner)}}}"
    return f"\\mathbf{{{draw(inner)}}}"


@given(expressions())
def test_random_expressions_compile_deterministically(latex):
    first = compile_latex_subset(latex)
    assert compile_latex_subset(latex) == first
    spaced = latex.replace("+", " + ")
    assert compile_latex_subset(spaced) == first
