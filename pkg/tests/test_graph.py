"""Feature graphs: vocabulary construction, encoding, augmentation, masking."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqsearch.corpus import Corpus, EquationRecord, PaperRecord
from eqsearch.graph import (ATTR_SLOTS, CHAR_SLOTS, FEATURE_DIM, NO_ATTR_CLASS,
                            NO_CHAR_CLASS, TAG_SLOTS, EmptyCorpusError,
                            MalformedXmlError, UnknownTagError, Vocabulary,
                            augment_identifiers, build_vocabulary, encode,
                            mask_nodes)
from eqsearch.latex import compile_latex_subset


def corpus_of(mathml_list: list[str]) -> Corpus:
    equations = {
        f"e{i}": EquationRecord(f"e{i}", "p", 0, "", m)
        for i, m in enumerate(mathml_list)
    }
    papers = [PaperRecord("p", "t", [sorted(equations)])]
    return Corpus(papers=papers, equations=equations)


SMALL_VOCAB = Vocabulary(
    tags=["math", "mi", "mn", "mo", "mrow", "mfrac", "msup", "msub", "msqrt",
          "msubsup", "munderover"],
    attrs=["mathvariant=bold", "mathvariant=double-struck", "mathvariant=script"],
    chars=list("xyzabc012+=()"),
)


class TestVocabulary:
    def test_single_equation(self):
        vocab = build_vocabulary(corpus_of(["<math><mi>x</mi></math>"]))
        assert set(vocab.tags) == {"math", "mi"}
        assert vocab.chars == ["x"]
        assert vocab.char_index("x") == 0
        assert vocab.char_index("q") == vocab.char_unk == 1

    def test_frequency_then_lexical_order(self):
        vocab = build_vocabulary(corpus_of([
            "<math><mi>b</mi><mi>b</mi><mi>a</mi><mi>c</mi></math>",
        ]))
        assert vocab.chars == ["b", "a", "c"]

    def test_identical_content_in_different_order_gives_identical_vocab(self):
        m1 = ["<math><mi>x</mi></math>", "<math><mn>2</mn></math>"]
        v1 = build_vocabulary(corpus_of(m1))
        v2 = build_vocabulary(corpus_of(list(reversed(m1))))
        assert v1 == v2
        assert v1.content_hash() == v2.content_hash()

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpusError):
            build_vocabulary(corpus_of([]))

    def test_save_load_round_trip(self, tmp_path):
        SMALL_VOCAB.save(tmp_path / "vocab.json")
        assert Vocabulary.load(tmp_path / "vocab.json") == SMALL_VOCAB

    def test_attr_strings_are_name_value(self):
        vocab = build_vocabulary(corpus_of([
            '<math><mi mathvariant="bold">x</mi></math>',
        ]))
        assert vocab.attrs == ["mathvariant=bold"]


class TestEncode:
    def test_two_node_graph(self):
        g = encode("<math><mi>x</mi></math>", SMALL_VOCAB)
        assert g.n_nodes == 2
        assert g.edges.shape == (2, 2)  # one undirected edge, both directions
        assert list(g.positions) == [0, 0]
        leaf = g.node_features[1]
        assert leaf[SMALL_VOCAB.tag_index("mi")] == 1
        assert leaf[TAG_SLOTS:TAG_SLOTS + ATTR_SLOTS].sum() == 0
        assert leaf[TAG_SLOTS + ATTR_SLOTS + SMALL_VOCAB.char_index("x")] == 1

    def test_attribute_one_hot(self):
        g = encode('<math><mi mathvariant="bold">x</mi></math>', SMALL_VOCAB)
        attr_block = g.node_features[1][TAG_SLOTS:TAG_SLOTS + ATTR_SLOTS]
        assert attr_block[SMALL_VOCAB.attr_index("mathvariant=bold")] == 1
        assert attr_block.sum() == 1

    def test_unknown_attr_maps_to_unk(self):
        g = encode('<math><mi rare="1">x</mi></math>', SMALL_VOCAB)
        attr_block = g.node_features[1][TAG_SLOTS:TAG_SLOTS + ATTR_SLOTS]
        assert attr_block[SMALL_VOCAB.attr_unk] == 1

    def test_multi_char_text_splits_into_child_nodes(self):
        g = encode("<math><mn>42</mn></math>", SMALL_VOCAB)
        # math, mn, and one child per character
        assert g.n_nodes == 4
        assert g.node_kinds == ["math", "mn", "mn", "mn"]
        assert list(g.positions) == [0, 0, 0, 1]
        four = g.node_features[2]
        assert four[SMALL_VOCAB.tag_index("mn")] == 1
        assert four[TAG_SLOTS + ATTR_SLOTS + SMALL_VOCAB.char_index("4")] == 1

    def test_positions_are_child_indices(self):
        g = encode(
            "<math><mfrac><mi>a</mi><mn>2</mn></mfrac></math>", SMALL_VOCAB)
        assert list(g.positions) == [0, 0, 0, 1]

    def test_purity(self):
        mathml = compile_latex_subset("\\frac{a}{2}")
        g1, g2 = encode(mathml, SMALL_VOCAB), encode(mathml, SMALL_VOCAB)
        assert np.array_equal(g1.node_features, g2.node_features)
        assert np.array_equal(g1.edges, g2.edges)

    def test_malformed_xml(self):
        with pytest.raises(MalformedXmlError):
            encode("<math><mi>x</mi>", SMALL_VOCAB)

    def test_unknown_tag_raises(self):
        with pytest.raises(UnknownTagError):
            encode("<math><mtable></mtable></math>", SMALL_VOCAB)

    def test_tree_shape(self):
        g = encode(compile_latex_subset("\\sum_{i=1}^{n} x_i"), SMALL_VOCAB)
        assert g.edges.shape[1] == 2 * (g.n_nodes - 1)
        assert np.array_equal(np.sort(g.edges[0]), np.sort(g.edges[1]))

    def test_one_hot_discipline(self):
        g = encode(compile_latex_subset("\\mathbb{R}^{d} + \\sqrt{42}"),
                   build_vocabulary(corpus_of([
                       compile_latex_subset("\\mathbb{R}^{d} + \\sqrt{42}")])))
        for row in g.node_features:
            assert row[:TAG_SLOTS].sum() == 1
            assert row[TAG_SLOTS:TAG_SLOTS + ATTR_SLOTS].sum() in (0, 1)
            assert row[TAG_SLOTS + ATTR_SLOTS:].sum() in (0, 1)
            assert set(np.unique(row)).issubset({0.0, 1.0})

    def test_compile_then_encode_is_injective_on_goldens(self):
        import json
        from pathlib import Path

        fixtures = Path(__file__).parent / "fixtures" / "compiler_golden.jsonl"
        mathml = [json.loads(line)["mathml"] for line in open(fixtures, encoding="utf-8")]
        vocab = build_vocabulary(corpus_of(mathml))
        signatures = set()
        for m in mathml:
            g = encode(m, vocab)
            signatures.add((g.node_features.tobytes(), g.edges.tobytes(),
                            g.positions.tobytes()))
        assert len(signatures) == len(mathml)


class TestAugment:
    def graph(self):
        return encode(compile_latex_subset("x + x + y"), SMALL_VOCAB)

    def test_zero_flips_is_identity(self):
        g = self.graph()
        out = augment_identifiers(g, seed=0, mean_flips=0.0)
        assert np.array_equal(out.node_features, g.node_features)

    def test_same_identifier_stays_consistent(self):
        g = self.graph()
        out = augment_identifiers(g, seed=123)
        rows = [i for i, k in enumerate(g.node_kinds) if k == "mi"]
        chars = {}
        for i in rows:
            before = int(np.argmax(g.node_features[i, TAG_SLOTS + ATTR_SLOTS:]))
            after = int(np.argmax(out.node_features[i, TAG_SLOTS + ATTR_SLOTS:]))
            chars.setdefault(before, set()).add(after)
        # every occurrence of the same source character maps to one target
        assert all(len(targets) == 1 for targets in chars.values())

    def test_non_character_blocks_unchanged_across_seeds(self):
        g = self.graph()
        for seed in range(1000):
            out = augment_identifiers(g, seed=seed)
            assert np.array_equal(out.node_features[:, :TAG_SLOTS + ATTR_SLOTS],
                                  g.node_features[:, :TAG_SLOTS + ATTR_SLOTS])
        assert np.array_equal(out.positions, g.positions)
        assert np.array_equal(out.edges, g.edges)

    def test_non_identifier_nodes_untouched(self):
        g = encode(compile_latex_subset("1 + 2"), SMALL_VOCAB)
        out = augment_identifiers(g, seed=7)
        assert np.array_equal(out.node_features, g.node_features)

    def test_deterministic_given_seed(self):
        g = self.graph()
        a = augment_identifiers(g, seed=42)
        b = augment_identifiers(g, seed=42)
        assert np.array_equal(a.node_features, b.node_features)


class TestMask:
    def test_single_node_graph_masks_that_node(self):
        g = encode("<math></math>", SMALL_VOCAB)
        assert g.n_nodes == 1
        masked = mask_nodes(g, seed=0)
        assert list(masked.mask_indices) == [0]
        assert masked.graph.node_features[0].sum() == 0

    def test_target_read_off(self):
        g = encode("<math><mi>x</mi></math>", SMALL_VOCAB)
        masked = mask_nodes(g, rate=1.0, seed=0)
        row = list(masked.mask_indices).index(1)
        assert tuple(masked.targets[row]) == (
            SMALL_VOCAB.tag_index("mi"), NO_ATTR_CLASS, SMALL_VOCAB.char_index("x"))

    def test_exact_count_at_rate(self):
        g = encode(compile_latex_subset("a+b+c+d+e+f+g+h+i+j"), SMALL_VOCAB)
        assert g.n_nodes == 20
        masked = mask_nodes(g, rate=0.15, seed=1)
        assert len(masked.mask_indices) == 3  # ceil(0.15 * 20)

    def test_masked_rows_are_exactly_zero(self):
        g = encode(compile_latex_subset("\\frac{a}{b}"), SMALL_VOCAB)
        masked = mask_nodes(g, seed=9)
        assert np.all(masked.graph.node_features[masked.mask_indices] == 0)
        untouched = np.setdiff1d(np.arange(g.n_nodes), masked.mask_indices)
        assert np.array_equal(masked.graph.node_features[untouched],
                              g.node_features[untouched])

    @given(st.integers(1, 60), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_mask_coverage_property(self, n_tokens, seed):
        latex = "+".join(["x"] * n_tokens)
        g = encode(compile_latex_subset(latex), SMALL_VOCAB)
        masked = mask_nodes(g, rate=0.15, seed=seed)
        expected = max(1, int(np.ceil(0.15 * g.n_nodes)))
        assert len(masked.mask_indices) == expected
        assert len(set(masked.mask_indices)) == expected
