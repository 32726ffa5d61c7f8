"""MathML trees as feature graphs: 256-dim one-hot node features split into
a 32-slot tag block, a 32-slot attribute block and a 192-slot character
block, plus per-node child positions and undirected parent-child edges.

Also provides the identifier-permutation augmentation and the node-masking
transform used by the self-supervised objectives.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from xml.etree import ElementTree

import numpy as np

TAG_SLOTS = 32
ATTR_SLOTS = 32
CHAR_SLOTS = 192
FEATURE_DIM = TAG_SLOTS + ATTR_SLOTS + CHAR_SLOTS

# Target classes for the masking task: one extra class per optional block.
NO_ATTR_CLASS = ATTR_SLOTS
NO_CHAR_CLASS = CHAR_SLOTS


class EmptyCorpusError(ValueError):
    pass


class MalformedXmlError(ValueError):
    pass


class UnknownTagError(KeyError):
    """Tag missing from the vocabulary; tags have no UNK slot."""


@dataclass
class Vocabulary:
    """Frequency-ordered tag/attribute/character lists.

    Attributes are "name=value" strings. Attrs and chars reserve an UNK slot
    placed directly after the known entries; tags have no UNK slot.
    """

    tags: list[str]
    attrs: list[str]
    chars: list[str]

    def __post_init__(self):
        if len(self.tags) > TAG_SLOTS:
            raise ValueError("too many tags")
        if len(self.attrs) > ATTR_SLOTS - 1:
            raise ValueError("too many attributes")
        if len(self.chars) > CHAR_SLOTS - 1:
            raise ValueError("too many characters")
        self._tag_index = {t: i for i, t in enumerate(self.tags)}
        self._attr_index = {a: i for i, a in enumerate(self.attrs)}
        self._char_index = {c: i for i, c in enumerate(self.chars)}

    @property
    def attr_unk(self) -> int:
        return len(self.attrs)

    @property
    def char_unk(self) -> int:
        return len(self.chars)

    def tag_index(self, tag: str) -> int:
        try:
            return self._tag_index[tag]
        except KeyError:
            raise UnknownTagError(tag) from None

    def attr_index(self, attr: str) -> int:
        return self._attr_index.get(attr, self.attr_unk)

    def char_index(self, char: str) -> int:
        return self._char_index.get(char, self.char_unk)

    def to_json(self) -> str:
        return json.dumps(
            {"tags": self.tags, "attrs": self.attrs, "chars": self.chars},
            ensure_ascii=False, separators=(",", ":"),
        )

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tags=data["tags"], attrs=data["attrs"], chars=data["chars"])


def _strip_ns(name: str) -> str:
    return name.rsplit("}", 1)[-1]


def _parse_mathml(mathml: str) -> ElementTree.Element:
    try:
        return ElementTree.fromstring(mathml)
    except ElementTree.ParseError as exc:
        raise MalformedXmlError(str(exc)) from exc


def _element_parts(elem: ElementTree.Element) -> tuple[str, list[str], str]:
    """(tag, attribute "name=value" strings, stripped leaf text)."""
    tag = _strip_ns(elem.tag)
    attrs = [f"{_strip_ns(k)}={v}" for k, v in sorted(elem.attrib.items())]
    text = (elem.text or "").strip()
    return tag, attrs, text


def build_vocabulary(corpus) -> Vocabulary:
    """Count tag/attribute/character frequencies over all corpus MathML and
    keep the top 32/31/191, ties broken lexically.
    """
    if corpus.n_equations == 0:
        raise EmptyCorpusError("vocabulary needs at least one equation")
    tag_counts: Counter[str] = Counter()
    attr_counts: Counter[str] = Counter()
    char_counts: Counter[str] = Counter()
    for eq_id in sorted(corpus.equations):
        root = _parse_mathml(corpus.equations[eq_id].mathml)
        for elem in root.iter():
            tag, attrs, text = _element_parts(elem)
            tag_counts[tag] += 1
            attr_counts.update(attrs)
            char_counts.update(text)

    def top(counts: Counter[str], limit: int) -> list[str]:
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [key for key, _ in ranked[:limit]]

    return Vocabulary(
        tags=top(tag_counts, TAG_SLOTS),
        attrs=top(attr_counts, ATTR_SLOTS - 1),
        chars=top(char_counts, CHAR_SLOTS - 1),
    )


@dataclass
class ExpressionGraph:
    """Tree of MathML elements with one-hot features.

    node_features: (n, 256) float32, one-hot per block; multi-character leaf
    text is split into one child node per character, each carrying the
    parent's tag block and its own character slot.
    edges: (2, E) int64 with both directions of every parent-child edge.
    positions: 0-based child index under the parent (root gets 0).
    """

    node_features: np.ndarray
    positions: np.ndarray
    edges: np.ndarray
    node_kinds: list[str]

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def copy(self) -> "ExpressionGraph":
        return ExpressionGraph(
            node_features=self.node_features.copy(),
            positions=self.positions.copy(),
            edges=self.edges.copy(),
            node_kinds=list(self.node_kinds),
        )


def encode(mathml: str, vocab: Vocabulary) -> ExpressionGraph:
    """One node per XML element (plus per-character children for leaf text
    longer than one character), with one-hot features and child positions.
    """
    root = _parse_mathml(mathml)
    features: list[np.ndarray] = []
    positions: list[int] = []
    kinds: list[str] = []
    edge_pairs: list[tuple[int, int]] = []

    def new_node(tag_idx: int, attr_idx: int | None, char_idx: int | None,
                 kind: str, position: int) -> int:
        row = np.zeros(FEATURE_DIM, dtype=np.float32)
        row[tag_idx] = 1.0
        if attr_idx is not None:
            row[TAG_SLOTS + attr_idx] = 1.0
        if char_idx is not None:
            row[TAG_SLOTS + ATTR_SLOTS + char_idx] = 1.0
        features.append(row)
        positions.append(position)
        kinds.append(kind)
        return len(features) - 1

    def walk(elem: ElementTree.Element, position: int) -> int:
        tag, attrs, text = _element_parts(elem)
        tag_idx = vocab.tag_index(tag)
        known = [vocab.attr_index(a) for a in attrs]
        attr_idx = min(known) if known else None  # most frequent attribute
        char_idx = vocab.char_index(text) if len(text) == 1 else None
        node = new_node(tag_idx, attr_idx, char_idx, tag, position)
        child_pos = 0
        if len(text) > 1:
            for ch in text:
                child = new_node(tag_idx, None, vocab.char_index(ch), tag, child_pos)
                edge_pairs.append((node, child))
                child_pos += 1
        for child_elem in elem:
            child = walk(child_elem, child_pos)
            edge_pairs.append((node, child))
            child_pos += 1
        return node

    walk(root, 0)
    if edge_pairs:
        directed = np.array(edge_pairs, dtype=np.int64).T
        edges = np.concatenate([directed, directed[::-1]], axis=1)
    else:
        edges = np.zeros((2, 0), dtype=np.int64)
    return ExpressionGraph(
        node_features=np.stack(features),
        positions=np.array(positions, dtype=np.int64),
        edges=edges,
        node_kinds=kinds,
    )


def augment_identifiers(graph: ExpressionGraph, seed: int, mean_flips: float = 32.0) -> ExpressionGraph:
    """Rename identifier characters with one random permutation per graph.

    Draws k ~ Poisson(mean_flips) and composes k random transpositions of
    the 192 character slots, then remaps the character block of every node
    whose tag is `mi`. Topology, positions and all other blocks are
    untouched.
    """
    rng = np.random.default_rng(seed)
    k = rng.poisson(mean_flips)
    perm = np.arange(CHAR_SLOTS)
    for _ in range(k):
        i, j = rng.choice(CHAR_SLOTS, size=2, replace=False)
        perm[i], perm[j] = perm[j], perm[i]
    out = graph.copy()
    rows = [i for i, kind in enumerate(graph.node_kinds) if kind == "mi"]
    if rows:
        block = out.node_features[rows, TAG_SLOTS + ATTR_SLOTS :]
        permuted = np.zeros_like(block)
        permuted[:, perm] = block
        out.node_features[rows, TAG_SLOTS + ATTR_SLOTS :] = permuted
    return out


@dataclass
class MaskedGraph:
    """A graph with masked (all-zero) rows plus recovery targets.

    targets holds (tag_class, attr_class, char_class) per masked node where
    attr_class 32 means no-attribute and char_class 192 means no-character.
    """

    graph: ExpressionGraph
    mask_indices: np.ndarray
    targets: np.ndarray  # (m, 3) int64


def mask_nodes(graph: ExpressionGraph, rate: float = 0.15, seed: int = 0) -> MaskedGraph:
    """Zero the features of max(1, ceil(rate * n)) uniformly chosen nodes."""
    n = graph.n_nodes
    m = max(1, int(np.ceil(rate * n)))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=m, replace=False))
    targets = np.zeros((m, 3), dtype=np.int64)
    for row, idx in enumerate(chosen):
        feats = graph.node_features[idx]
        targets[row, 0] = int(np.argmax(feats[:TAG_SLOTS]))
        attr_block = feats[TAG_SLOTS : TAG_SLOTS + ATTR_SLOTS]
        targets[row, 1] = int(np.argmax(attr_block)) if attr_block.any() else NO_ATTR_CLASS
        char_block = feats[TAG_SLOTS + ATTR_SLOTS :]
        targets[row, 2] = int(np.argmax(char_block)) if char_block.any() else NO_CHAR_CLASS
    masked = graph.copy()
    masked.node_features[chosen] = 0.0
    return MaskedGraph(graph=masked, mask_indices=chosen, targets=targets)
