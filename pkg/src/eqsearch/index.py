"""Corpus-wide embedding extraction, exact nearest-neighbor search, a
random-projection-tree forest for approximate search with exact rescoring,
the bag-of-words baseline, and binary persistence for both structures.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .corpus import Corpus
from .graph import ExpressionGraph, Vocabulary, encode
from .model import EquationEncoder, VocabularyMismatchError, embed_graphs

N_TREES = 16
LEAF_SIZE = 32


@dataclass
class EmbeddingStore:
    """id-addressable vectors with either inner-product or cosine scoring."""

    ids: list[str]
    vectors: np.ndarray  # (n, dim) float32
    model_hash: str
    metric: str = "dot"  # dot | cosine

    def __post_init__(self):
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError("id list and vector rows disagree")
        if self.metric not in ("dot", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        self._row_of = {eq_id: i for i, eq_id in enumerate(self.ids)}
        if len(self._row_of) != len(self.ids):
            raise ValueError("duplicate ids in store")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, eq_id: str) -> np.ndarray:
        return self.vectors[self._row_of[eq_id]]

    def scores(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float32)
        if self.metric == "cosine":
            norms = np.linalg.norm(self.vectors, axis=1)
            qn = np.linalg.norm(q)
            denom = np.where(norms > 0, norms, 1.0) * (qn if qn > 0 else 1.0)
            return (self.vectors @ q) / denom
        return self.vectors @ q


def embed_corpus(corpus: Corpus, model: EquationEncoder, vocab: Vocabulary,
                 checkpoint_vocab_hash: str | None = None) -> EmbeddingStore:
    """Eval-mode embedding of every corpus equation, sorted by eq_id."""
    if checkpoint_vocab_hash is not None and checkpoint_vocab_hash != vocab.content_hash():
        raise VocabularyMismatchError("vocabulary does not match the checkpoint")
    ids = sorted(corpus.equations)
    graphs = [encode(corpus.equations[eq].mathml, vocab) for eq in ids]
    vectors = embed_graphs(model, graphs).astype(np.float32)
    return EmbeddingStore(ids=ids, vectors=vectors, model_hash=vocab.content_hash())


def bow_embed(graph: ExpressionGraph) -> np.ndarray:
    """Componentwise sum of all node feature rows: a 256-d bag of nodes."""
    return graph.node_features.sum(axis=0)


def bow_embed_corpus(corpus: Corpus, vocab: Vocabulary) -> EmbeddingStore:
    ids = sorted(corpus.equations)
    vectors = np.stack([
        bow_embed(encode(corpus.equations[eq].mathml, vocab)) for eq in ids
    ]).astype(np.float32)
    return EmbeddingStore(ids=ids, vectors=vectors,
                          model_hash=vocab.content_hash(), metric="cosine")


def _top_k(store: EmbeddingStore, scores: np.ndarray, candidates: np.ndarray,
           k: int) -> list[tuple[str, float]]:
    """Top-k rows by score, descending, ties broken by lexical eq_id."""
    k = min(k, len(candidates))
    if k == 0:
        return []
    cand_scores = scores[candidates]
    if len(candidates) > k:
        # Keep everything tied with the k-th score so tie-breaking stays global.
        part = np.argpartition(-cand_scores, k - 1)
        threshold = cand_scores[part[k - 1]]
        keep = candidates[cand_scores >= threshold]
    else:
        keep = candidates
    ranked = sorted(keep, key=lambda row: (-scores[row], store.ids[row]))[:k]
    return [(store.ids[row], float(scores[row])) for row in ranked]


def query_exact(store: EmbeddingStore, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exhaustive scan; the oracle for the approximate index."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = store.scores(query)
    return _top_k(store, scores, np.arange(store.n), k)


@dataclass
class _TreeNode:
    # Internal nodes carry a hyperplane; leaves carry a row bucket.
    direction: np.ndarray | None
    threshold: float
    left: int
    right: int
    bucket: np.ndarray | None


class RpTreeIndex:
    """Forest of random-projection trees with margin-priority search.

    Each internal node splits its rows at the median projection onto a
    random unit direction; leaves hold at most leaf_size rows. Queries
    descend every tree, back-tracking through the globally smallest
    hyperplane margins until the candidate budget is met, then rescore
    candidates exactly.
    """

    def __init__(self, store: EmbeddingStore, n_trees: int = N_TREES,
                 leaf_size: int = LEAF_SIZE, seed: int = 0):
        self.store = store
        self.n_trees = n_trees
        self.leaf_size = leaf_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.trees: list[list[_TreeNode]] = [
            self._build_tree(rng) for _ in range(n_trees)
        ]

    def _build_tree(self, rng: np.random.Generator) -> list[_TreeNode]:
        nodes: list[_TreeNode] = []
        vectors = self.store.vectors

        def split(rows: np.ndarray) -> int:
            index = len(nodes)
            nodes.append(_TreeNode(None, 0.0, -1, -1, None))
            if len(rows) <= self.leaf_size:
                nodes[index] = _TreeNode(None, 0.0, -1, -1, np.sort(rows))
                return index
            direction = rng.standard_normal(vectors.shape[1]).astype(np.float32)
            direction /= np.linalg.norm(direction)
            projections = vectors[rows] @ direction
            threshold = float(np.median(projections))
            left_mask = projections < threshold
            # Degenerate split (many equal projections): fall back to halves.
            if not left_mask.any() or left_mask.all():
                order = np.argsort(projections, kind="stable")
                half = len(rows) // 2
                left_rows, right_rows = rows[order[:half]], rows[order[half:]]
            else:
                left_rows, right_rows = rows[left_mask], rows[~left_mask]
            left = split(left_rows)
            right = split(right_rows)
            nodes[index] = _TreeNode(direction, threshold, left, right, None)
            return index

        split(np.arange(self.store.n))
        return nodes

    def query(self, query: np.ndarray, k: int, search_budget: int | None = None
              ) -> list[tuple[str, float]]:
        if search_budget is None:
            search_budget = self.n_trees * k * self.leaf_size
        q = np.asarray(query, dtype=np.float32)
        candidates: set[int] = set()
        heap: list[tuple[float, int, int]] = [(0.0, t, 0) for t in range(self.n_trees)]
        heapq.heapify(heap)
        while heap and len(candidates) < search_budget:
            margin, tree_id, node_id = heapq.heappop(heap)
            nodes = self.trees[tree_id]
            while True:
                node = nodes[node_id]
                if node.bucket is not None:
                    candidates.update(int(r) for r in node.bucket)
                    break
                gap = float(q @ node.direction) - node.threshold
                near, far = (node.right, node.left) if gap >= 0 else (node.left, node.right)
                heapq.heappush(heap, (max(margin, abs(gap)), tree_id, far))
                node_id = near
        rows = np.fromiter(sorted(candidates), dtype=np.int64, count=len(candidates))
        scores = self.store.scores(q)
        return _top_k(self.store, scores, rows, k)


def save_store(store: EmbeddingStore, path: str | Path) -> None:
    id_blob = "\n".join(store.ids).encode("utf-8")
    header = {
        "kind": "embedding-store",
        "n": store.n,
        "dim": store.dim,
        "model_hash": store.model_hash,
        "metric": store.metric,
        "ids_nbytes": len(id_blob),
    }
    ids_arr = np.frombuffer(id_blob, dtype=np.uint8).astype(np.int32)
    write_container(path, header, {"vectors": store.vectors, "ids_utf8": ids_arr})


def load_store(path: str | Path) -> EmbeddingStore:
    header, arrays = read_container(path)
    if header.get("kind") != "embedding-store":
        raise ValueError(f"{path}: not an embedding store")
    ids = bytes(arrays["ids_utf8"].astype(np.uint8)).decode("utf-8")
    return EmbeddingStore(
        ids=ids.split("\n") if ids else [],
        vectors=arrays["vectors"].astype(np.float32),
        model_hash=header["model_hash"],
        metric=header["metric"],
    )


def save_index(index: RpTreeIndex, path: str | Path) -> None:
    header = {
        "kind": "rptree-index",
        "n_trees": index.n_trees,
        "leaf_size": index.leaf_size,
        "seed": index.seed,
        "model_hash": index.store.model_hash,
        "tree_sizes": [len(tree) for tree in index.trees],
    }
    arrays: dict[str, np.ndarray] = {}
    structure = []
    for t, tree in enumerate(index.trees):
        for i, node in enumerate(tree):
            if node.bucket is not None:
                structure.append([-1, -1, len(arrays)])
                arrays[f"bucket_{t}_{i}"] = node.bucket.astype(np.int64)
            else:
                structure.append([node.left, node.right, len(arrays)])
                arrays[f"plane_{t}_{i}"] = np.concatenate(
                    [node.direction, np.float32([node.threshold])]
                ).astype(np.float32)
    arrays["structure"] = np.array(structure, dtype=np.int64)
    write_container(path, header, arrays)


def load_index(path: str | Path, store: EmbeddingStore) -> RpTreeIndex:
    header, arrays = read_container(path)
    if header.get("kind") != "rptree-index":
        raise ValueError(f"{path}: not an index file")
    if header["model_hash"] != store.model_hash:
        raise VocabularyMismatchError("index was built over a different store")
    index = RpTreeIndex.__new__(RpTreeIndex)
    index.store = store
    index.n_trees = header["n_trees"]
    index.leaf_size = header["leaf_size"]
    index.seed = header["seed"]
    index.trees = []
    structure = arrays["structure"]
    row = 0
    for t, size in enumerate(header["tree_sizes"]):
        tree: list[_TreeNode] = []
        for i in range(size):
            left, right, _ = structure[row]
            row += 1
            if left == -1:
                tree.append(_TreeNode(None, 0.0, -1, -1, arrays[f"bucket_{t}_{i}"]))
            else:
                plane = arrays[f"plane_{t}_{i}"].astype(np.float32)
                tree.append(_TreeNode(plane[:-1], float(plane[-1]), int(left), int(right), None))
        index.trees.append(tree)
    return index
