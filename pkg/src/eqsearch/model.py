"""Graph-convolutional equation encoder.

Architecture: a positional first layer mixing one-hot node features with
scaled sinusoid position embeddings, three further width-512 graph
convolutions with neighborhood-sum aggregation, node-level batch
normalization, mean pooling, a 64-d projection, soft embedding-norm
normalization with running statistics, and three linear classification
heads for the masking task.

Neighborhood aggregation follows the transform-then-sum convention: each
neighbor contributes W x_j (+ alpha E(p_j) in the first layer) + b, and the
sum runs over N(i) plus the node itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .container import read_container, write_container
from .graph import ATTR_SLOTS, CHAR_SLOTS, FEATURE_DIM, TAG_SLOTS, ExpressionGraph

HIDDEN_DIM = 512
EMBED_DIM = 64
TAG_CLASSES = TAG_SLOTS
ATTR_CLASSES = ATTR_SLOTS + 1
CHAR_CLASSES = CHAR_SLOTS + 1

BN_PLACEMENTS = ("after_l1_l2", "before_l2_l4")

CHECKPOINT_VERSION = 1


class DimensionMismatchError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


class VocabularyMismatchError(ValueError):
    pass


def positional_embedding(p: int, d: int = HIDDEN_DIM) -> np.ndarray:
    """Fixed sinusoid embedding: even slots sin(p / 10000^(2i/d)), odd slots
    the matching cosine.
    """
    if p < 0:
        raise ValueError("positions are non-negative")
    i = np.arange(d // 2, dtype=np.float64)
    angle = p / np.power(10000.0, 2.0 * i / d)
    out = np.empty(d, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def _sinusoid_table(positions: torch.Tensor, d: int, dtype: torch.dtype) -> torch.Tensor:
    i = torch.arange(d // 2, dtype=dtype, device=positions.device)
    denom = torch.pow(torch.tensor(10000.0, dtype=dtype), 2.0 * i / d)
    angle = positions.to(dtype).unsqueeze(1) / denom
    out = torch.empty((positions.shape[0], d), dtype=dtype, device=positions.device)
    out[:, 0::2] = torch.sin(angle)
    out[:, 1::2] = torch.cos(angle)
    return out


@dataclass
class GraphBatch:
    """Concatenated node data of a list of graphs."""

    features: torch.Tensor  # (N, 256)
    positions: torch.Tensor  # (N,)
    edge_src: torch.Tensor  # (E,)
    edge_dst: torch.Tensor  # (E,)
    graph_ids: torch.Tensor  # (N,)
    n_graphs: int

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


def batch_graphs(graphs: list[ExpressionGraph], dtype: torch.dtype = torch.float32) -> GraphBatch:
    if not graphs:
        raise ValueError("empty graph batch")
    feats, pos, srcs, dsts, gids = [], [], [], [], []
    offset = 0
    for g, graph in enumerate(graphs):
        if graph.node_features.shape[1] != FEATURE_DIM:
            raise DimensionMismatchError(
                f"expected {FEATURE_DIM}-d node features, got {graph.node_features.shape[1]}"
            )
        feats.append(torch.as_tensor(graph.node_features, dtype=dtype))
        pos.append(torch.as_tensor(graph.positions))
        srcs.append(torch.as_tensor(graph.edges[0] + offset))
        dsts.append(torch.as_tensor(graph.edges[1] + offset))
        gids.append(torch.full((graph.n_nodes,), g, dtype=torch.int64))
        offset += graph.n_nodes
    return GraphBatch(
        features=torch.cat(feats),
        positions=torch.cat(pos),
        edge_src=torch.cat(srcs),
        edge_dst=torch.cat(dsts),
        graph_ids=torch.cat(gids),
        n_graphs=len(graphs),
    )


class NodeBatchNorm(torch.nn.Module):
    """Batch normalization over all nodes in the batch.

    Running statistics store the same biased variance used for
    normalization, so frozen running stats reproduce train-mode outputs.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = torch.nn.Parameter(torch.ones(dim, dtype=dtype))
        self.beta = torch.nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.register_buffer("running_mean", torch.zeros(dim, dtype=dtype))
        self.register_buffer("running_var", torch.ones(dim, dtype=dtype))

    def forward(self, x: torch.Tensor, training: bool) -> torch.Tensor:
        if training:
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean)
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * var)
        else:
            mean, var = self.running_mean, self.running_var
        return self.gamma * (x - mean) / torch.sqrt(var + self.eps) + self.beta


class EquationEncoder(torch.nn.Module):
    """The embedding model; see module docstring for the layer layout."""

    def __init__(self, bn_placement: str = "after_l1_l2", seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if bn_placement not in BN_PLACEMENTS:
            raise ValueError(f"bn_placement must be one of {BN_PLACEMENTS}")
        self.bn_placement = bn_placement
        rng = np.random.default_rng(seed)

        def weight(out_dim: int, in_dim: int) -> torch.nn.Parameter:
            bound = np.sqrt(1.0 / in_dim)
            init = rng.uniform(-bound, bound, size=(out_dim, in_dim))
            return torch.nn.Parameter(torch.as_tensor(init, dtype=dtype))

        def bias(dim: int) -> torch.nn.Parameter:
            return torch.nn.Parameter(torch.zeros(dim, dtype=dtype))

        self.W1 = weight(HIDDEN_DIM, FEATURE_DIM)
        self.b1 = bias(HIDDEN_DIM)
        self.alpha = torch.nn.Parameter(torch.tensor(1.0, dtype=dtype))
        self.W2 = weight(HIDDEN_DIM, HIDDEN_DIM)
        self.b2 = bias(HIDDEN_DIM)
        self.W3 = weight(HIDDEN_DIM, HIDDEN_DIM)
        self.b3 = bias(HIDDEN_DIM)
        self.W4 = weight(HIDDEN_DIM, HIDDEN_DIM)
        self.b4 = bias(HIDDEN_DIM)
        self.bn1 = NodeBatchNorm(HIDDEN_DIM, dtype=dtype)
        self.bn2 = NodeBatchNorm(HIDDEN_DIM, dtype=dtype)
        self.Wproj = weight(EMBED_DIM, HIDDEN_DIM)
        self.bproj = bias(EMBED_DIM)
        self.Wtag = weight(TAG_CLASSES, HIDDEN_DIM)
        self.btag = bias(TAG_CLASSES)
        self.Wattr = weight(ATTR_CLASSES, HIDDEN_DIM)
        self.battr = bias(ATTR_CLASSES)
        self.Wchar = weight(CHAR_CLASSES, HIDDEN_DIM)
        self.bchar = bias(CHAR_CLASSES)
        self.register_buffer("running_norm_mean", torch.tensor(1.0, dtype=dtype))
        self.register_buffer("running_norm_std", torch.tensor(0.0, dtype=dtype))
        self.norm_momentum = 0.1

    @property
    def dtype(self) -> torch.dtype:
        return self.W1.dtype

    def _conv(self, messages: torch.Tensor, batch: GraphBatch) -> torch.Tensor:
        """Sum per-neighbor messages over N(i) plus self, then ReLU."""
        out = messages.index_add(0, batch.edge_dst, messages[batch.edge_src])
        return torch.relu(out)

    def node_embeddings(self, batch: GraphBatch, training: bool) -> torch.Tensor:
        """Per-node features of the last convolution layer, shape (N, 512)."""
        if batch.features.shape[1] != FEATURE_DIM:
            raise DimensionMismatchError("node features must be 256-d")
        pos = _sinusoid_table(batch.positions, HIDDEN_DIM, self.dtype)
        h = self._conv(batch.features @ self.W1.T + self.alpha * pos + self.b1, batch)
        h = self.bn1(h, training)
        h = self._conv(h @ self.W2.T + self.b2, batch)
        if self.bn_placement == "after_l1_l2":
            h = self.bn2(h, training)
        h = self._conv(h @ self.W3.T + self.b3, batch)
        if self.bn_placement == "before_l2_l4":
            h = self.bn2(h, training)
        return self._conv(h @ self.W4.T + self.b4, batch)

    def forward(self, batch: GraphBatch, training: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        """(phi, pooled): node features (N, 512) and graph embeddings (G, 64)."""
        phi = self.node_embeddings(batch, training)
        counts = torch.zeros(batch.n_graphs, dtype=self.dtype).index_add(
            0, batch.graph_ids, torch.ones(batch.n_nodes, dtype=self.dtype)
        )
        sums = torch.zeros(batch.n_graphs, HIDDEN_DIM, dtype=self.dtype).index_add(
            0, batch.graph_ids, phi
        )
        pooled = (sums / counts.unsqueeze(1)) @ self.Wproj.T + self.bproj
        return phi, pooled

    def normalize_embeddings(self, pooled: torch.Tensor, training: bool) -> torch.Tensor:
        """Scale embeddings by the batch (or running) mean-plus-std of norms."""
        if training:
            if pooled.shape[0] < 2:
                raise DegenerateBatchError("norm statistics need batches of at least 2")
            norms = pooled.norm(dim=1)
            mu = norms.mean()
            sigma = norms.std(unbiased=False)
            scale = mu + sigma
            if float(scale.detach()) < 1e-12:
                raise DegenerateBatchError("embedding norms collapsed to zero")
            with torch.no_grad():
                self.running_norm_mean.mul_(1 - self.norm_momentum).add_(self.norm_momentum * mu)
                self.running_norm_std.mul_(1 - self.norm_momentum).add_(self.norm_momentum * sigma)
            return pooled / scale
        scale = self.running_norm_mean + self.running_norm_std
        if float(scale) < 1e-12:
            raise DegenerateBatchError("running norm statistics are degenerate")
        return pooled / scale

    def embed(self, batch: GraphBatch, training: bool = False) -> torch.Tensor:
        """Normalized graph embeddings, the model's retrieval output."""
        _, pooled = self.forward(batch, training)
        return self.normalize_embeddings(pooled, training)

    def head_logits(self, phi_rows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return (
            phi_rows @ self.Wtag.T + self.btag,
            phi_rows @ self.Wattr.T + self.battr,
            phi_rows @ self.Wchar.T + self.bchar,
        )

    def predict_masked(self, phi_row: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Softmax distributions over tag, attribute and character classes."""
        tag, attr, char = self.head_logits(phi_row)
        return (
            torch.softmax(tag, dim=-1),
            torch.softmax(attr, dim=-1),
            torch.softmax(char, dim=-1),
        )


def embed_graphs(model: EquationEncoder, graphs: list[ExpressionGraph],
                 chunk_size: int = 256) -> np.ndarray:
    """Eval-mode embeddings for a list of graphs, chunked; (len(graphs), 64).

    Eval mode uses running statistics, so chunking does not change results.
    """
    rows: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(graphs), chunk_size):
            batch = batch_graphs(graphs[start : start + chunk_size], dtype=model.dtype)
            rows.append(model.embed(batch, training=False).numpy())
    if not rows:
        return np.zeros((0, EMBED_DIM), dtype=np.float32)
    return np.concatenate(rows)


def gradients(loss: torch.Tensor, model: EquationEncoder) -> dict[str, torch.Tensor]:
    """Exact reverse-mode partial derivatives of every trainable parameter."""
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        n: (g if g is not None else torch.zeros_like(p))
        for n, p, g in zip(names, params, grads)
    }


def save_checkpoint(model: EquationEncoder, vocab_hash: str, path: str | Path,
                    extra: dict | None = None) -> None:
    state = model.state_dict()
    arrays = {name: state[name].detach().cpu().numpy() for name in sorted(state)}
    header = {
        "version": CHECKPOINT_VERSION,
        "vocab_hash": vocab_hash,
        "bn_placement": model.bn_placement,
        "dtype": str(model.dtype).removeprefix("torch."),
        "extra": extra or {},
    }
    write_container(path, header, arrays)


def load_checkpoint(path: str | Path, expected_vocab_hash: str | None = None
                    ) -> tuple[EquationEncoder, dict]:
    header, arrays = read_container(path)
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise VocabularyMismatchError(
            "checkpoint was trained against a different vocabulary"
        )
    dtype = getattr(torch, header["dtype"])
    model = EquationEncoder(bn_placement=header["bn_placement"], dtype=dtype)
    state = {name: torch.as_tensor(arr, dtype=dtype) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model, header
