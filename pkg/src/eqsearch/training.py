"""Training loop: contextual-similarity loss plus the masking task, Adam
with per-step linear learning-rate decay, paper-level hold-out evaluation,
and contrastive finetuning on relation pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import Corpus, RelationPair, subset_by_papers
from .graph import ExpressionGraph, Vocabulary, augment_identifiers, encode, mask_nodes
from .losses import histogram_loss, infonce_loss, masking_loss_from_logits, triplet_loss
from .model import EquationEncoder, batch_graphs, embed_graphs, save_checkpoint
from .sampling import TripletSample, TripletSampler


@dataclass
class TrainConfig:
    """Training defaults; unchanged values reproduce the reference setup."""

    epochs: int = 20
    batch_size: int = 128
    lr0: float = 1e-4
    n_bins: int = 64
    margin: float = 1.0
    mask_rate: float = 0.15
    poisson_mean: float = 32.0
    loss: str = "histogram"  # histogram | triplet
    tau: float = 0.01
    seed: int = 0
    augmentation: bool = True
    masking: bool = True
    bn_placement: str = "after_l1_l2"
    mask_stream: str = "anchors"  # anchors | independent
    similarity_weight: float = 1.0
    masking_weight: float = 1.0
    triplets_per_epoch: int | None = None  # defaults to the corpus size
    holdout_fraction: float = 0.0
    eval_triplets: int = 1000

    def __post_init__(self):
        if self.loss not in ("histogram", "triplet"):
            raise ValueError(f"unknown similarity loss {self.loss!r}")
        if self.mask_stream not in ("anchors", "independent"):
            raise ValueError(f"unknown mask stream {self.mask_stream!r}")
        for name in ("epochs", "batch_size", "lr0", "n_bins", "margin",
                     "mask_rate", "poisson_mean", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def linear_decay_lr(lr0: float, step: int, total_steps: int) -> float:
    """Learning rate at a 0-based step, decaying linearly to 0."""
    return lr0 * (1.0 - step / total_steps)


class GraphCache:
    """Encode each equation's MathML once; augmentation works on copies."""

    def __init__(self, corpus: Corpus, vocab: Vocabulary):
        self.corpus = corpus
        self.vocab = vocab
        self._cache: dict[str, ExpressionGraph] = {}

    def base(self, eq_id: str) -> ExpressionGraph:
        if eq_id not in self._cache:
            self._cache[eq_id] = encode(self.corpus.equations[eq_id].mathml, self.vocab)
        return self._cache[eq_id]


@dataclass
class EpochMetrics:
    epoch: int
    similarity_loss: float
    masking_loss: float
    total_loss: float
    lr_last: float
    holdout_ranking: float | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class TrainResult:
    model: EquationEncoder
    history: list[EpochMetrics]
    train_papers: list[str]
    holdout_papers: list[str]


def split_papers(corpus: Corpus, holdout_fraction: float, rng: np.random.Generator
                 ) -> tuple[list[str], list[str]]:
    """Paper-level split; dependence lives within papers, so papers move as
    units."""
    ids = [p.paper_id for p in corpus.papers]
    order = rng.permutation(len(ids))
    n_holdout = int(round(holdout_fraction * len(ids)))
    holdout = [ids[i] for i in order[:n_holdout]]
    train = [ids[i] for i in order[n_holdout:]]
    return train, holdout


def ranking_fraction(triplets: list[TripletSample], vectors: dict[str, np.ndarray]) -> float:
    """Fraction of triplets whose positive pair wins strictly; ties lose."""
    wins = 0
    for t in triplets:
        a, p, n = vectors[t.anchor], vectors[t.positive], vectors[t.negative]
        if float(a @ p) > float(a @ n):
            wins += 1
    return wins / len(triplets)


def embed_ids(model: EquationEncoder, cache: GraphCache, eq_ids: list[str]) -> dict[str, np.ndarray]:
    unique = sorted(set(eq_ids))
    matrix = embed_graphs(model, [cache.base(eq) for eq in unique])
    return {eq: matrix[i] for i, eq in enumerate(unique)}


def holdout_ranking_score(model: EquationEncoder, cache: GraphCache,
                          triplets: list[TripletSample]) -> float:
    ids = [x for t in triplets for x in (t.anchor, t.positive, t.negative)]
    return ranking_fraction(triplets, embed_ids(model, cache, ids))


def _check_finite(value: torch.Tensor, epoch: int, step: int) -> None:
    if not torch.isfinite(value):
        raise RuntimeError(
            f"non-finite loss {float(value)!r} at epoch {epoch}, step {step}; "
            "inspect the learning rate and input graphs"
        )


def _masked_forward_loss(model: EquationEncoder, graphs: list[ExpressionGraph],
                         rate: float, rng: np.random.Generator) -> torch.Tensor:
    masked = [mask_nodes(g, rate=rate, seed=int(rng.integers(2**63))) for g in graphs]
    batch = batch_graphs([m.graph for m in masked], dtype=model.dtype)
    phi = model.node_embeddings(batch, training=True)
    offsets = np.cumsum([0] + [m.graph.n_nodes for m in masked[:-1]])
    rows = np.concatenate([m.mask_indices + off for m, off in zip(masked, offsets)])
    targets = torch.as_tensor(np.concatenate([m.targets for m in masked]))
    tag, attr, char = model.head_logits(phi[torch.as_tensor(rows)])
    return masking_loss_from_logits(tag, attr, char, targets)


def train(corpus: Corpus, vocab: Vocabulary, config: TrainConfig,
          metrics_path: str | Path | None = None) -> TrainResult:
    """Train an encoder on weak-label triplets plus the masking task.

    Each step samples a batch of triplets, embeds all three roles in one
    pass (with per-equation identifier augmentation when enabled), applies
    the configured similarity loss to anchor-positive and anchor-negative
    inner products, adds the masking loss on a second pass over the anchor
    graphs, and takes one Adam step at the linearly decayed learning rate.
    """
    master = np.random.default_rng(config.seed)
    model_seed, sampler_seed, augment_seed, mask_seed, split_seed, eval_seed = (
        int(master.integers(2**31)) for _ in range(6)
    )
    model = EquationEncoder(bn_placement=config.bn_placement, seed=model_seed)

    train_papers, holdout_papers = split_papers(
        corpus, config.holdout_fraction, np.random.default_rng(split_seed)
    )
    train_corpus = subset_by_papers(corpus, train_papers) if holdout_papers else corpus
    cache = GraphCache(corpus, vocab)

    sampler = TripletSampler(train_corpus, np.random.default_rng(sampler_seed))
    augment_rng = np.random.default_rng(augment_seed)
    mask_rng = np.random.default_rng(mask_seed)

    eval_triplets: list[TripletSample] = []
    if holdout_papers:
        eval_sampler = TripletSampler(
            subset_by_papers(corpus, holdout_papers), np.random.default_rng(eval_seed)
        )
        eval_triplets = [eval_sampler.sample() for _ in range(config.eval_triplets)]

    triplets_per_epoch = config.triplets_per_epoch or train_corpus.n_equations
    steps_per_epoch = max(1, int(np.ceil(triplets_per_epoch / config.batch_size)))
    total_steps = config.epochs * steps_per_epoch

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr0,
                                 betas=(0.9, 0.999), eps=1e-8)
    history: list[EpochMetrics] = []
    metrics_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    step = 0
    try:
        for epoch in range(config.epochs):
            sim_losses, mask_losses, total_losses = [], [], []
            lr = config.lr0
            for _ in range(steps_per_epoch):
                lr = linear_decay_lr(config.lr0, step, total_steps)
                for group in optimizer.param_groups:
                    group["lr"] = lr

                triplets = [sampler.sample() for _ in range(config.batch_size)]
                roles = ([t.anchor for t in triplets] + [t.positive for t in triplets]
                         + [t.negative for t in triplets])
                graphs = [cache.base(eq) for eq in roles]
                if config.augmentation:
                    graphs = [
                        augment_identifiers(g, int(augment_rng.integers(2**63)),
                                            mean_flips=config.poisson_mean)
                        for g in graphs
                    ]
                batch = batch_graphs(graphs, dtype=model.dtype)
                _, pooled = model(batch, training=True)
                normed = model.normalize_embeddings(pooled, training=True)
                m = config.batch_size
                anchors, positives, negatives = normed[:m], normed[m : 2 * m], normed[2 * m :]
                s_pos = (anchors * positives).sum(dim=1)
                s_neg = (anchors * negatives).sum(dim=1)
                if config.loss == "histogram":
                    sim_loss = histogram_loss(s_pos, s_neg, config.n_bins)
                else:
                    sim_loss = triplet_loss(s_pos, s_neg, config.margin)

                total = config.similarity_weight * sim_loss
                mask_loss_value = 0.0
                if config.masking:
                    if config.mask_stream == "anchors":
                        to_mask = graphs[:m]
                    else:
                        pool = sorted(train_corpus.equations)
                        picks = mask_rng.choice(len(pool), size=m)
                        to_mask = [cache.base(pool[i]) for i in picks]
                    mask_loss = _masked_forward_loss(model, to_mask, config.mask_rate, mask_rng)
                    total = total + config.masking_weight * mask_loss
                    mask_loss_value = float(mask_loss.detach())

                _check_finite(total, epoch, step)
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                step += 1
                sim_losses.append(float(sim_loss.detach()))
                mask_losses.append(mask_loss_value)
                total_losses.append(float(total.detach()))

            metrics = EpochMetrics(
                epoch=epoch,
                similarity_loss=float(np.mean(sim_losses)),
                masking_loss=float(np.mean(mask_losses)),
                total_loss=float(np.mean(total_losses)),
                lr_last=lr,
                holdout_ranking=(
                    holdout_ranking_score(model, cache, eval_triplets)
                    if eval_triplets else None
                ),
            )
            history.append(metrics)
            if metrics_file:
                metrics_file.write(metrics.to_json() + "\n")
                metrics_file.flush()
    finally:
        if metrics_file:
            metrics_file.close()
    return TrainResult(model=model, history=history,
                       train_papers=train_papers, holdout_papers=holdout_papers)


@dataclass
class FinetuneConfig:
    epochs: int = 5
    batch_size: int = 1024  # capped at the dataset size
    lr0: float = 1e-4
    tau: float = 0.01
    seed: int = 0
    exclude_diagonal: bool = False


def finetune_contrastive(pairs: list[RelationPair], model: EquationEncoder,
                         vocab: Vocabulary, config: FinetuneConfig) -> EquationEncoder:
    """Contrastive finetuning: identify each side's partner within the batch.

    Embeds LHS and RHS graphs, unit-normalizes, and minimizes InfoNCE at the
    configured temperature. Trailing batches of fewer than two pairs are
    dropped.
    """
    if len(pairs) < 2:
        raise ValueError("contrastive finetuning needs at least two pairs")
    lhs_graphs = [encode(p.lhs_mathml, vocab) for p in pairs]
    rhs_graphs = [encode(p.rhs_mathml, vocab) for p in pairs]
    rng = np.random.default_rng(config.seed)
    m = min(config.batch_size, len(pairs))
    steps_per_epoch = max(1, len(pairs) // m)
    total_steps = config.epochs * steps_per_epoch
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr0,
                                 betas=(0.9, 0.999), eps=1e-8)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        for chunk_start in range(0, steps_per_epoch * m, m):
            idx = order[chunk_start : chunk_start + m]
            if len(idx) < 2:
                continue
            lr = linear_decay_lr(config.lr0, step, total_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = batch_graphs(
                [lhs_graphs[i] for i in idx] + [rhs_graphs[i] for i in idx],
                dtype=model.dtype,
            )
            _, pooled = model(batch, training=True)
            unit = torch.nn.functional.normalize(pooled, dim=1)
            loss = infonce_loss(unit[: len(idx)], unit[len(idx) :], tau=config.tau,
                                exclude_diagonal=config.exclude_diagonal)
            _check_finite(loss, epoch, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
    return model


def masked_prediction_accuracy(model: EquationEncoder, graphs: list[ExpressionGraph],
                               rate: float = 0.15, seed: int = 0) -> dict[str, float]:
    """Eval-mode accuracy of the three masking heads over masked nodes."""
    rng = np.random.default_rng(seed)
    masked = [mask_nodes(g, rate=rate, seed=int(rng.integers(2**63))) for g in graphs]
    batch = batch_graphs([m.graph for m in masked], dtype=model.dtype)
    with torch.no_grad():
        phi = model.node_embeddings(batch, training=False)
        offsets = np.cumsum([0] + [m.graph.n_nodes for m in masked[:-1]])
        rows = np.concatenate([m.mask_indices + off for m, off in zip(masked, offsets)])
        targets = np.concatenate([m.targets for m in masked])
        tag, attr, char = model.head_logits(phi[torch.as_tensor(rows)])
        return {
            "tag": float((tag.argmax(dim=1).numpy() == targets[:, 0]).mean()),
            "attr": float((attr.argmax(dim=1).numpy() == targets[:, 1]).mean()),
            "char": float((char.argmax(dim=1).numpy() == targets[:, 2]).mean()),
        }


def train_to_checkpoint(corpus: Corpus, vocab: Vocabulary, config: TrainConfig,
                        out_path: str | Path,
                        metrics_path: str | Path | None = None) -> TrainResult:
    result = train(corpus, vocab, config, metrics_path)
    save_checkpoint(result.model, vocab.content_hash(), out_path,
                    extra={"epochs": config.epochs, "loss": config.loss})
    return result
