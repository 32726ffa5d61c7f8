"""Training objectives: triplet margin loss, histogram loss with a
triangular binning kernel, the three-head masking loss, and InfoNCE for
contrastive finetuning. All functions are torch-differentiable.
"""

from __future__ import annotations

import torch


class EmptyBatchError(ValueError):
    pass


def triplet_loss(s_ap: torch.Tensor, s_an: torch.Tensor, margin: float = 1.0) -> torch.Tensor:
    """max(0, margin - s_ap + s_an), averaged when given batched inputs."""
    return torch.clamp(margin - s_ap + s_an, min=0.0).mean()


def bin_centers(n_bins: int, dtype=torch.float64) -> torch.Tensor:
    """Boundaries t_1 = -1, ..., t_R = 1 of the R-1 equally sized bins."""
    return torch.linspace(-1.0, 1.0, n_bins, dtype=dtype)


def triangular_weight(s: float, r: int, n_bins: int) -> float:
    """Weight of similarity s in bin r (1-based), a unit hat around t_r.

    The hats form a partition of unity on [-1, 1]; boundary bins keep only
    their inward-facing slope.
    """
    if not 1 <= r <= n_bins:
        raise ValueError(f"bin index {r} outside 1..{n_bins}")
    width = 2.0 / (n_bins - 1)
    t_r = -1.0 + (r - 1) * width
    return max(0.0, 1.0 - abs(s - t_r) / width)


def soft_histogram(sims: torch.Tensor, n_bins: int) -> torch.Tensor:
    """Per-bin masses of the triangular kernel, shape (n_bins,).

    Similarities are clamped to [-1, 1] before binning; soft normalization
    only keeps most embedding norms below 1, so products can leave the range.
    """
    width = 2.0 / (n_bins - 1)
    centers = bin_centers(n_bins, dtype=sims.dtype).to(sims.device)
    clamped = torch.clamp(sims, -1.0, 1.0)
    weights = torch.clamp(1.0 - (clamped.unsqueeze(1) - centers).abs() / width, min=0.0)
    return weights.sum(dim=0)


def histogram_loss(
    s_pos: torch.Tensor,
    s_neg: torch.Tensor,
    n_bins: int = 64,
    per_histogram_normalization: bool = False,
) -> torch.Tensor:
    """Mass of negative-pair similarity lying above positive-pair similarity.

    Computes (1/m^2) * sum_r sum_{r'<=r} H_neg[r] * H_pos[r'] over soft
    histograms of the two similarity vectors. With equally sized batches the
    per-histogram normalization variant is identical; it only differs when
    positive and negative counts diverge.
    """
    if s_pos.numel() == 0 or s_neg.numel() == 0:
        raise EmptyBatchError("histogram loss needs non-empty similarity batches")
    if not per_histogram_normalization and s_pos.numel() != s_neg.numel():
        raise ValueError("positive and negative batches must have equal size")
    h_pos = soft_histogram(s_pos, n_bins)
    h_neg = soft_histogram(s_neg, n_bins)
    overlap = torch.dot(h_neg, torch.cumsum(h_pos, dim=0))
    return overlap / (s_pos.numel() * s_neg.numel())


def masking_loss(
    predictions: list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]],
    targets: list[tuple[int, int, int]],
) -> torch.Tensor:
    """Mean over masked nodes of the averaged three-head cross-entropy.

    predictions holds the (tag, attribute, character) probability vectors of
    each masked node; targets the true class triples.
    """
    if len(predictions) != len(targets):
        raise ValueError("predictions and targets differ in length")
    if not predictions:
        raise EmptyBatchError("masking loss needs at least one masked node")
    eps = torch.finfo(predictions[0][0].dtype).tiny
    per_node = []
    for (p_tag, p_attr, p_char), (t_tag, t_attr, t_char) in zip(predictions, targets):
        ce = -(
            torch.log(p_tag[t_tag].clamp(min=eps))
            + torch.log(p_attr[t_attr].clamp(min=eps))
            + torch.log(p_char[t_char].clamp(min=eps))
        )
        per_node.append(ce / 3.0)
    return torch.stack(per_node).mean()


def masking_loss_from_logits(
    tag_logits: torch.Tensor,
    attr_logits: torch.Tensor,
    char_logits: torch.Tensor,
    targets: torch.Tensor,
) -> torch.Tensor:
    """Batched masking loss on raw head outputs; targets is (m, 3) int64."""
    if targets.shape[0] == 0:
        raise EmptyBatchError("masking loss needs at least one masked node")
    ce = torch.nn.functional.cross_entropy
    return (
        ce(tag_logits, targets[:, 0])
        + ce(attr_logits, targets[:, 1])
        + ce(char_logits, targets[:, 2])
    ) / 3.0


def infonce_loss(
    emb_lhs: torch.Tensor,
    emb_rhs: torch.Tensor,
    tau: float = 0.01,
    exclude_diagonal: bool = False,
) -> torch.Tensor:
    """Negative log-likelihood of picking each row's true partner within the
    batch, from pairwise similarities at temperature tau.

    Rows are expected to be unit-normalized. exclude_diagonal drops the
    matching pair from the denominator.
    """
    m = emb_lhs.shape[0]
    if m < 2:
        raise ValueError("contrastive batches need at least two pairs")
    logits = emb_lhs @ emb_rhs.T / tau
    positives = logits.diagonal()
    if exclude_diagonal:
        masked = logits.masked_fill(
            torch.eye(m, dtype=torch.bool, device=logits.device), float("-inf")
        )
        denom = torch.logsumexp(masked, dim=1)
    else:
        denom = torch.logsumexp(logits, dim=1)
    return (denom - positives).mean()
