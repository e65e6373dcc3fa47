"""Cross-image foreground/background contrastive objective.

Each image contributes a foreground and a background representation vector.
Foreground-background pairs (within and across images) are negatives and are
pushed apart; cross-image foreground-foreground and background-background
pairs are positives and are pulled together, down-weighted by a similarity
rank so that dissimilar positives contribute less.

All loss functions are differentiable with respect to the representation
vectors (and hence the activation maps and features upstream).  Rank weights
are computed from detached similarities and act as constants during
backpropagation.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

# Similarities are clamped to [CLAMP_EPS, 1 - CLAMP_EPS] inside logs so the
# loss stays finite for degenerate inputs (e.g. all-zero representations).
CLAMP_EPS = 1e-7
# Norm stabilizer for cosine similarity; a zero vector gets similarity 0.
NORM_EPS = 1e-8


@dataclass
class SimilarityMatrix:
    """n x n cosine similarities with their role: "neg", "fg-fg" or "bg-bg"."""

    values: np.ndarray
    kind: str


@dataclass
class RankWeightSet:
    """Per-pair rank weights exp(-alpha * rank) over unordered pairs {i, j}."""

    weights: dict  # (i, j) with i < j -> weight in (0, 1]
    alpha: float

    def as_matrix(self, n: int) -> np.ndarray:
        """Symmetric weight matrix; diagonal entries are zero (never summed)."""
        w = np.zeros((n, n))
        for (i, j), value in self.weights.items():
            w[i, j] = value
            w[j, i] = value
        return w


@dataclass
class LossBreakdown:
    """Components of the total objective. Tensors so backward() works on l_total."""

    l_neg: torch.Tensor
    l_pos_f: torch.Tensor
    l_pos_b: torch.Tensor
    l_pos: torch.Tensor
    l_total: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "l_neg": float(self.l_neg.detach()),
            "l_pos_f": float(self.l_pos_f.detach()),
            "l_pos_b": float(self.l_pos_b.detach()),
            "l_pos": float(self.l_pos.detach()),
            "l_total": float(self.l_total.detach()),
        }


def cosine_sim(a, b) -> torch.Tensor:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Norms are stabilized with max(||.||, NORM_EPS), so a zero vector yields 0.
    """
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    na = torch.linalg.vector_norm(a).clamp_min(NORM_EPS)
    nb = torch.linalg.vector_norm(b).clamp_min(NORM_EPS)
    return torch.clamp((a * b).sum() / (na * nb), -1.0, 1.0)


def pairwise_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """All-pairs cosine similarities between rows of a (n x C) and b (m x C)."""
    a_n = a / torch.linalg.vector_norm(a, dim=1, keepdim=True).clamp_min(NORM_EPS)
    b_n = b / torch.linalg.vector_norm(b, dim=1, keepdim=True).clamp_min(NORM_EPS)
    return torch.clamp(a_n @ b_n.T, -1.0, 1.0)


def negative_loss(v_f: torch.Tensor, v_b: torch.Tensor) -> torch.Tensor:
    """Push apart the n^2 foreground-background pairs.

    -(1/n^2) * sum_{i,j} log(1 - s_ij) over all ordered pairs, including the
    within-image ones (i == j).
    """
    v_f = torch.as_tensor(v_f)
    v_b = torch.as_tensor(v_b)
    if v_f.ndim != 2 or v_f.shape != v_b.shape:
        raise ValueError(f"expected matching n x C inputs, got {tuple(v_f.shape)} and {tuple(v_b.shape)}")
    sims = pairwise_cosine(v_f, v_b).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    return -torch.log(1.0 - sims).mean()


def _pair_ranks(pair_sims: torch.Tensor) -> torch.Tensor:
    """0-based competition ranks by descending similarity (ties share the better rank)."""
    # rank[k] = number of pairs strictly more similar than pair k
    return (pair_sims.unsqueeze(1) > pair_sims.unsqueeze(0)).sum(dim=0)


def rank_weights(sims, alpha: float) -> RankWeightSet:
    """Rank weights for the unordered positive pairs of a similarity matrix.

    The most similar pair ranks 0 and gets weight exactly 1; each further
    rank multiplies the weight by exp(-alpha).  alpha = 0 makes every weight 1.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    values = sims.values if isinstance(sims, SimilarityMatrix) else sims
    if isinstance(sims, SimilarityMatrix) and sims.kind not in ("fg-fg", "bg-bg"):
        raise ValueError(f"rank weighting applies to positive pairs, not kind={sims.kind!r}")
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if values.ndim != 2 or values.shape[1] != n:
        raise ValueError("similarity matrix must be square")
    if n < 2:
        raise ValueError("rank weighting needs at least 2 samples (1 pair)")
    idx_i, idx_j = np.triu_indices(n, k=1)
    pair_sims = values[idx_i, idx_j]
    # rank[k] = number of pairs strictly more similar; libm exp keeps the
    # weights bit-identical to a scalar reference
    ranks = (pair_sims[:, None] > pair_sims[None, :]).sum(axis=0)
    return RankWeightSet(
        weights={
            (int(i), int(j)): math.exp(-alpha * int(r))
            for i, j, r in zip(idx_i, idx_j, ranks)
        },
        alpha=float(alpha),
    )


def _rank_weight_matrix(sims: torch.Tensor, alpha: float) -> torch.Tensor:
    """Symmetric n x n weight matrix from detached similarities (no gradient)."""
    n = sims.shape[0]
    iu, ju = torch.triu_indices(n, n, offset=1)
    pair_sims = sims.detach()[iu, ju]
    ranks = _pair_ranks(pair_sims).to(sims.dtype)
    w_pairs = torch.exp(-alpha * ranks)
    w = sims.new_zeros((n, n))
    w[iu, ju] = w_pairs
    w[ju, iu] = w_pairs
    return w


def positive_loss(reps: torch.Tensor, alpha: float) -> torch.Tensor:
    """Pull together the cross-image same-role pairs, rank-weighted.

    -(1/(n(n-1))) * sum_{i != j} w_ij * log(s_ij), where w comes from the
    similarity rank over unordered pairs and both ordered occurrences of a
    pair share its weight.
    """
    reps = torch.as_tensor(reps)
    n = reps.shape[0]
    if n < 2:
        raise ValueError("positive loss needs at least 2 samples")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    sims = pairwise_cosine(reps, reps)
    w = _rank_weight_matrix(sims, alpha)
    log_sims = torch.log(sims.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS))
    off_diag = ~torch.eye(n, dtype=torch.bool, device=reps.device)
    return -(w * log_sims)[off_diag].sum() / (n * (n - 1))


def total_loss(v_f: torch.Tensor, v_b: torch.Tensor, alpha: float) -> LossBreakdown:
    """Full objective: negative term plus the two rank-weighted positive terms."""
    l_neg = negative_loss(v_f, v_b)
    l_pos_f = positive_loss(v_f, alpha)
    l_pos_b = positive_loss(v_b, alpha)
    l_pos = l_pos_f + l_pos_b
    return LossBreakdown(
        l_neg=l_neg,
        l_pos_f=l_pos_f,
        l_pos_b=l_pos_b,
        l_pos=l_pos,
        l_total=l_pos + l_neg,
    )
