"""Compound training loss: focal classification, supervised contrastive
alignment of the fine representations, and one-directional attention
distillation from the fine importance scores onto the coarse map.

The distillation target is detached before the KL term is formed, so its
gradient reaches only the coarse module; the fine side acts as a frozen
teacher within each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .selector import SparsePixel, flat_indices
from .tensor import (
    Tensor,
    add,
    clamp_min,
    concat,
    div,
    div_colvec,
    exp,
    gather,
    log,
    matmul,
    mul,
    neg,
    power,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    sub,
    transpose,
)

PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    gamma: float = 2.0
    alpha_per_class: list[float] | None = None   # None -> uniform 1.0
    lambda_contrast: float = 0.1
    lambda_distill: float = 0.02
    tau: float = 0.07
    emphasis: float = 2.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lambda_contrast < 0 or self.lambda_distill < 0:
            raise ValueError("loss weights must be >= 0")
        if self.alpha_per_class is not None and any(a <= 0 for a in self.alpha_per_class):
            raise ValueError("class weights must be > 0")

    def alpha_for(self, label: int) -> float:
        if self.alpha_per_class is None:
            return 1.0
        return float(self.alpha_per_class[label])


@dataclass
class BatchLossReport:
    focal: float
    contrastive: float
    distill: float
    total: float
    p_correct: list[float] = field(default_factory=list)
    total_tensor: Tensor | None = None   # live tape tensor for backward


def _softmax_vec(v: Tensor) -> Tensor:
    shifted = sub(v, reduce_max(v))
    e = exp(shifted)
    return div(e, reduce_sum(e))


def _focal_terms(logits: Tensor, labels, cfg: LossConfig):
    """Per-sample focal terms and correct-class probabilities."""
    b, c = logits.data.shape
    terms = []
    probs = []
    for i in range(b):
        label = int(labels[i])
        if not 0 <= label < c:
            raise ValueError(f"label {label} outside [0, {c})")
        row = reshape(gather(logits, [i]), (c,))
        p = _softmax_vec(row)
        p_y = clamp_min(gather(p, [label]), PROB_FLOOR)
        probs.append(float(p_y.data[0]))
        modulator = power(sub(1.0, p_y), cfg.gamma)
        term = mul(cfg.alpha_for(label), mul(modulator, neg(log(p_y))))
        terms.append(term)
    return terms, probs


def focal_loss(logits: Tensor, labels, cfg: LossConfig) -> Tensor:
    """Batch mean of alpha_y * (1 - p_y)^gamma * (-log p_y) over softmax p."""
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be B×C, got shape {logits.data.shape}")
    terms, _ = _focal_terms(logits, labels, cfg)
    return reduce_mean(concat(terms, axis=0))


def contrastive_loss(embeddings: Tensor, labels, cfg: LossConfig) -> Tensor:
    """Supervised contrastive loss on L2-normalized rows at temperature tau.

    Each anchor's positive is the highest-index same-class sample other
    than itself; the denominator runs over all other samples. Anchors
    without a positive are skipped; no valid anchor gives exactly 0.
    """
    if embeddings.data.ndim != 2 or embeddings.data.shape[0] < 2:
        raise ValueError(
            f"embeddings must be B×D with B >= 2, got shape {embeddings.data.shape}"
        )
    b = embeddings.data.shape[0]
    labels = [int(l) for l in labels]

    sq = reduce_sum(mul(embeddings, embeddings), axis=1)
    norms = power(clamp_min(sq, PROB_FLOOR ** 2), 0.5)
    z = div_colvec(embeddings, norms)
    sims = matmul(z, transpose(z))
    scores = exp(mul(sims, 1.0 / cfg.tau))

    terms = []
    for i in range(b):
        positives = [j for j in range(b) if j != i and labels[j] == labels[i]]
        if not positives:
            continue
        pos = max(positives)
        row = reshape(gather(scores, [i]), (b,))
        denom = sub(reduce_sum(row), gather(row, [i]))
        numer = gather(row, [pos])
        terms.append(neg(log(div(numer, denom))))
    if not terms:
        return Tensor(0.0)
    return reduce_mean(concat(terms, axis=0))


def distill_target(pixel_importance: Tensor, k: int, emphasis: float) -> np.ndarray:
    """Detached target distribution over the k selected pixels.

    The CLS entry is dropped, the remaining importances are sharpened by
    the emphasis exponent and renormalized, then floored at PROB_FLOOR.
    """
    imp = np.asarray(pixel_importance.data[:k], dtype=np.float64)
    t = imp ** float(emphasis)
    mass = t.sum()
    t = np.full(k, 1.0 / k) if mass <= 0 else t / mass
    return np.maximum(t, PROB_FLOOR)


def distill_loss(coarse_map: Tensor, pixel_importance: Tensor,
                 selected: list[SparsePixel], cfg: LossConfig,
                 target: np.ndarray | None = None) -> Tensor:
    """KL(P_coarse || P_fine) restricted to the selected pixel support.

    P_coarse is the softmax of the coarse-map values at the selected
    positions and carries gradient; P_fine is the detached, sharpened
    importance distribution (or an explicit `target`), so the divergence
    trains only the coarse side.
    """
    k = len(selected)
    if k == 0:
        raise ValueError("distill_loss needs at least one selected pixel")
    width = coarse_map.data.shape[1]
    idx = flat_indices(selected, width)
    vals = gather(reshape(coarse_map, (-1,)), idx)
    p_coarse = _softmax_vec(vals)
    if target is None:
        target = distill_target(pixel_importance, k, cfg.emphasis)
    log_target = Tensor(np.log(target))
    return reduce_sum(mul(p_coarse, sub(log(p_coarse), log_target)))


def total_loss(logits: Tensor, labels, embeddings: Tensor | None,
               distill_inputs, cfg: LossConfig) -> BatchLossReport:
    """Weighted sum of the three components over one batch.

    distill_inputs is a sequence of (coarse_map, pixel_importance,
    selected_pixels) triples, one per sample; their losses are averaged.
    """
    terms, probs = _focal_terms(logits, labels, cfg)
    focal = reduce_mean(concat(terms, axis=0))

    if embeddings is not None and embeddings.data.shape[0] >= 2:
        contr = contrastive_loss(embeddings, labels, cfg)
    else:
        contr = Tensor(0.0)

    d_terms = [reshape(distill_loss(cm, imp, sel, cfg), (1,))
               for cm, imp, sel in distill_inputs]
    dist = reduce_mean(concat(d_terms, axis=0)) if d_terms else Tensor(0.0)

    # left-associated so the float identity total == focal + lc*c + ld*d holds bitwise
    total = add(add(focal, mul(contr, cfg.lambda_contrast)),
                mul(dist, cfg.lambda_distill))
    return BatchLossReport(
        focal=focal.item(),
        contrastive=contr.item(),
        distill=dist.item(),
        total=total.item(),
        p_correct=probs,
        total_tensor=total,
    )


def class_weights(labels, class_count: int) -> list[float]:
    """Inverse-frequency weights normalized to mean 1; absent classes get 1."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=class_count)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    present = inv > 0
    if not present.any():
        return [1.0] * class_count
    inv[present] = inv[present] / inv[present].mean()
    inv[~present] = 1.0
    return [float(w) for w in inv]
