"""Multi-head linear attention over pixel tokens with ReLU-normalized keys.

Keys pass through ReLU plus a small epsilon and are normalized per feature
column over the tokens, so every attention column is a distribution over
the k+1 tokens. Context is accumulated as A^T V and queried per token,
which keeps the cost linear in the token count. The CLS row of the head
outputs, averaged over heads, is the global representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    concat,
    div_rowvec,
    gather,
    matmul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    transpose,
)


@dataclass
class FineOutput:
    z_fine: Tensor                 # (D,) mean CLS output over heads
    head_attn: list[Tensor]        # per head, (k+1)×d_h column-stochastic
    pixel_importance: Tensor       # (k+1,) attention each token gets in the CLS readout


class FineAttention:
    """Shared value projection; per-head query/key projections of width D/H."""

    def __init__(self, rng: np.random.Generator, dim: int = 4, heads: int = 2,
                 epsilon: float = 1e-6):
        if dim % heads != 0:
            raise ValueError(f"heads ({heads}) must divide dim ({dim})")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.epsilon = epsilon
        lim = (1.0 / dim) ** 0.5
        self.w_v = Tensor(rng.uniform(-lim, lim, (dim, dim)))
        self.w_q = [Tensor(rng.uniform(-lim, lim, (dim, self.head_dim)))
                    for _ in range(heads)]
        self.w_k = [Tensor(rng.uniform(-lim, lim, (dim, self.head_dim)))
                    for _ in range(heads)]

    def params(self):
        out = [("w_v", self.w_v)]
        for h in range(self.heads):
            out.append((f"w_q{h}", self.w_q[h]))
            out.append((f"w_k{h}", self.w_k[h]))
        return out


def fine_forward(fa: FineAttention, tokens: Tensor) -> FineOutput:
    """Attend over a (k+1)×D token matrix whose last row is the CLS token."""
    if tokens.data.ndim != 2 or tokens.data.shape[1] != fa.dim:
        raise DimensionError(
            f"token matrix {tokens.data.shape} must be (k+1)×{fa.dim}"
        )
    n_tokens = tokens.data.shape[0]
    if n_tokens < 2:
        raise ValueError("need at least one pixel token besides CLS")
    cls_row = n_tokens - 1

    values = matmul(tokens, fa.w_v)
    cls_outs = []
    attn = []
    importance_rows = []
    for h in range(fa.heads):
        q = matmul(tokens, fa.w_q[h])
        k = matmul(tokens, fa.w_k[h])
        k_pos = add(relu(k), fa.epsilon)
        col_mass = reduce_sum(k_pos, axis=0)
        a = div_rowvec(k_pos, col_mass)                  # columns sum to 1
        context = matmul(transpose(a), values)           # d_h × D
        out = matmul(q, context)                         # (k+1) × D
        cls_outs.append(gather(out, [cls_row]))
        attn.append(a)
        # token j's weight in the CLS readout is sum_c q_cls[c] * a[j, c];
        # its magnitude is the attention the classifier pays to the token
        flow = matmul(a, transpose(gather(q, [cls_row])))   # (k+1) × 1
        magnitude = add(relu(flow), relu(neg(flow)))
        importance_rows.append(reshape(magnitude, (1, n_tokens)))

    z_fine = reshape(reduce_mean(concat(cls_outs, axis=0), axis=0), (fa.dim,))
    importance = reshape(reduce_mean(concat(importance_rows, axis=0), axis=0),
                         (n_tokens,))
    return FineOutput(z_fine=z_fine, head_attn=attn, pixel_importance=importance)
