"""Shared joint embedding of (x, y, v) pixel triplets, plus the CLS token.

Each pixel is one token; a two-layer MLP maps its coordinate/intensity
triplet into R^D so position and intensity interact nonlinearly instead of
being projected separately and summed. The learnable CLS token is appended
as the last row.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add_rowvec, concat, matmul, relu, reshape
from .selector import SparsePixel


class Embedder:
    """3 -> hidden -> dim MLP with ReLU, shared across pixels; CLS token row."""

    def __init__(self, rng: np.random.Generator, dim: int = 4, hidden: int = 16):
        self.dim = dim
        self.hidden = hidden
        lim1 = (1.0 / 3) ** 0.5
        lim2 = (1.0 / hidden) ** 0.5
        self.w1 = Tensor(rng.uniform(-lim1, lim1, (3, hidden)))
        self.b1 = Tensor(np.zeros(hidden))
        self.w2 = Tensor(rng.uniform(-lim2, lim2, (hidden, dim)))
        self.b2 = Tensor(np.zeros(dim))
        # a zero CLS token would zero the CLS query row and with it every
        # fine-path gradient at init, so it starts at weight scale instead
        lim_cls = (1.0 / dim) ** 0.5
        self.cls_token = Tensor(rng.uniform(-lim_cls, lim_cls, dim))

    def params(self):
        return [
            ("w1", self.w1), ("b1", self.b1),
            ("w2", self.w2), ("b2", self.b2),
            ("cls_token", self.cls_token),
        ]


def embed_pixels(emb: Embedder, pixels: list[SparsePixel]) -> Tensor:
    """Embed k pixels into a (k+1)×D token matrix; row k is the CLS token.

    Pixel rows keep the selection order. The triplets themselves are
    constants; gradient reaches only the MLP weights and the CLS token.
    """
    if not pixels:
        raise ValueError("embed_pixels needs at least one pixel")
    triplets = Tensor(np.array([[p.x, p.y, p.v] for p in pixels]))
    h = relu(add_rowvec(matmul(triplets, emb.w1), emb.b1))
    rows = add_rowvec(matmul(h, emb.w2), emb.b2)
    cls_row = reshape(emb.cls_token, (1, emb.dim))
    return concat([rows, cls_row], axis=0)
