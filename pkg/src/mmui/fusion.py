"""Cross-attention between image features and text embeddings, plus the
three merge strategies (element-wise add, learnable weighted sum, 1x1
convolutional fusion over the channel concatenation).

Queries come from image spatial tokens, keys/values from the per-control
text embedding sequence. A fusion module is shape-preserving, so it drops
in after any feature map without disturbing the surrounding graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation, DimensionError
from .tensor import Tensor

STRATEGIES = ("add", "wsum", "conv")


@dataclass
class AttentionParams:
    """Q/K/V projections. wq: [C, d], wk: [D, d], wv: [D, C].

    d defaults to C; wv must project back to the image channel count so the
    merge is shape-compatible. `scale_scores` divides scores by sqrt(d);
    disable it to reproduce unscaled dot-product scores.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    scale_scores: bool = True


@dataclass
class AttentionState:
    """Intermediate attention products kept for inspection and tests."""

    scores: Tensor   # [HW, T]
    weights: Tensor  # [HW, T], rows sum to 1
    attended: Tensor  # [HW, C]


def image_to_tokens(x: Tensor) -> Tensor:
    """[C,H,W] -> [HW,C]; row r*W+c holds the channel vector at (r, c)."""
    if len(x.shape) != 3:
        raise DimensionError(f"image_to_tokens: expected [C,H,W], got {x.shape}")
    c, h, w = x.shape
    return T.permute(T.reshape(x, (c, h * w)), (1, 0))


def tokens_to_image(tokens: Tensor, h: int, w: int) -> Tensor:
    """Exact inverse of image_to_tokens."""
    hw, c = tokens.shape
    if hw != h * w:
        raise DimensionError(f"tokens_to_image: {hw} tokens vs {h}x{w}")
    return T.reshape(T.permute(tokens, (1, 0)), (c, h, w))


def cross_attention(x_tokens: Tensor, text: Tensor, p: AttentionParams) -> AttentionState:
    """Scaled dot-product attention: Q from image tokens, K/V from text."""
    if text.shape[0] < 1:
        raise ContractViolation("cross_attention: empty text sequence (T must be >= 1)")
    q = T.matmul(x_tokens, p.wq)
    k = T.matmul(text, p.wk)
    v = T.matmul(text, p.wv)
    scores = T.matmul(q, T.permute(k, (1, 0)))
    if p.scale_scores:
        scores = T.scale(scores, 1.0 / np.sqrt(p.wq.shape[1]))
    weights = T.softmax_rows(scores)
    attended = T.matmul(weights, v)
    return AttentionState(scores=scores, weights=weights, attended=attended)


def merge_add(attended: Tensor, x_tokens: Tensor) -> Tensor:
    return T.add(attended, x_tokens)


def merge_weighted(attended: Tensor, x_tokens: Tensor, alpha: Tensor, beta: Tensor) -> Tensor:
    return T.add(T.smul(attended, alpha), T.smul(x_tokens, beta))


def merge_conv(attended: Tensor, x_tokens: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1x1 conv over the channel concatenation [attended | image].

    kernel is stored as [C, 2C, 1, 1]; on token matrices this is the linear
    map cat @ kernel[:, :, 0, 0].T + bias applied at every spatial position.
    """
    c = x_tokens.shape[1]
    if kernel.shape != (c, 2 * c, 1, 1):
        raise DimensionError(f"merge_conv: kernel {kernel.shape} vs channels {c}")
    cat = T.concat_cols(attended, x_tokens)
    w2d = T.reshape(kernel, (c, 2 * c))
    return T.add_rowvec(T.matmul(cat, T.permute(w2d, (1, 0))), bias)


def passthrough_kernel(c: int, dtype=np.float32) -> np.ndarray:
    """[0 | I] kernel: conv fusion output equals the image features exactly."""
    k = np.zeros((c, 2 * c, 1, 1), dtype=dtype)
    k[:, c:, 0, 0] = np.eye(c, dtype=dtype)
    return k


class FusionModule:
    """One insertion point: attention params plus a merge strategy.

    Parameter tensors live in the model registry; this object only wires
    them together. `strategy` is one of "add", "wsum", "conv".
    """

    def __init__(self, strategy: str, attn: AttentionParams, alpha=None, beta=None,
                 fuse_w=None, fuse_b=None):
        if strategy not in STRATEGIES:
            raise ContractViolation(f"unknown fusion strategy {strategy!r}")
        self.strategy = strategy
        self.attn = attn
        self.alpha = alpha
        self.beta = beta
        self.fuse_w = fuse_w
        self.fuse_b = fuse_b
        self.last_state: AttentionState | None = None

    def merge(self, attended: Tensor, x_tokens: Tensor) -> Tensor:
        if self.strategy == "add":
            return merge_add(attended, x_tokens)
        if self.strategy == "wsum":
            return merge_weighted(attended, x_tokens, self.alpha, self.beta)
        return merge_conv(attended, x_tokens, self.fuse_w, self.fuse_b)

    def __call__(self, x: Tensor, text: Tensor) -> Tensor:
        return fusion_forward(x, text, self)


def fusion_forward(x: Tensor, text: Tensor, module: FusionModule) -> Tensor:
    """tokens -> cross-attention -> merge -> image layout; shape preserved."""
    if len(x.shape) != 3:
        raise DimensionError(f"fusion_forward: expected [C,H,W], got {x.shape}")
    _, h, w = x.shape
    tokens = image_to_tokens(x)
    state = cross_attention(tokens, text, module.attn)
    module.last_state = state
    merged = module.merge(state.attended, tokens)
    return tokens_to_image(merged, h, w)
