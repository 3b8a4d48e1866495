"""Multi-head self-attention and the two feed-forward variants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Tensor, conv2d, layer_norm, linear, relu, softmax, take
from .windows import dilated_gather

CONV3X3 = "conv3x3"
FULLY_CONNECTED = "fully_connected"
SPARSE_FCL = "sparse_fcl"
CONV_RELU_CONV = "conv_relu_conv"


@dataclass
class AttentionWeights:
    """Projection parameters for one attention layer.

    For ``conv3x3`` the q/k/v weights are ``(C, C, 3, 3)`` kernels applied to
    the window image; for ``fully_connected`` they are ``(d, d)`` matrices
    applied to tokens. The output projection is always a token matrix.
    """

    kind: str
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Optional[Tensor] = None
    bk: Optional[Tensor] = None
    bv: Optional[Tensor] = None
    bo: Optional[Tensor] = None
    rel_bias: Optional[Tensor] = None  # ((2g-1)^2, heads) over token offsets

    def projection_params(self, include_bias: bool = False) -> int:
        n = self.wq.size
        if include_bias and self.bq is not None:
            n += self.bq.size
        return n


@dataclass
class FfnWeights:
    kind: str
    w1: Tensor
    w2: Tensor
    b1: Optional[Tensor] = None
    b2: Optional[Tensor] = None
    norm_gamma: Optional[Tensor] = None
    norm_beta: Optional[Tensor] = None


def conv_projection_params(channels: int, k: int = 3, bias: bool = False) -> int:
    return channels * channels * k * k + (channels if bias else 0)


def fcl_projection_params(channels: int, patch: int, bias: bool = False) -> int:
    d = channels * patch * patch
    return d * d + (d if bias else 0)


def relative_position_index(grid: int) -> np.ndarray:
    """Flat ``(T*T,)`` index into a ``(2g-1)^2`` offset table for a g x g token grid."""
    coords = np.stack(np.divmod(np.arange(grid * grid), grid), axis=1)
    rel = coords[:, None, :] - coords[None, :, :] + (grid - 1)
    return (rel[..., 0] * (2 * grid - 1) + rel[..., 1]).reshape(-1)


def attention_probs(q: Tensor, k: Tensor, heads: int, rel_bias: Optional[Tensor] = None) -> Tensor:
    """Softmax-normalised scores ``(M, h, T, T)`` for already-projected q, k."""
    m, t, d = q.shape
    dh = d // heads
    qh = q.reshape(m, t, heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(m, t, heads, dh).transpose(0, 2, 3, 1)
    scores = (qh @ kh) * (1.0 / math.sqrt(dh))
    if rel_bias is not None:
        grid = math.isqrt(t)
        if grid * grid != t:
            raise ConfigError("relative position bias needs a square token grid")
        bias = take(rel_bias, relative_position_index(grid), axis=0)
        scores = scores + bias.reshape(t, t, heads).transpose(2, 0, 1)
    return softmax(scores, axis=-1)


def mhsa(q: Tensor, k: Tensor, v: Tensor, weights: AttentionWeights) -> Tensor:
    """Multi-head self-attention over ``(M, T, d)`` token sets.

    Token-space q/k/v projections are applied only for the fully connected
    kind; the convolutional kind receives inputs already projected by
    :func:`conv_qkv`.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ConfigError("q, k and v must share one shape")
    m, t, d = q.shape
    h = weights.heads
    if d % h:
        raise ConfigError(f"token dimension {d} is not divisible by {h} heads")
    if weights.kind == FULLY_CONNECTED:
        q = linear(q, weights.wq, weights.bq)
        k = linear(k, weights.wk, weights.bk)
        v = linear(v, weights.wv, weights.bv)
    probs = attention_probs(q, k, h, weights.rel_bias)
    vh = v.reshape(m, t, h, d // h).transpose(0, 2, 1, 3)
    out = (probs @ vh).transpose(0, 2, 1, 3).reshape(m, t, d)
    return linear(out, weights.wo, weights.bo)


def conv_qkv(x: Tensor, weights: AttentionWeights):
    if weights.kind != CONV3X3:
        raise UsageError(f"conv_qkv needs conv3x3 projections, got {weights.kind}")
    return (
        conv2d(x, weights.wq, weights.bq),
        conv2d(x, weights.wk, weights.bk),
        conv2d(x, weights.wv, weights.bv),
    )


def sparse_ffn(y: Tensor, grid, weights: FfnWeights, rate: int, eps: float = 1e-5) -> Tensor:
    """Pre-norm feed-forward over dilated token neighbourhoods, with residual.

    The first layer maps the ``9d`` neighbourhood straight down to ``d``.
    """
    if weights.kind != SPARSE_FCL:
        raise UsageError(f"sparse_ffn needs sparse_fcl weights, got {weights.kind}")
    m, t, d = y.shape
    if t != grid[0] * grid[1]:
        raise UsageError(f"{t} tokens do not match grid {grid}")
    z = y if weights.norm_gamma is None else layer_norm(y, weights.norm_gamma, weights.norm_beta, eps)
    g = dilated_gather(z, grid, rate)
    hidden = relu(linear(g, weights.w1, weights.b1))
    return linear(hidden, weights.w2, weights.b2) + y


def conv_ffn(z: Tensor, weights: FfnWeights) -> Tensor:
    if weights.kind != CONV_RELU_CONV:
        raise UsageError(f"conv_ffn needs conv_relu_conv weights, got {weights.kind}")
    return conv2d(relu(conv2d(z, weights.w1, weights.b1)), weights.w2, weights.b2) + z
