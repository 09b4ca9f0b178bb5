"""Global-feature branch: patch embedding, pre-norm encoder stack, and
post-processing of the token sequence back into multi-scale feature maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module, ModuleList, MultiScaleFeatures
from .tensor import ShapeError, Tensor


@dataclass
class EncoderConfig:
    depth: int = 12
    d_model: int = 384
    heads: int = 6
    mlp_ratio: float = 4.0
    patch_size: int = 16

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"encoder depth must be >= 1, got {self.depth}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


@dataclass
class TokenSequence:
    """Patch tokens plus the spatial grid they came from."""

    tokens: Tensor  # B x N x d_model
    grid: tuple[int, int]

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.shape[-2] != rows * cols:
            raise ShapeError(
                f"token count {self.tokens.shape[-2]} != grid {rows}x{cols}"
            )


class PatchEmbed(Module):
    """Split the image into P x P patches, project each to d_model, add a
    learned positional embedding."""

    def __init__(self, in_channels: int, cfg: EncoderConfig, image_hw: tuple[int, int],
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        h, w = image_hw
        p = cfg.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        self.grid = (h // p, w // p)
        self.patch_size = p
        self.in_channels = in_channels
        n = self.grid[0] * self.grid[1]
        self.proj = Linear(p * p * in_channels, cfg.d_model, rng, dtype=dtype)
        self.pos = Tensor((rng.standard_normal((n, cfg.d_model)) * 0.02).astype(dtype),
                          requires_grad=True)

    def __call__(self, image: Tensor) -> TokenSequence:
        b, c, h, w = image.shape
        p = self.patch_size
        gh, gw = self.grid
        if c != self.in_channels or (h // p, w // p) != self.grid:
            raise ShapeError(f"expected {self.in_channels}x{gh * p}x{gw * p} image, got {c}x{h}x{w}")
        x = T.reshape(image, (b, c, gh, p, gw, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))  # B, gh, gw, C, p, p
        x = T.reshape(x, (b, gh * gw, c * p * p))
        tokens = self.proj(x) + self.pos
        return TokenSequence(tokens, self.grid)


class MultiHeadSelfAttention(Module):
    """Per-head Q/K/V projections, scaled dot-product attention, concat, W_o.

    The per-head matrices are stored stacked as (heads, d_model, d_head);
    slicing along the first axis recovers each head's projection.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        h, d, dh = cfg.heads, cfg.d_model, cfg.d_head
        def proj():
            return Tensor((rng.standard_normal((h, d, dh)) * 0.02).astype(dtype),
                          requires_grad=True)
        self.wq, self.wk, self.wv = proj(), proj(), proj()
        self.wo = Tensor((rng.standard_normal((h * dh, d)) * 0.02).astype(dtype),
                         requires_grad=True)
        self.heads = h
        self.d_head = dh
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        xh = T.reshape(x, (b, 1, n, d))
        q = xh @ self.wq  # B x heads x N x d_head
        k = xh @ self.wk
        v = xh @ self.wv
        logits = (q @ T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.d_head))
        att = T.softmax_lastdim(logits)
        self.last_attention = att.data
        mixed = att @ v  # B x heads x N x d_head
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, n, self.heads * self.d_head))
        return mixed @ self.wo


class MlpBlock(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        hidden = int(cfg.d_model * cfg.mlp_ratio)
        self.fc1 = Linear(cfg.d_model, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, cfg.d_model, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm residual block: x + MSA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.norm1 = LayerNorm(cfg.d_model, dtype=dtype)
        self.attn = MultiHeadSelfAttention(cfg, rng, dtype=dtype)
        self.norm2 = LayerNorm(cfg.d_model, dtype=dtype)
        self.mlp = MlpBlock(cfg, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerBranch(Module):
    """Encoder over patch tokens, then progressive conv+upsample back to
    maps at 1/16 (d_model ch), 1/8 (128 ch), and 1/4 (64 ch) scales."""

    T1_CHANNELS = 128
    T2_CHANNELS = 64

    def __init__(self, cfg: EncoderConfig, image_hw: tuple[int, int],
                 rng: np.random.Generator, in_channels: int = 3, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.embed = PatchEmbed(in_channels, cfg, image_hw, rng, dtype=dtype)
        self.blocks = ModuleList(EncoderBlock(cfg, rng, dtype=dtype) for _ in range(cfg.depth))
        self.conv_t1 = Conv2d(cfg.d_model, self.T1_CHANNELS, 3, rng, padding=1, dtype=dtype)
        self.conv_t2 = Conv2d(self.T1_CHANNELS, self.T2_CHANNELS, 3, rng, padding=1, dtype=dtype)

    def encode(self, image: Tensor) -> TokenSequence:
        seq = self.embed(image)
        x = seq.tokens
        for block in self.blocks:
            x = block(x)
        return TokenSequence(x, seq.grid)

    def postprocess(self, seq: TokenSequence) -> MultiScaleFeatures:
        b = seq.tokens.shape[0]
        gh, gw = seq.grid
        t0 = T.transpose(T.reshape(seq.tokens, (b, gh, gw, self.cfg.d_model)), (0, 3, 1, 2))
        t1 = T.upsample2x_nearest(self.conv_t1(t0))
        t2 = T.upsample2x_nearest(self.conv_t2(t1))
        return MultiScaleFeatures(s16=t0, s8=t1, s4=t2)

    def __call__(self, image: Tensor) -> MultiScaleFeatures:
        return self.postprocess(self.encode(image))


class ViewHead(Module):
    """Project a 1/4-scale map to one channel, upsample twice to full
    resolution, squash to (0,1)."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.proj = Conv2d(channels, 1, 1, rng, padding=0, dtype=dtype)

    def __call__(self, s4: Tensor) -> Tensor:
        logits = T.upsample2x_nearest(T.upsample2x_nearest(self.proj(s4)))
        return T.sigmoid(logits)
