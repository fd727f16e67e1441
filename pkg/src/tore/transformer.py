"""Attention building blocks: masked multi-head attention, pre-norm
encoder/decoder layers, sinusoidal positions, adjacency and joint masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .mesh import MeshTemplate
from .module import Module, ones_param, param, zeros_param

@dataclass
class AttnMask:
    """Boolean [Q, K] matrix; True means the query may attend to the key."""

    allow: np.ndarray

    def __post_init__(self):
        self.allow = np.asarray(self.allow, dtype=bool)
        if self.allow.ndim != 2:
            raise ValueError("attention mask must be 2-D")
        if not self.allow.any(axis=1).all():
            raise ValueError("attention mask has a query row with no allowed keys")


@dataclass
class LayerConfig:
    model_dim: int = 64
    ff_dim: int = 256
    heads: int = 4
    layers: int = 1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")


# full-scale presets from the reference architecture lineage
NSR_PRESET = LayerConfig(model_dim=128, ff_dim=512, heads=4, layers=1)
ENCODER_PRESET = LayerConfig(model_dim=512, ff_dim=2048, heads=4, layers=4)


def sinusoidal_pe(n: int, d: int) -> np.ndarray:
    """Fixed interleaved sin/cos positional encoding, base wavelength 10000."""
    if d % 2 != 0:
        raise ValueError("positional encoding dimension must be even")
    pos = np.arange(n)[:, None]
    freqs = np.exp(-math.log(10000.0) * np.arange(d // 2) / (d // 2))
    angles = pos * freqs[None, :]
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def adjacency_mask(template: MeshTemplate) -> AttnMask:
    """Coarse-vertex self-attention mask: 1-ring neighbors plus self."""
    return AttnMask(template.adjacency.copy())


def random_joint_mask(j: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Per-joint keep vector for training-time query masking (True = keep)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("joint mask rate must be in [0, 1)")
    if rate == 0.0:
        return np.ones(j, dtype=bool)
    return rng.random(j) >= rate


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned projections.

    Masked positions get a large negative logit and an exact post-softmax
    zero clamp, so forbidden weights are 0.0 rather than merely tiny.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = param(rng, (dim, dim))
        self.wk = param(rng, (dim, dim))
        self.wv = param(rng, (dim, dim))
        self.wo = param(rng, (dim, dim))
        self.bq = zeros_param((dim,))
        self.bk = zeros_param((dim,))
        self.bv = zeros_param((dim,))
        self.bo = zeros_param((dim,))

    def __call__(self, q: T.Tensor, k: T.Tensor, v: T.Tensor,
                 mask: AttnMask | None = None):
        if q.shape[1] != self.dim or k.shape[1] != self.dim or v.shape[1] != self.dim:
            raise ValueError("attention input dim mismatch")
        if k.shape[0] != v.shape[0]:
            raise ValueError("key/value token counts differ")
        if mask is not None and mask.allow.shape != (q.shape[0], k.shape[0]):
            raise ValueError("attention mask shape mismatch")
        qp = T.linear(q, self.wq, self.bq)
        kp = T.linear(k, self.wk, self.bk)
        vp = T.linear(v, self.wv, self.bv)
        core, maps = T.attention_core(
            qp, kp, vp, self.heads, mask.allow if mask is not None else None)
        out = T.linear(core, self.wo, self.bo)
        return out, maps


class FeedForward(Module):
    def __init__(self, dim: int, ff_dim: int, rng: np.random.Generator):
        self.w1 = param(rng, (dim, ff_dim))
        self.b1 = zeros_param((ff_dim,))
        self.w2 = param(rng, (ff_dim, dim))
        self.b2 = zeros_param((dim,))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.linear(T.gelu(T.linear(x, self.w1, self.b1)), self.w2, self.b2)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = ones_param((dim,))
        self.bias = zeros_param((dim,))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class EncoderLayer(Module):
    """Pre-norm: LN -> self-attention -> residual, LN -> GELU FF -> residual."""

    def __init__(self, cfg: LayerConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.model_dim)
        self.attn = MultiHeadAttention(cfg.model_dim, cfg.heads, rng)
        self.ln2 = LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim, rng)

    def __call__(self, x: T.Tensor, mask: AttnMask | None = None):
        normed = self.ln1(x)
        attn_out, attn_map = self.attn(normed, normed, normed, mask)
        x = x + attn_out
        x = x + self.ff(self.ln2(x))
        return x, attn_map


class DecoderLayer(Module):
    """Pre-norm decoder: self-attention, cross-attention to memory, FF."""

    def __init__(self, cfg: LayerConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.model_dim)
        self.self_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, rng)
        self.ln2 = LayerNorm(cfg.model_dim)
        self.cross_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, rng)
        self.ln3 = LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim, rng)

    def __call__(self, x: T.Tensor, memory: T.Tensor,
                 self_mask: AttnMask | None = None,
                 cross_mask: AttnMask | None = None):
        normed = self.ln1(x)
        attn_out, self_map = self.self_attn(normed, normed, normed, self_mask)
        x = x + attn_out
        normed = self.ln2(x)
        cross_out, cross_map = self.cross_attn(normed, memory, memory, cross_mask)
        x = x + cross_out
        x = x + self.ff(self.ln3(x))
        return x, self_map, cross_map
