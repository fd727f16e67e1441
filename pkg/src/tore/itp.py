"""Image token pruning: learnable clustering of HW image tokens into T
cluster tokens plus the projection-based token-reduction supervision."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import Module, param, zeros_param
from .transformer import LayerNorm


@dataclass
class PrunerOutput:
    z: T.Tensor        # [T, c_r] clustered tokens
    mapping: T.Tensor  # [HW, T], rows sum to 1


@dataclass
class IndicatorGrid:
    occupied: np.ndarray  # bool [H, W]

    def flat(self) -> np.ndarray:
        return self.occupied.reshape(-1)


def token_count(hw: int, prune_rate: float) -> int:
    """Cluster count after pruning: floor((1 - rate) * HW), at least 1."""
    if not 0.0 <= prune_rate < 1.0:
        raise ValueError("prune_rate must be in [0, 1)")
    t = math.floor((1.0 - prune_rate) * hw)
    if t == 0:
        raise ValueError("prune rate leaves no tokens")
    return t


class TokenPruner(Module):
    """Conv (3x3, c -> c/4) + GELU, per-token linear scores, softmax over
    clusters; the clustered tokens are M^T F followed by layer norm."""

    def __init__(self, h: int, w: int, channels: int, prune_rate: float,
                 rng: np.random.Generator):
        if channels % 4 != 0:
            raise ValueError("pruner channel count must be divisible by 4")
        self.h = h
        self.w = w
        self.channels = channels
        self.t = token_count(h * w, prune_rate)
        reduced = channels // 4
        self.conv_w = param(rng, (3, 3, channels, reduced))
        self.conv_b = zeros_param((reduced,))
        self.score_w = param(rng, (reduced, self.t))
        self.score_b = zeros_param((self.t,))
        self.norm = LayerNorm(channels)

    def __call__(self, tokens: T.Tensor) -> PrunerOutput:
        hw = self.h * self.w
        if tokens.shape != (hw, self.channels):
            raise ValueError(f"pruner expects [{hw}, {self.channels}] tokens, got {tokens.shape}")
        grid = T.reshape(tokens, (self.h, self.w, self.channels))
        feat = T.gelu(T.conv2d(grid, self.conv_w, self.conv_b))
        feat = T.reshape(feat, (hw, self.channels // 4))
        scores = T.linear(feat, self.score_w, self.score_b)
        mapping = T.softmax(scores, axis=1)
        z = self.norm(T.transpose(mapping) @ tokens)
        return PrunerOutput(z=z, mapping=mapping)


def indicator_grid(points2d: np.ndarray, h: int, w: int, image_size: float) -> IndicatorGrid:
    """Mark grid cells that receive at least one projected point.

    Points are (x, y) in pixel coordinates; out-of-frame points clamp to the
    border cells so early bad cameras still give a supervision signal.
    """
    if image_size <= 0:
        raise ValueError("image_size must be positive")
    occupied = np.zeros((h, w), dtype=bool)
    points2d = np.asarray(points2d)
    if points2d.size:
        rows = np.clip(np.floor(points2d[:, 1] / image_size * h).astype(int), 0, h - 1)
        cols = np.clip(np.floor(points2d[:, 0] / image_size * w).astype(int), 0, w - 1)
        occupied[rows, cols] = True
    return IndicatorGrid(occupied)


def pruning_loss(indicator: IndicatorGrid, mapping: T.Tensor) -> T.Tensor:
    """Cluster-mass reward on occupied cells: -(1/(T*HW)) sum_i F_d . M[:,i].

    The indicator is a constant per step; gradients flow only through M.
    """
    flat = indicator.flat().astype(mapping.data.dtype)
    hw, t = mapping.shape
    if flat.shape[0] != hw:
        raise ValueError("indicator / mapping shape mismatch")
    weighted = mapping * T.Tensor(flat[:, None])
    return T.scale(T.tsum(weighted), -1.0 / (t * hw))
