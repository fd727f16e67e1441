"""Throughput benchmark: transformer-only forward at desk dims.

Full-scale presets are mirrored by their token counts only; dims stay at
desk scale, so the report is about relative speedups, never absolute
published numbers.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .transformer import EncoderLayer, LayerConfig

# token counts of the mirrored configurations: image + camera + joint
# (+ coarse vertex for the full models) tokens
TOKEN_PRESETS = {
    "metro_full": 49 + 1 + 14 + 431,
    "metro_gtr": 1 + 14,
    "fastmetro_full": 49 + 1 + 14 + 431,
    "fastmetro_gtr": 49 + 1 + 14,
}

BENCH_CSV_COLUMNS = ["config", "tokens", "images_per_sec", "speedup_vs_a"]


def _run_once(layer: EncoderLayer, x: T.Tensor, batch: int) -> float:
    start = time.perf_counter()
    for _ in range(batch):
        layer(x)
    elapsed = time.perf_counter() - start
    return batch / elapsed


def bench(config_a: str, config_b: str, batch: int = 8, reps: int = 20,
          warmup: int = 3, desk: LayerConfig | None = None) -> dict:
    """Median images/second for two token presets through a desk-dim
    encoder layer; returns throughputs, the b-over-a speedup, and CSV."""
    for name in (config_a, config_b):
        if name not in TOKEN_PRESETS:
            raise ValueError(f"unknown bench preset {name!r}")
    desk = desk or LayerConfig(model_dim=64, ff_dim=256, heads=4, layers=1)
    rng = np.random.default_rng(0)
    layer = EncoderLayer(desk, rng)
    results = {}
    for name in (config_a, config_b):
        tokens = TOKEN_PRESETS[name]
        x = T.Tensor(rng.normal(0, 1, size=(tokens, desk.model_dim)))
        for _ in range(warmup):
            layer(x)
        rates = [_run_once(layer, x, batch) for _ in range(reps)]
        results[name] = float(np.median(rates))
    speedup = results[config_b] / results[config_a]
    lines = [",".join(BENCH_CSV_COLUMNS)]
    lines.append(f"{config_a},{TOKEN_PRESETS[config_a]},{results[config_a]:.3f},1.0")
    lines.append(f"{config_b},{TOKEN_PRESETS[config_b]},{results[config_b]:.3f},{speedup:.3f}")
    return {
        "images_per_sec": results,
        "speedup": speedup,
        "tokens": {name: TOKEN_PRESETS[name] for name in (config_a, config_b)},
        "csv": "\n".join(lines) + "\n",
    }
