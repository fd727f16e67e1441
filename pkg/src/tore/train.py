"""Training loop: conv feature stub, AdamW with gradient clipping, CSV log."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, config_from_dict, config_to_dict
from .container import load_container, save_container
from .gtr import ModelConfig, ToreModel
from .losses import LossWeights, SampleGT, total_loss
from .mesh import MeshTemplate, build_template
from .module import Module, param, zeros_param

TRAIN_CSV_COLUMNS = ["step", "L_J3D", "L_RJ3D", "L_V3D", "L_RJ2D", "L_P", "total", "wall_time"]


class ConvStub(Module):
    """Trainable stand-in for a CNN backbone: two 3x3 convs with GELU and
    strided subsampling, 56x56 grayscale down to a 7x7 feature grid."""

    def __init__(self, out_channels: int, rng: np.random.Generator, hidden: int = 8):
        self.w1 = param(rng, (3, 3, 1, hidden), std=0.1)
        self.b1 = zeros_param((hidden,))
        self.w2 = param(rng, (3, 3, hidden, out_channels), std=0.1)
        self.b2 = zeros_param((out_channels,))

    def __call__(self, image: T.Tensor) -> T.Tensor:
        if image.data.ndim != 2:
            raise ValueError("stub expects a [S, S] grayscale image")
        x = T.reshape(image, (*image.shape, 1))
        x = T.gelu(T.conv2d(x, self.w1, self.b1))
        x = x[::4, ::4, :]
        x = T.gelu(T.conv2d(x, self.w2, self.b2))
        return x[::2, ::2, :]


class AdamW:
    def __init__(self, named_params, lr: float, weight_decay: float,
                 grad_clip_norm: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.grad_clip_norm = grad_clip_norm
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def _clip(self) -> float:
        sq = 0.0
        for _, p in self.params:
            if p.grad is not None:
                sq += float(np.sum(p.grad.astype(np.float64) ** 2))
        norm = math.sqrt(sq)
        if norm > self.grad_clip_norm and norm > 0:
            factor = self.grad_clip_norm / norm
            for _, p in self.params:
                if p.grad is not None:
                    p.grad *= factor
        return norm

    def step(self) -> float:
        norm = self._clip()
        self.t += 1
        bc1 = 1 - self.b1**self.t
        bc2 = 1 - self.b2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * (update + self.weight_decay * p.data)).astype(p.data.dtype)
        return norm


def sample_gt(arrays: dict[str, np.ndarray], i: int) -> SampleGT:
    return SampleGT(
        verts_low=arrays["verts_low"][i],
        verts_mid=arrays["verts_mid"][i],
        verts_high=arrays["verts_high"][i],
        joints3d=arrays["joints3d"][i],
        joints2d=arrays["joints2d"][i],
    )


def build_model(cfg: ModelConfig, template: MeshTemplate, seed: int):
    rng = np.random.default_rng(seed)
    model = ToreModel(cfg, template, rng)
    stub = ConvStub(cfg.backbone_dim, rng)
    return model, stub


def forward_sample(model: ToreModel, stub: ConvStub, render: np.ndarray,
                   train: bool = False, rng: np.random.Generator | None = None):
    features = stub(T.Tensor(render))
    return model.forward(features, train=train, rng=rng)


def save_checkpoint(path, model: ToreModel, stub: ConvStub, run_cfg: RunConfig) -> None:
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    arrays.update({f"stub.{k}": v for k, v in stub.state_dict().items()})
    save_container(path, arrays, {"config": config_to_dict(run_cfg)})


def load_checkpoint(path, template: MeshTemplate | None = None):
    arrays, meta = load_container(path)
    run_cfg = config_from_dict(meta["config"])
    template = template or build_template()
    model, stub = build_model(run_cfg.model, template, run_cfg.seed)
    model.load_state_dict(
        {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    stub.load_state_dict(
        {k[len("stub."):]: v for k, v in arrays.items() if k.startswith("stub.")})
    return model, stub, run_cfg


def train(cfg: RunConfig, template: MeshTemplate | None = None,
          arrays: dict[str, np.ndarray] | None = None) -> dict:
    """Optimize the model on a dataset container; returns a run summary.

    Writes ``metrics.csv`` (one row per step) and ``checkpoint.tore`` under
    ``cfg.out_dir``.  A non-finite loss aborts with a diagnostic JSON dump.
    """
    template = template or build_template()
    if arrays is None:
        arrays, _ = load_container(cfg.data)
    n = arrays["render"].shape[0]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, stub = build_model(cfg.model, template, cfg.seed)
    named = list(model.named_parameters(prefix="model.")) + \
        list(stub.named_parameters(prefix="stub."))
    opt = AdamW(named, cfg.optimizer.lr, cfg.optimizer.weight_decay,
                cfg.optimizer.grad_clip_norm)
    rng = np.random.default_rng(cfg.seed + 1)
    weights = LossWeights()

    rows = [",".join(TRAIN_CSV_COLUMNS)]
    first_total = last_total = None
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        idx = rng.integers(0, n, size=cfg.batch)
        batch_loss = None
        term_sums = dict.fromkeys(("L_J3D", "L_RJ3D", "L_V3D", "L_RJ2D", "L_P", "total"), 0.0)
        try:
            for i in idx:
                out = forward_sample(model, stub, arrays["render"][i], train=True, rng=rng)
                loss, terms = total_loss(out, sample_gt(arrays, int(i)), weights,
                                         cfg.model.grid_h, cfg.model.grid_w,
                                         cfg.model.image_size)
                for key in term_sums:
                    term_sums[key] += terms[key] / cfg.batch
                scaled = T.scale(loss, 1.0 / cfg.batch)
                batch_loss = scaled if batch_loss is None else batch_loss + scaled
            bad = not math.isfinite(term_sums["total"])
            if not bad:
                for _, p in named:
                    p.zero_grad()
                batch_loss.backward()
                opt.step()
        except FloatingPointError as exc:
            dump = {"step": step, "error": str(exc), "terms": term_sums,
                    "indices": [int(i) for i in idx]}
            (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=2))
            raise RuntimeError(f"non-finite loss at step {step}; dump written") from exc
        if bad:
            dump = {"step": step, "terms": term_sums, "indices": [int(i) for i in idx]}
            (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=2))
            raise RuntimeError(f"non-finite loss at step {step}; dump written")
        wall = time.perf_counter() - t0
        rows.append(",".join(
            [str(step)] + [f"{term_sums[c]:.8g}" for c in TRAIN_CSV_COLUMNS[1:-1]]
            + [f"{wall:.6f}"]))
        if first_total is None:
            first_total = term_sums["total"]
        last_total = term_sums["total"]

    (out_dir / "metrics.csv").write_text("\n".join(rows) + "\n")
    ckpt = out_dir / "checkpoint.tore"
    save_checkpoint(ckpt, model, stub, cfg)
    return {
        "first_loss": first_total,
        "final_loss": last_total,
        "checkpoint": str(ckpt),
        "metrics_csv": str(out_dir / "metrics.csv"),
        "model": model,
        "stub": stub,
    }
