"""Tiny parameter-container base for layers and models."""

from __future__ import annotations

import numpy as np

from . import tensor as _tensor
from .tensor import Tensor


def _walk(name: str, value):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        for sub, t in value.named_parameters(f"{name}."):
            yield sub, t
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


class Module:
    """Holds trainable tensors directly or through nested modules/lists."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _walk(f"{prefix}{name}", value)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise ValueError(f"parameter name mismatch: {sorted(missing)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(p.data.dtype).copy()


def param(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    """Trainable tensor initialized from N(0, std^2)."""
    data = rng.normal(0.0, std, size=shape).astype(_tensor.DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_tensor.DEFAULT_DTYPE), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=_tensor.DEFAULT_DTYPE), requires_grad=True)
