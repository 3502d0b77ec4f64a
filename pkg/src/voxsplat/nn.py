"""Small trainable building blocks on the autodiff tensor: a module base with
named parameter traversal, linear layers, and conv wrappers."""

from __future__ import annotations

import numpy as np

from . import conv as convops
from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class; parameters() walks attributes (and lists of modules) in
    insertion order, yielding dotted names for checkpointing."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            self._collect(name, value, out)
        return out

    @staticmethod
    def _collect(prefix: str, value, out: dict[str, Tensor]) -> None:
        if isinstance(value, Tensor):
            if value.requires_grad:
                out[prefix] = value
        elif isinstance(value, Module):
            for sub, p in value.parameters().items():
                out[f"{prefix}.{sub}"] = p
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                Module._collect(f"{prefix}.{i}", item, out)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.parameters().items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing parameter {key!r}")
            src = arrays[key]
            if tuple(src.shape) != p.shape:
                raise ValueError(f"shape mismatch for {key!r}: {src.shape} vs {p.shape}")
            p.data = src.astype(p.dtype).copy()


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 zero_init: bool = False):
        scale = 0.0 if zero_init else 1.0 / np.sqrt(d_in)
        self.w = T.param(rng, (d_in, d_out), scale=scale)
        self.b = T.zeros((d_out,), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int,
                 kernel: int = 3, stride: int = 1, padding: int = 1):
        self.w = T.param(rng, (c_out, c_in, kernel, kernel))
        self.b = T.zeros((c_out,), requires_grad=True)
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return convops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Conv3d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int,
                 kernel: int = 3, stride: int = 1, padding: int = 1):
        self.w = T.param(rng, (c_out, c_in, kernel, kernel, kernel))
        self.b = T.zeros((c_out,), requires_grad=True)
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return convops.conv3d(x, self.w, self.b, stride=self.stride, padding=self.padding)
