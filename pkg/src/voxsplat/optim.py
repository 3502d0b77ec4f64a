"""AdamW optimizer and cosine learning-rate schedules.

The optimizer owns named parameters and per-parameter first/second moment
buffers; its full state round-trips through plain arrays so checkpoints can
resume bit-identically. Schedules are pure functions of the step index.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class AdamW:
    """Adam with decoupled weight decay, applied uniformly to all parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        """One update from accumulated gradients; parameters without a
        gradient are left untouched (no decay, no moment update)."""
        if lr is None:
            lr = self.lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            p.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers and step counter as named arrays for checkpointing."""
        out = {"opt.t": np.array([self.t], dtype=np.int64)}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["opt.t"][0])
        for name, p in self.params.items():
            for prefix, buf in (("opt.m.", self.m), ("opt.v.", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise KeyError(f"optimizer state missing {key!r}")
                src = arrays[key]
                if src.shape != p.data.shape:
                    raise ValueError(f"optimizer state shape mismatch for {key!r}")
                buf[name] = src.astype(p.data.dtype).copy()


def cosine_restarts(step: int, base_lr: float, period: int = 32,
                    min_lr: float = 0.0) -> float:
    """Cosine annealing that restarts from ``base_lr`` every ``period`` steps."""
    phase = (step % period) / period
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * phase))


def cosine_anneal(step: int, base_lr: float, total_steps: int,
                  min_lr: float = 0.0) -> float:
    """Single cosine decay from ``base_lr`` to ``min_lr`` over the whole run."""
    phase = min(step / max(total_steps, 1), 1.0)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * phase))


def make_schedule(kind: str, base_lr: float, period: int, total_steps: int,
                  min_lr: float = 0.0, warmup: int = 0):
    """Schedule factory: ``restarts`` (periodic) or ``cosine`` (one decay),
    optionally scaled by a linear warmup ramp over the first ``warmup`` steps.

    Warmup keeps early steps small while the decoder is still undifferentiated;
    without it, large early moves can push every opacity into the sigmoid tail
    (the loss rewards blanking the 90%+ background before anything else), and
    the model never recovers.
    """
    if kind == "restarts":
        base = lambda step: cosine_restarts(step, base_lr, period, min_lr)
    elif kind == "cosine":
        base = lambda step: cosine_anneal(step, base_lr, total_steps, min_lr)
    else:
        raise ValueError(f"unknown schedule kind {kind!r} (want 'restarts' or 'cosine')")
    if warmup <= 0:
        return base
    return lambda step: base(step) * min(1.0, (step + 1) / warmup)
