"""Shared test fixtures: a finite-difference gradient checker and helpers."""

from __future__ import annotations

import numpy as np
import pytest

from voxsplat import tensor as T
from voxsplat.tensor import Tensor

GRAD_H = 1e-4
GRAD_RTOL = 1e-4


def numeric_grad(fn, x: np.ndarray, h: float = GRAD_H) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` w.r.t. ``x`` in place."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        dn = fn()
        flat[i] = keep
        gf[i] = (up - dn) / (2.0 * h)
    return g


def gradcheck(fn, leaves: list[Tensor], rtol: float = GRAD_RTOL,
              h: float = GRAD_H) -> float:
    """Compare tape gradients of the scalar ``fn()`` against central
    differences for every leaf; returns the worst relative error.

    Leaves must be float64. The relative error normalizes the max absolute
    deviation by the largest gradient magnitude of that leaf.
    """
    for t in leaves:
        assert t.data.dtype == np.float64, "gradcheck needs float64 leaves"
        t.grad = None
    out = fn()
    out.backward()
    worst = 0.0
    for t in leaves:
        analytic = np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad, np.float64)
        numeric = numeric_grad(lambda: fn().item(), t.data, h)
        denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        rel = np.abs(numeric - analytic).max() / denom
        worst = max(worst, rel)
        assert rel < rtol, f"gradient mismatch {rel:.3e} (tolerance {rtol:g})"
    return worst


def leaf(rng: np.random.Generator, shape, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def to_float64(module) -> None:
    """Cast every parameter of an nn.Module to float64 for gradchecking."""
    for p in module.parameters().values():
        p.data = p.data.astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
