"""Gradient-flow diffeomorphism and its approximate inverse.

The forward map integrates ``dy/ds = -clip(grad f(y))`` for time ``t``; the
inverse integrates the positive field from the image point.  A field is any
callable mapping an (N, n) array to an (N, n) array of gradients.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .occupancy import BLOCK


class FlowError(RuntimeError):
    """The cost-gradient field returned non-finite values."""


@dataclass(frozen=True)
class FlowSpec:
    horizon_t: float = 1.0
    steps_K: int = 20
    grad_clip: float = 1.0
    method: str = "euler"

    def __post_init__(self):
        if self.horizon_t < 0:
            raise ValueError("horizon_t must be nonnegative")
        if self.horizon_t > 0 and self.steps_K < 1:
            raise ValueError("steps_K must be >= 1 when horizon_t > 0")
        if not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive")
        if self.method not in ("euler", "midpoint"):
            raise ValueError(f"unknown integrator {self.method!r}")

    @property
    def h(self) -> float:
        return self.horizon_t / self.steps_K if self.steps_K else 0.0


def clip_rows(g: np.ndarray, gmax: float) -> np.ndarray:
    """Rescale rows whose Euclidean norm exceeds ``gmax``."""
    norm = np.sqrt(np.sum(g * g, axis=1, keepdims=True))
    return np.where(norm > gmax, g * (gmax / np.maximum(norm, 1e-300)), g)


def _eval(field, Y, gmax):
    g = np.asarray(field(Y), dtype=float)
    if g.shape != Y.shape:
        raise FlowError(f"field returned shape {g.shape} for input {Y.shape}")
    if not np.all(np.isfinite(g)):
        raise FlowError("cost-gradient field returned non-finite values")
    return clip_rows(g, gmax)


def integrate(field, Y, spec: FlowSpec, sign: float = 1.0) -> np.ndarray:
    """Integrate ``dy/ds = -sign * clip(field(y))`` over the horizon; returns a new array."""
    Y = np.array(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("expected an (N, n) batch")
    if not np.all(np.isfinite(Y)):
        raise ValueError("inputs must be finite")
    if spec.horizon_t == 0 or len(Y) == 0:
        return Y
    h = spec.h
    for _ in range(spec.steps_K):
        g = _eval(field, Y, spec.grad_clip)
        if spec.method == "midpoint":
            g = _eval(field, Y - (sign * 0.5 * h) * g, spec.grad_clip)
        Y = Y - (sign * h) * g
    return Y


def morph_forward(field, y, spec: FlowSpec) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return integrate(field, y[None], spec, 1.0)[0]


def morph_inverse(field, z, spec: FlowSpec) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return integrate(field, z[None], spec, -1.0)[0]


def _chunks(n, workers):
    # chunk boundaries on multiples of the net's evaluation block
    blocks = -(-n // BLOCK)
    per = -(-blocks // workers)
    return [(s * BLOCK, min(n, (s + per) * BLOCK)) for s in range(0, blocks, per)]


def morph_batch(field, Y, spec: FlowSpec, workers: int = 1, inverse: bool = False) -> np.ndarray:
    """Morph every row of ``Y``; the result does not depend on ``workers``."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1 and Y.size == 0:
        return Y.copy()
    sign = -1.0 if inverse else 1.0
    if workers == 1 or len(Y) <= BLOCK:
        return integrate(field, Y, spec, sign)
    spans = _chunks(len(Y), workers)
    with ThreadPoolExecutor(max_workers=len(spans)) as ex:
        parts = list(ex.map(lambda ab: integrate(field, Y[ab[0]:ab[1]], spec, sign), spans))
    return np.concatenate(parts)
