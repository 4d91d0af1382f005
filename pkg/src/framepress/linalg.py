"""Dense float64 kernels everything else builds on.

Row-wise softmax, single-head cross-attention with exposed weights, seeded
RNG streams, and central-difference gradients for verification. All
operations are pure functions of their inputs and return fresh arrays.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError, ShapeError


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate ``values`` as a finite 2-D float64 array (no copy if already one)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def frozen_matrix(values, name: str = "matrix") -> np.ndarray:
    """A validated, read-only float64 copy, safe to share across threads."""
    arr = np.array(values, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability.

    Every output row is nonnegative and sums to 1 within 1e-12.
    """
    arr = as_matrix(m, "softmax input")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"softmax requires a non-empty matrix, got shape {arr.shape}")
    shifted = arr - arr.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def cross_attention(
    queries,
    keys,
    values,
    scale: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-head scaled dot-product cross-attention.

    Returns ``(weights, output)`` where ``weights = softmax(queries @ keys.T
    * scale)`` row-wise and ``output = weights @ values``. The weight matrix
    is returned so callers can score tokens by their attention responses.
    ``scale`` defaults to ``1 / sqrt(embed_dim)``.
    """
    q = as_matrix(queries, "queries")
    k = as_matrix(keys, "keys")
    v = as_matrix(values, "values")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(
            f"queries and keys must share a column count, got {q.shape} vs {k.shape}"
        )
    if k.shape[0] != v.shape[0]:
        raise ShapeError(
            f"keys and values must share a row count, got {k.shape} vs {v.shape}"
        )
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    weights = softmax_rows(q @ k.T * scale)
    return weights, weights @ v


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 stream; the seed alone fixes every draw."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_rng(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent child streams, reproducible from ``(seed, n)``."""
    if n < 0:
        raise ParameterError(f"cannot split into {n} streams")
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def fd_gradient(
    f: Callable[[np.ndarray], float],
    x: Sequence[float] | np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector.

    Evaluates ``(f(x + h e_i) - f(x - h e_i)) / (2 h)`` per coordinate.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    base = np.asarray(x, dtype=np.float64)
    if base.ndim != 1:
        raise ShapeError(f"x must be a vector, got shape {base.shape}")
    grad = np.empty_like(base)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = float(f(hi))
        f_lo = float(f(lo))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        grad[i] = (f_hi - f_lo) / (2.0 * step)
    return grad
