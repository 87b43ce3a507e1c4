"""Kernels on binary descriptors viewed as 0/1 coordinate vectors.

For bit vectors the inner product is ``popcount(x & y)`` and the squared
Euclidean distance equals the Hamming distance, so every kernel reduces to
bit counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..features import as_descriptors, dot_matrix, hamming, hamming_matrix

KERNELS = ("linear", "sigmoid", "polynomial", "rbf")
_ALIASES = {"poly": "polynomial"}


def canonical_kernel(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KERNELS:
        raise ConfigError(f"unknown kernel {kind!r}; expected one of {', '.join(KERNELS)}")
    return kind


@dataclass(frozen=True)
class KernelParams:
    gamma: float = 1.0 / 256
    coef0: float = 0.0
    degree: int = 3


def _apply(kind: str, params: KernelParams, dot, dist):
    if kind == "linear":
        return dot.astype(np.float64)
    if kind == "polynomial":
        return (params.gamma * dot + params.coef0) ** params.degree
    if kind == "sigmoid":
        return np.tanh(params.gamma * dot + params.coef0)
    return np.exp(-params.gamma * dist)


def eval_kernel(kind: str, params: KernelParams, x: np.ndarray, y: np.ndarray) -> float:
    kind = canonical_kernel(kind)
    x = np.asarray(x, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    if kind == "rbf":
        return float(np.exp(-params.gamma * hamming(x, y)))
    if x.shape != y.shape:
        hamming(x, y)  # raises the width-mismatch error
    dot = int(np.bitwise_count(x & y).sum())
    return float(_apply(kind, params, np.float64(dot), None))


def gram(kind: str, params: KernelParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel matrix K[i, j] = k(a_i, b_j)."""
    kind = canonical_kernel(kind)
    a, b = as_descriptors(a), as_descriptors(b)
    if kind == "rbf":
        return _apply(kind, params, None, hamming_matrix(a, b))
    return _apply(kind, params, dot_matrix(a, b), None)
