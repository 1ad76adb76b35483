"""Small deterministic vector kernels shared by every other module.

All arithmetic is double precision; storage formats downcast to float32
separately. Everything here is pure and reentrant.
"""

from __future__ import annotations

import numpy as np

# Below this, normalization is an error rather than noise: zero vectors only
# arise from bugs or degenerate inputs.
EPS_NORM = 1e-12

# Margin of the arccos clamp used when differentiating through angles.
ARCCOS_CLAMP = 1e-7


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ZeroNorm(EngineError):
    """Vector norm too small to normalize safely."""


class DimensionMismatch(EngineError):
    pass


class NonPositiveTemperature(EngineError):
    pass


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale v to unit Euclidean norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= EPS_NORM:
        raise ZeroNorm(f"cannot normalize vector with norm {n:.3e}")
    return v / n


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise normalize a matrix; reports the first degenerate row."""
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(n <= EPS_NORM)
    if bad.size:
        raise ZeroNorm(f"row {bad[0]} has norm {n[bad[0]]:.3e}")
    return m / n[:, None]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Inner product of two unit vectors, clamped to [-1, 1].

    The clamp keeps downstream arccos calls safe against rounding that
    pushes the product a few ulp outside the valid range.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shape {u.shape} vs {v.shape}")
    return float(np.clip(u @ v, -1.0, 1.0))


def softmax_temp(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of scores / temperature, max-shifted for overflow safety."""
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    s = np.asarray(scores, dtype=np.float64) / temperature
    e = np.exp(s - s.max())
    return e / e.sum()
