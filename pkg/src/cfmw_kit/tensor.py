"""Dense float64 tensor primitives with deterministic, seed-stable randomness.

Every other module consumes plain ``numpy`` arrays of dtype float64 created
and validated through this one. All operations are pure: equal inputs give
bit-identical outputs on repeated calls, and no operation mutates its inputs.

Randomness is counter-based (SplitMix64 over a 64-bit counter) with normals
produced by the Box-Muller transform, so a seed fully determines the stream
on any platform with IEEE-754 doubles.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "SeededRng",
    "zeros",
    "randn",
    "matmul",
    "silu",
    "sigmoid",
    "softplus",
    "map_elementwise",
    "concat",
    "split",
    "reduce_sum",
    "reduce_mean",
    "check_finite",
]

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)  # SplitMix64 counter increment
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_TWO_NEG53 = 2.0 ** -53


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: bijective avalanche mix of a 64-bit word."""
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


class SeededRng:
    """Counter-based pseudo-random stream.

    Output word ``i`` is ``mix64(seed + (i + 1) * GOLDEN)`` where ``mix64`` is
    the SplitMix64 finalizer; the instance only tracks how many words have
    been consumed. Uniform doubles take the top 53 bits of a word; normal
    variates are Box-Muller pairs over consecutive uniforms (the radius
    uniform is drawn first, then the angle uniform).
    """

    def __init__(self, seed: int):
        self._base = _U64(seed & 0xFFFFFFFFFFFFFFFF)
        self._consumed = 0

    @property
    def words_consumed(self) -> int:
        return self._consumed

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._consumed + 1, self._consumed + n + 1, dtype=np.uint64)
        self._consumed += n
        return _mix64(self._base + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. doubles in [0, 1)."""
        if n < 0:
            raise ValueError("draw count must be >= 0")
        return (self._raw(n) >> _U64(11)).astype(np.float64) * _TWO_NEG53

    def uniform_open(self, n: int) -> np.ndarray:
        """n i.i.d. doubles in (0, 1]; safe under log()."""
        if n < 0:
            raise ValueError("draw count must be >= 0")
        return ((self._raw(n) >> _U64(11)) + _U64(1)).astype(np.float64) * _TWO_NEG53

    def normal(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals via Box-Muller on uniform pairs."""
        if n < 0:
            raise ValueError("draw count must be >= 0")
        if n == 0:
            return np.empty(0, dtype=np.float64)
        m = (n + 1) // 2
        u1 = self.uniform_open(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("empty shape is not a valid tensor shape")
    if any(s < 1 for s in shape):
        raise ValueError(f"all extents must be >= 1, got {shape}")
    return shape


def check_finite(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Reject NaN/Inf entries; returns the array unchanged."""
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{name} contains non-finite values")
    return t


def zeros(shape: Sequence[int]) -> np.ndarray:
    """All-zero tensor of the given shape; empty shapes are rejected."""
    return np.zeros(_check_shape(shape), dtype=np.float64)


def randn(shape: Sequence[int], rng: SeededRng) -> np.ndarray:
    """I.i.d. standard-normal tensor, advancing ``rng`` deterministically."""
    shape = _check_shape(shape)
    n = 1
    for s in shape:
        n *= s
    return rng.normal(n).reshape(shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D (m, k) by a 2-D (k, n), accumulated in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(t: np.ndarray) -> np.ndarray:
    """SiLU activation: z * sigmoid(z)."""
    t = np.asarray(t, dtype=np.float64)
    return t * sigmoid(t)


def softplus(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(z)), overflow-safe; strictly positive output."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > 30.0, t, np.log1p(np.exp(np.minimum(t, 30.0))))


_ELEMENTWISE: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "silu": silu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": np.exp,
    "neg": np.negative,
    "abs": np.abs,
}


def map_elementwise(t: np.ndarray, op: str) -> np.ndarray:
    """Apply a named elementwise function (silu, sigmoid, exp, neg, ...)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(np.asarray(t, dtype=np.float64))


def _check_axis(t: np.ndarray, axis: int) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for rank {t.ndim}")
    return axis % t.ndim


def concat(parts: Sequence[np.ndarray], axis: int) -> np.ndarray:
    """Concatenate along ``axis``; inverse of :func:`split` on that axis."""
    if len(parts) == 0:
        raise ValueError("concat needs at least one part")
    axis = _check_axis(np.asarray(parts[0]), axis)
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=axis)


def split(t: np.ndarray, axis: int, at: int) -> tuple[np.ndarray, np.ndarray]:
    """Split into [0:at) and [at:extent) along ``axis``; both parts non-empty."""
    t = np.asarray(t, dtype=np.float64)
    axis = _check_axis(t, axis)
    extent = t.shape[axis]
    if not 0 < at < extent:
        raise ValueError(f"split index {at} outside (0, {extent})")
    lo = [slice(None)] * t.ndim
    hi = [slice(None)] * t.ndim
    lo[axis] = slice(0, at)
    hi[axis] = slice(at, extent)
    return t[tuple(lo)].copy(), t[tuple(hi)].copy()


def reduce_sum(t: np.ndarray, axis: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.sum(t, axis=_check_axis(t, axis))


def reduce_mean(t: np.ndarray, axis: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.mean(t, axis=_check_axis(t, axis))
