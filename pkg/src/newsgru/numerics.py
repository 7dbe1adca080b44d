"""Dense float64 helpers, a deterministic PRNG, and a finite-difference oracle.

Matrices are 2-D row-major float64 numpy arrays and vectors are 1-D; shapes
are validated at every public entry point and errors name the offending
shapes. All functions are pure; the only stateful object is Rng.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

__all__ = [
    "NumericalError",
    "Rng",
    "concat",
    "finite_diff_grad",
    "glorot_init",
    "hadamard",
    "matmul",
    "matvec",
    "sigmoid",
    "softmax",
    "tanh",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class NumericalError(RuntimeError):
    """A computation produced a non-finite value."""


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product with an explicit inner-dimension check."""
    m = _as_matrix(m, "m")
    v = _as_vector(v, "v")
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"matvec dimension mismatch: {m.shape} x ({v.shape[0]},)")
    return m @ v


def softmax(v) -> np.ndarray:
    """Stable softmax via max-subtraction. Output is positive and sums to 1."""
    v = _as_vector(v, "v")
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    z = np.exp(v - v.max())
    return z / z.sum()


def sigmoid(v) -> np.ndarray:
    """Elementwise logistic function, stable for large |v|."""
    v = _as_vector(v, "v")
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v) -> np.ndarray:
    return np.tanh(_as_vector(v, "v"))


def hadamard(a, b) -> np.ndarray:
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"hadamard length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a * b


def concat(a, b) -> np.ndarray:
    return np.concatenate([_as_vector(a, "a"), _as_vector(b, "b")])


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Evaluates (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) per coordinate and
    raises NumericalError if any evaluation is non-finite.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = _as_vector(x, "x").copy()
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        f_plus = f(x)
        x[i] = orig - eps
        f_minus = f(x)
        x[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericalError(
                f"non-finite function value while perturbing coordinate {i}"
            )
        # subtract in f's own precision: an extended-precision f keeps its
        # extra bits through the cancellation
        grad[i] = float(f_plus - f_minus) / (2.0 * eps)
    return grad


def glorot_init(rows: int, cols: int, rng: "Rng") -> np.ndarray:
    """Uniform Glorot initialization on [-sqrt(6/(rows+cols)), +sqrt(...)]."""
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_init needs positive dims, got {rows}x{cols}")
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


def _mix64(x: int) -> int:
    # splitmix64 finalizer; full 64-bit avalanche
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator seeded through splitmix64.

    The same 64-bit seed always produces the same stream, independent of
    platform or numpy version. Substreams (weight init, dropout, shuffling)
    come from derive(), which hashes the seed together with a stream id so
    the streams are decorrelated.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        s = self.seed
        state = []
        for _ in range(4):
            s = (s + _GOLDEN) & _MASK64
            state.append(_mix64(s))
        self._s = state

    def derive(self, stream: int) -> "Rng":
        """Independent child generator for the given stream id."""
        return Rng(_mix64(self.seed ^ _mix64((int(stream) + 1) * _GOLDEN)))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, low: float, high: float, shape=None):
        """Uniform scalar or float64 array on [low, high)."""
        if shape is None:
            return low + (high - low) * self.random()
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = low + (high - low) * self.random()
        return out.reshape(shape)

    def integers(self, n: int) -> int:
        """Uniform int in [0, n). Modulo bias is below n / 2**64."""
        if n <= 0:
            raise ValueError(f"integers() needs n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.integers(i + 1)
            seq[i], seq[j] = seq[j], seq[i]
