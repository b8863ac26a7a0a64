"""Dense float64 matrix helpers and the seeded pseudo-random generator.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 stored
C-contiguous (row-major). The helpers here validate shapes and refuse to
hand back non-finite values.
"""

from __future__ import annotations

import numpy as np

PRNG_ALGORITHM = "pcg64-raw53"

_ELEMENTWISE_OPS = ("add", "sub", "mul", "scale")


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def as_matrix(values, cols: int | None = None) -> np.ndarray:
    """Coerce ``values`` into a row-major float64 matrix."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim == 1 and cols is not None:
        m = m.reshape(-1, cols)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"matrix dimensions must be positive, got {m.shape}")
    return m


def check_finite(m: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return check_finite(a @ b, "matmul")


def elementwise(op: str, a, b) -> np.ndarray:
    """Apply ``op`` (add, sub, mul, scale) to ``a`` and a matrix or scalar ``b``."""
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {_ELEMENTWISE_OPS}")
    a = as_matrix(a)
    if np.isscalar(b):
        b = float(b)
    else:
        b = as_matrix(b)
        if b.shape != a.shape:
            raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
        if op == "scale":
            raise ShapeError("scale expects a scalar right operand")
    if op == "add":
        out = a + b
    elif op == "sub":
        out = a - b
    else:
        out = a * b
    return check_finite(out, op)


def argmax_row(a, row: int) -> int:
    """Column index of the row maximum; ties go to the lowest index."""
    a = as_matrix(a)
    if not 0 <= row < a.shape[0]:
        raise IndexError(f"row {row} out of range for {a.shape[0]} rows")
    # np.argmax returns the first occurrence, which is the tie rule we want
    return int(np.argmax(a[row]))


class Prng:
    """Seeded generator over the raw 64-bit PCG64 stream.

    Only ``random_raw`` of the bit generator is used; doubles are built from
    the top 53 bits so the stream does not depend on numpy's distribution
    code, which is allowed to change between releases.
    """

    algorithm_id = PRNG_ALGORITHM

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._bits = np.random.PCG64(seed)

    @property
    def state(self) -> dict:
        return self._bits.state

    def raw(self, size: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(size), dtype=np.uint64)

    def random(self, size: int | tuple | None = None):
        """Uniform doubles in [0, 1)."""
        if size is None:
            return float(self.raw(1)[0] >> np.uint64(11)) * 2.0**-53
        n = int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(size)

    def uniform(self, lo: float, hi: float, size=None):
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
        u = self.random(size)
        out = lo + (hi - lo) * np.asarray(u)
        # lo + (hi-lo)*u can round up to hi for u close to 1
        out = np.where(out >= hi, np.nextafter(hi, lo), out)
        return float(out) if size is None else out

    def normal(self, size) -> np.ndarray:
        """Standard normal draws via Box-Muller on the uniform stream."""
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1], keeps log finite
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(size)

    def spawn_seed(self) -> int:
        return int(self.raw(1)[0])


def prng_uniform(rng: Prng, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)


def fisher_yates_permutation(rng: Prng, n: int) -> np.ndarray:
    """Uniform random permutation of ``0..n-1`` (Durstenfeld shuffle)."""
    if n < 1:
        raise ValueError("permutation length must be at least 1")
    perm = np.arange(n, dtype=np.int64)
    if n == 1:
        return perm
    u = rng.random(n - 1)
    # i runs n-1 .. 1, j uniform on [0, i]
    js = np.floor(u * np.arange(n, 1, -1)).astype(np.int64)
    p = perm.tolist()
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = int(js[k])
        p[i], p[j] = p[j], p[i]
    return np.asarray(p, dtype=np.int64)
