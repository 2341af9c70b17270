"""Dense-matrix helpers, the flatten/unflatten connection mapping, and seeded RNG streams.

Everything downstream works on float64 numpy arrays. Connectivity matrices are
R x R symmetric; their vectorized form keeps the strict upper triangle in
row-major order (i < j, i outer), which is the one ordering used for golden
files, checkpoints, and relevance maps.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    AsymmetryError,
    DimensionMismatchError,
    NonFiniteError,
    NonSquareError,
)

SYMMETRY_TOL = 1e-9


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array, rejecting NaN/Inf at the boundary."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return m


def check_square_symmetric(m: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise NonSquareError(f"expected square matrix, got shape {m.shape}")
    dev = np.max(np.abs(m - m.T)) if m.size else 0.0
    if dev > tol:
        raise AsymmetryError(f"matrix asymmetric beyond tolerance: max |m - m.T| = {dev:.3e}")
    return m


def upper_size(r: int) -> int:
    """Number of strict upper-triangle entries for an r x r matrix."""
    return r * (r - 1) // 2


def upper_indices(r: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays of the strict upper triangle in row-major order."""
    return np.triu_indices(r, k=1)


def pair_to_flat(i: int, j: int, r: int) -> int:
    """Flat index of connection (i, j), i != j, in the row-major upper-triangle order."""
    if i == j:
        raise DimensionMismatchError("diagonal entries have no flat index")
    a, b = (i, j) if i < j else (j, i)
    if not (0 <= a < b < r):
        raise DimensionMismatchError(f"connection ({i},{j}) out of range for r={r}")
    return a * (2 * r - a - 1) // 2 + (b - a - 1)


def flatten_upper(m: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Vectorize the strict upper triangle of a symmetric matrix.

    Returns D = R(R-1)/2 entries in row-major order. Rejects non-square or
    asymmetric (beyond ``tol``) inputs.
    """
    m = check_square_symmetric(m, tol)
    iu, ju = upper_indices(m.shape[0])
    return np.ascontiguousarray(m[iu, ju])


def unflatten_upper(v: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`flatten_upper`: symmetric matrix with zero diagonal."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != upper_size(r):
        raise DimensionMismatchError(
            f"expected {upper_size(r)} values for r={r}, got shape {v.shape}"
        )
    out = np.zeros((r, r), dtype=np.float64)
    iu, ju = upper_indices(r)
    out[iu, ju] = v
    out[ju, iu] = v
    return out


class RngStream:
    """Deterministic counter-based random stream with key-splitting.

    A stream is identified by a 64-bit root seed plus a tuple of split
    indices; the same (seed, path) produces the same draws on every platform
    (Philox bit generator keyed through ``numpy.random.SeedSequence``).
    Derived quantities (normals, Gumbel draws, shuffles) are built on the
    uniform-double stream only, so their sequences are pinned by the golden
    uniform sequence. A stream has a single owner; parallel work must use
    :meth:`split` children rather than sharing one stream.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seed=seq))

    def split(self, index: int) -> "RngStream":
        """Independent child stream; children with distinct indices never overlap."""
        return RngStream(self.seed, self.path + (int(index),))

    def uniform(self, n: int | None = None):
        """Uniform float64 draws in [0, 1); scalar when ``n`` is None."""
        if n is None:
            return float(self._gen.random())
        return self._gen.random(int(n))

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller on uniform pairs (no state carried across calls)."""
        m = (int(n) + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]: keeps log finite
        u2 = self._gen.random(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return z[: int(n)]

    def gumbel(self, n: int) -> np.ndarray:
        """Standard Gumbel(0,1) draws, -log(-log(U))."""
        u = np.maximum(self._gen.random(int(n)), np.finfo(np.float64).tiny)
        return -np.log(-np.log(u))

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self._gen.random() * n)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by the uniform stream."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = int(self._gen.random() * (i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct integers from range(n), in ascending order."""
        if not 0 <= k <= n:
            raise DimensionMismatchError(f"cannot draw {k} from {n}")
        idx = np.arange(n)
        for i in range(k):
            j = i + int(self._gen.random() * (n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return np.sort(idx[:k])
