"""OBM weight band, its difference coefficients and the u/v vectors.

The weight table is never stored densely. ``w(l, j)`` is evaluated from the
number of length-``b`` windows that cover both ``l`` and ``j``:

    w(l, j) = c * #{i : max(1, l-b+1) <= i <= min(j, n-b+1)} / (b (n-b+1))

with ``c = 1`` on the diagonal and ``c = 2`` below it. Indices outside
``1 <= j <= l <= n`` evaluate to 0, which makes every difference family total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import GeometryInvalid, IndexOutOfRange, RegimeViolation

FAMILIES = ("d10", "d01", "d11", "dm")
# |2 w(l,l) - w(l,l-1)| <= EDGE_CONST / (b (n-b+1)); the bound is attained in the interior
EDGE_CONST = 2


@dataclass(frozen=True)
class BatchGeometry:
    n: int
    b: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.b) != self.b:
            raise GeometryInvalid("n and b_n must be integers")
        if not 1 <= self.b <= self.n:
            raise GeometryInvalid(f"need 1 <= b_n <= n, got n={self.n}, b_n={self.b}")

    @property
    def m(self) -> int:
        """Number of overlapping batches, ``n - b + 1``."""
        return self.n - self.b + 1

    @property
    def theorem_regime(self) -> bool:
        return self.n >= 2 * self.b + 1

    @classmethod
    def default(cls, n: int) -> "BatchGeometry":
        return cls(n, max(1, math.ceil(math.sqrt(n))))


class ObmWeights:
    """Implicit OBM weight table for one :class:`BatchGeometry`.

    With ``exact=True`` every value is a :class:`fractions.Fraction`.
    """

    def __init__(self, geometry: BatchGeometry, exact: bool = False):
        self.geometry = geometry
        self.exact = exact
        self.n = geometry.n
        self.b = geometry.b
        self._den = geometry.b * geometry.m

    def __repr__(self):
        return f"ObmWeights(n={self.n}, b={self.b}, exact={self.exact})"

    @property
    def band(self) -> int:
        """Largest lag ``l - j`` carrying a nonzero weight."""
        return self.b - 1

    def _count(self, L, J):
        L = np.asarray(L, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        c = np.minimum(J, self.geometry.m) - np.maximum(1, L - self.b + 1) + 1
        valid = (J >= 1) & (J <= L) & (L <= self.n)
        return np.where(valid, np.maximum(c, 0), 0) * np.where(L == J, 1, 2)

    def at(self, L, J) -> np.ndarray:
        """Vectorised ``w(L, J)``, zero outside the lower triangle."""
        num = self._count(L, J)
        if not self.exact:
            return num / self._den
        out = np.empty(num.shape, dtype=object)
        out.flat[:] = [Fraction(int(x), self._den) for x in num.ravel()]
        return out

    def w(self, l: int, j: int):
        """Total scalar weight: 0 outside ``1 <= j <= l <= n``."""
        num = int(self._count(l, j))
        return Fraction(num, self._den) if self.exact else num / self._den

    def weight(self, l: int, j: int):
        if not 1 <= j <= l <= self.n:
            raise IndexOutOfRange(f"w({l}, {j}) needs 1 <= j <= l <= {self.n}")
        return self.w(l, j)

    def delta_at(self, family: str, L, J):
        L = np.asarray(L, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        at = self.at
        if family == "d10":
            return at(L, J) - at(L - 1, J)
        if family == "d01":
            return at(L, J) - at(L, J - 1)
        if family == "d11":
            return at(L, J) - at(L, J - 1) - at(L - 1, J) + at(L - 1, J - 1)
        if family == "dm":
            return at(L, L - 1) + at(L - 1, L - 2) - at(L, L - 2) - 2 * at(L - 1, L - 1)
        raise ValueError(f"unknown coefficient family {family!r}")

    def delta(self, family: str, l: int, j: int):
        if family not in FAMILIES:
            raise ValueError(f"unknown coefficient family {family!r}")
        if not 1 <= j <= l <= self.n:
            raise IndexOutOfRange(f"{family}({l}, {j}) needs 1 <= j <= l <= {self.n}")
        if family == "d11" and l < 2:
            raise IndexOutOfRange("d11 needs l >= 2")
        if family == "dm" and (j != l or l < 2):
            raise IndexOutOfRange("dm is defined on the diagonal for l >= 2")
        v = self.delta_at(family, l, j)
        return v.item() if hasattr(v, "item") else v

    def dense(self) -> np.ndarray:
        L, J = np.meshgrid(np.arange(1, self.n + 1), np.arange(1, self.n + 1), indexing="ij")
        return self.at(L, J)

    def diagonal(self) -> np.ndarray:
        idx = np.arange(1, self.n + 1)
        return self.at(idx, idx)


class DenseWeights:
    """Arbitrary lower-triangular weight table with the same interface as :class:`ObmWeights`."""

    def __init__(self, table):
        table = np.asarray(table)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise GeometryInvalid("weight table must be square")
        self.table = np.tril(table)
        self.n = table.shape[0]
        self.exact = table.dtype == object
        nz = np.argwhere(self.table != 0)
        self.band = int((nz[:, 0] - nz[:, 1]).max()) if len(nz) else 0

    def at(self, L, J):
        L = np.asarray(L, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        valid = (J >= 1) & (J <= L) & (L <= self.n)
        out = self.table[np.where(valid, L - 1, 0), np.where(valid, J - 1, 0)]
        return np.where(valid, out, 0)

    def w(self, l, j):
        return self.at(l, j).item()

    def weight(self, l, j):
        if not 1 <= j <= l <= self.n:
            raise IndexOutOfRange(f"w({l}, {j}) needs 1 <= j <= l <= {self.n}")
        return self.w(l, j)

    delta_at = ObmWeights.delta_at

    def diagonal(self):
        return np.diag(self.table).copy()


def window_matrix(geometry: BatchGeometry, exact: bool = False) -> np.ndarray:
    """The ``(n-b+1) x n`` sliding-window averaging matrix ``B``."""
    n, b, m = geometry.n, geometry.b, geometry.m
    B = np.zeros((m, n), dtype=object if exact else float)
    for i in range(m):
        B[i, i:i + b] = Fraction(1, b) if exact else 1.0 / b
    return B


def brute_force_table(geometry: BatchGeometry, exact: bool = False) -> np.ndarray:
    """Lower-triangular weights from ``(b/m) B^T B``, strict lower part doubled."""
    B = window_matrix(geometry, exact)
    scale = Fraction(geometry.b, geometry.m) if exact else geometry.b / geometry.m
    BtB = B.T.dot(B) * scale
    out = np.tril(BtB, -1) * 2 + np.diag(np.diag(BtB))
    if exact:
        out[np.triu_indices(geometry.n, 1)] = 0
    return out


def piecewise_weight(geometry: BatchGeometry, l: int, j: int) -> float:
    """Case-by-case OBM weight formulas; valid for ``n >= 2b - 2``."""
    n, b, m = geometry.n, geometry.b, geometry.m
    if n < 2 * b - 2:
        raise RegimeViolation(f"piecewise weights need n >= 2b-2 (n={n}, b={b})")
    if not 1 <= j <= l <= n:
        raise IndexOutOfRange(f"w({l}, {j}) needs 1 <= j <= l <= {n}")
    den = b * m
    if l == j:
        if l <= b - 1:
            return l / den
        if l <= m:
            return 1.0 / m
        return (n - l + 1) / den
    if l < b:
        return 2.0 * j / den
    if j < l - b + 1:
        return 0.0
    if l <= m:
        return 2.0 * (b - (l - j)) / den
    return 2.0 * (min(j, m) - l + b) / den


def uv_vectors(geometry: BatchGeometry) -> tuple[np.ndarray, np.ndarray]:
    """``v = B^T 1 / (n-b+1)`` and ``u = 1/n - v``.

    ``v_l`` is the number of windows covering ``l`` over ``b (n-b+1)``, i.e.
    the same expression as the diagonal weight.
    """
    n, b, m = geometry.n, geometry.b, geometry.m
    ell = np.arange(1, n + 1)
    cover = np.minimum(ell, m) - np.maximum(1, ell - b + 1) + 1
    v = cover / (b * m)
    return 1.0 / n - v, v


def diag_square_sum(geometry: BatchGeometry) -> float:
    """Closed form of ``sum_l w(l,l)^2``, valid for ``n >= 2 b``."""
    n, b, m = geometry.n, geometry.b, geometry.m
    if n < 2 * b:
        raise RegimeViolation(f"diag_square_sum needs n >= 2 b_n (n={n}, b_n={b})")
    return ((b - 1) * (2 * b - 1) / (3 * b) + (n - 2 * b + 2)) / m ** 2


def diag_square_sum_exact(geometry: BatchGeometry) -> Fraction:
    n, b, m = geometry.n, geometry.b, geometry.m
    if n < 2 * b:
        raise RegimeViolation(f"diag_square_sum needs n >= 2 b_n (n={n}, b_n={b})")
    return (Fraction((b - 1) * (2 * b - 1), 3 * b) + (n - 2 * b + 2)) / m ** 2


def mart_edge_bounds(geometry: BatchGeometry, l: int, exact: bool = False):
    """``(|w(l,l-1) - w(l-1,l-1) - w(l,l)|, |2 w(l,l) - w(l,l-1)|)``.

    Both are at most ``2 / (b (n-b+1))``; see ``EDGE_CONST``.
    """
    if not 2 <= l <= geometry.n:
        raise IndexOutOfRange(f"mart_edge_bounds needs 2 <= l <= {geometry.n}")
    W = ObmWeights(geometry, exact=exact)
    first = W.w(l, l - 1) - W.w(l - 1, l - 1) - W.w(l, l)
    second = 2 * W.w(l, l) - W.w(l, l - 1)
    return abs(first), abs(second)


def total_variation(vec) -> float:
    """``|x_1| + |x_n| + sum |x_{k+1} - x_k|``."""
    x = np.asarray(vec, dtype=float)
    if x.size == 0:
        return 0.0
    return float(abs(x[0]) + abs(x[-1]) + np.abs(np.diff(x)).sum())


def band_rows(weights: ObmWeights):
    """Yield ``(l, j, w, d10, d01, d11)`` over the nonzero band ``l - b < j <= l``."""
    for l in range(1, weights.n + 1):
        J = np.arange(max(1, l - weights.b + 1), l + 1)
        L = np.full_like(J, l)
        w = weights.at(L, J)
        d10 = weights.delta_at("d10", L, J)
        d01 = weights.delta_at("d01", L, J)
        d11 = weights.delta_at("d11", L, J)
        for row in zip(L, J, w, d10, d01, d11):
            yield (int(row[0]), int(row[1])) + tuple(row[2:])
