"""Serial Cholesky up/down-dating with scaled hyperbolic rotations.

Given the upper-triangular factor ``L`` of ``A = L^T L`` and an update vector
``v``, each row ``i`` produces a coefficient pair from the current pivot and
the (already rotated) ``v_i``::

    w   = sqrt(L_ii**2 + sigma * v_i**2)
    c_i = w / L_ii
    s_i = v_i / L_ii
    L_ii <- w

and every element to the right of the pivot is rotated in sequence::

    L_ij <- (L_ij + sigma * s_i * v_j) / c_i
    v_j  <- c_i * v_j - s_i * L_ij          # uses the new L_ij

Substituting gives ``v_j <- (L_ii*v_j - v_i*L_ij) / w`` in terms of the old
values, the usual residual after annihilating ``v_i``.

Two loop orders are provided. :func:`modify_b` walks rows (compute, then
rotate the rest of the row). :func:`modify_a` walks columns: column ``i``
first absorbs the rotations of rows ``0..i-1`` into ``L[:i, i]`` and ``v_i``,
then computes row ``i``'s pair from the rotated ``v_i``. Both orders perform
exactly the same scalar operations on the same operands, so their results
agree bit for bit.

All arithmetic is kept in the factor's precision and no operation is fused,
which is what makes the bitwise agreement between schedules hold.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_triangular

from .matrix import DenseMat, TriFactor, UpdateMat, check_same_precision, row_offsets


class Sigma(enum.IntEnum):
    UPDATE = 1
    DOWNDATE = -1

    @classmethod
    def parse(cls, text: str) -> "Sigma":
        key = text.strip().lower()
        if key in ("update", "up", "+1", "1", "+"):
            return cls.UPDATE
        if key in ("downdate", "down", "-1", "-"):
            return cls.DOWNDATE
        raise ValueError(f"unknown direction {text!r}")


class ModifyError(ArithmeticError):
    pass


class IndefiniteDowndate(ModifyError):
    """The downdated matrix is not positive definite (``L_ii**2 - v_i**2 <= 0``)."""

    def __init__(self, row: int, column: int = 0, batch: int | None = None):
        self.row = row
        self.column = column
        self.batch = batch
        where = f"row {row}, update column {column}"
        if batch is not None:
            where += f", batch {batch}"
        super().__init__(f"indefinite downdate at {where}")


class NonPositivePivot(ModifyError):
    def __init__(self, row: int, column: int = 0):
        self.row = row
        self.column = column
        super().__init__(f"non-positive pivot at row {row} (update column {column})")


class NotPositiveDefinite(ArithmeticError):
    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot})")


class AsymmetricInput(ValueError):
    pass


# counter slots shared by all numba loops
COMPUTES, APPLIES, READS, WRITES = range(4)

STATUS_OK, STATUS_INDEFINITE, STATUS_PIVOT = 0, 1, 2


@dataclass
class OpCounts:
    computes: int = 0
    applies: int = 0
    elem_reads: int = 0
    elem_writes: int = 0

    def add_raw(self, raw: np.ndarray) -> None:
        self.computes += int(raw[COMPUTES])
        self.applies += int(raw[APPLIES])
        self.elem_reads += int(raw[READS])
        self.elem_writes += int(raw[WRITES])

    def __iadd__(self, other: "OpCounts") -> "OpCounts":
        self.computes += other.computes
        self.applies += other.applies
        self.elem_reads += other.elem_reads
        self.elem_writes += other.elem_writes
        return self


@dataclass(eq=False)
class RotCoeffs:
    """Coefficient pairs, one row per matrix row and one column per update vector."""

    c: np.ndarray
    s: np.ndarray

    @classmethod
    def empty(cls, n: int, e: int, dtype) -> "RotCoeffs":
        return cls(np.zeros((n, e), dtype=dtype), np.zeros((n, e), dtype=dtype))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def e(self) -> int:
        return self.c.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, RotCoeffs)
            and np.array_equal(self.c, other.c)
            and np.array_equal(self.s, other.s)
            and self.c.dtype == other.c.dtype
        )


# -- scalar helpers -----------------------------------------------------------

def _scalars(*xs):
    dtype = np.result_type(*[np.asarray(x).dtype for x in xs])
    if dtype not in (np.float32, np.float64):
        dtype = np.dtype(np.float64)
    return [dtype.type(x) for x in xs]


def rot_compute(l_ii, v_i, sigma: Sigma):
    """Return ``(c, s, w)`` for pivot ``l_ii`` and update element ``v_i``."""
    l_ii, v_i = _scalars(l_ii, v_i)
    if not l_ii > 0:
        raise NonPositivePivot(0)
    sq = v_i * v_i
    w2 = l_ii * l_ii + sq if sigma > 0 else l_ii * l_ii - sq
    if not w2 > 0:
        raise IndefiniteDowndate(0)
    w = np.sqrt(w2)
    return w / l_ii, v_i / l_ii, w


def rot_apply(c, s, l_ij, v_j, sigma: Sigma):
    """Rotate one ``(L_ij, v_j)`` pair; returns the new pair."""
    c, s, l_ij, v_j = _scalars(c, s, l_ij, v_j)
    t = s * v_j
    l_new = (l_ij + t) / c if sigma > 0 else (l_ij - t) / c
    return l_new, c * v_j - s * l_new


# -- compiled loops -----------------------------------------------------------
# These take the packed buffer plus diagonal offsets and return a status code
# and the offending row; the Python wrappers turn that into exceptions.

@numba.njit(inline="always")
def _compute(lii, vi, sign):
    sq = vi * vi
    if sign > 0:
        w2 = lii * lii + sq
    else:
        w2 = lii * lii - sq
    w = np.sqrt(w2)
    return w2, w / lii, vi / lii, w


@numba.njit(inline="always")
def _apply(c, s, lij, vj, sign):
    t = s * vj
    if sign > 0:
        lnew = (lij + t) / c
    else:
        lnew = (lij - t) / c
    return lnew, c * vj - s * lnew


@numba.njit(nogil=True, cache=True)
def _modify_rows(L, off, v, sign, r0, r1, c_out, s_out, cnt):
    """Row-ordered pass restricted to the square block ``[r0, r1)``."""
    for i in range(r0, r1):
        d = off[i]
        lii = L[d]
        if not lii > 0:
            return STATUS_PIVOT, i
        w2, c, s, w = _compute(lii, v[i], sign)
        if not w2 > 0:
            return STATUS_INDEFINITE, i
        L[d] = w
        c_out[i] = c
        s_out[i] = s
        cnt[0] += 1
        cnt[2] += 2
        cnt[3] += 3
        for j in range(i + 1, r1):
            L[d + j - i], v[j] = _apply(c, s, L[d + j - i], v[j], sign)
        m = r1 - i - 1
        cnt[1] += m
        cnt[2] += 2 * m
        cnt[3] += 2 * m
    return STATUS_OK, -1


@numba.njit(nogil=True, cache=True)
def _modify_cols(L, off, v, sign, c_out, s_out, cnt):
    n = v.shape[0]
    for i in range(n):
        vi = v[i]
        cnt[2] += 1
        for j in range(i):
            p = off[j] + i - j
            L[p], vi = _apply(c_out[j], s_out[j], L[p], vi, sign)
        cnt[1] += i
        cnt[2] += 3 * i
        cnt[3] += i
        d = off[i]
        lii = L[d]
        v[i] = vi
        cnt[3] += 1
        if not lii > 0:
            return STATUS_PIVOT, i
        w2, c, s, w = _compute(lii, vi, sign)
        if not w2 > 0:
            return STATUS_INDEFINITE, i
        L[d] = w
        c_out[i] = c
        s_out[i] = s
        cnt[0] += 1
        cnt[2] += 1
        cnt[3] += 3
    return STATUS_OK, -1


def _raise_status(status: int, row: int, column: int = 0, batch: int | None = None) -> None:
    if status == STATUS_INDEFINITE:
        raise IndefiniteDowndate(row, column, batch)
    if status == STATUS_PIVOT:
        raise NonPositivePivot(row, column)


def _prepare(L: TriFactor, v, sigma) -> tuple[np.ndarray, int]:
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != L.n:
        raise ValueError(f"update vector must have length {L.n}")
    if v.dtype != L.data.dtype:
        raise TypeError("update vector and factor precision differ")
    return row_offsets(L.n), int(Sigma(sigma))


def _one_column(fn, L: TriFactor, v, sigma, counts: OpCounts | None):
    off, sign = _prepare(L, v, sigma)
    coeffs = RotCoeffs.empty(L.n, 1, L.data.dtype)
    raw = np.zeros(4, dtype=np.int64)
    c, s = coeffs.c[:, 0], coeffs.s[:, 0]
    if fn is _modify_rows:
        status, row = fn(L.data, off, v, sign, 0, L.n, c, s, raw)
    else:
        status, row = fn(L.data, off, v, sign, c, s, raw)
    if counts is not None:
        counts.add_raw(raw)
    _raise_status(status, row)
    return coeffs


def modify_a(L: TriFactor, v: np.ndarray, sigma: Sigma, counts: OpCounts | None = None) -> RotCoeffs:
    """Column-ordered rank-1 modification of ``L`` in place; ``v`` is overwritten.

    On :class:`IndefiniteDowndate` at row ``i`` the columns before ``i`` are
    final, the above-diagonal part of column ``i`` has been rotated and
    ``L_ii`` together with everything right of column ``i`` is untouched.
    """
    return _one_column(_modify_cols, L, v, sigma, counts)


def modify_b(L: TriFactor, v: np.ndarray, sigma: Sigma, counts: OpCounts | None = None) -> RotCoeffs:
    """Row-ordered rank-1 modification of ``L`` in place; ``v`` is overwritten.

    On :class:`IndefiniteDowndate` at row ``i`` the rows before ``i`` are
    final and rows ``i..n-1`` are untouched.
    """
    return _one_column(_modify_rows, L, v, sigma, counts)


def modify_rank_k(L: TriFactor, V: UpdateMat, sigma: Sigma, counts: OpCounts | None = None) -> RotCoeffs:
    """Apply the ``k`` columns of ``V`` one after another (row ordering).

    ``V`` is overwritten with the rotated residuals. Failures carry the update
    column and row of the first indefinite pivot.
    """
    if V.n != L.n:
        raise ValueError(f"V has {V.n} rows, factor has order {L.n}")
    check_same_precision(L, V)
    off, sign = row_offsets(L.n), int(Sigma(sigma))
    coeffs = RotCoeffs.empty(L.n, V.k, L.data.dtype)
    raw = np.zeros(4, dtype=np.int64)
    cols = V.columns
    try:
        for e in range(V.k):
            status, row = _modify_rows(L.data, off, cols[e], sign, 0, L.n, coeffs.c[:, e], coeffs.s[:, e], raw)
            _raise_status(status, row, e)
    finally:
        if counts is not None:
            counts.add_raw(raw)
    return coeffs


# -- full factorization oracle -----------------------------------------------

@numba.njit(cache=True)
def _factor_block(a):
    """In-place right-looking factorization of the upper triangle of ``a``."""
    b = a.shape[0]
    for p in range(b):
        d = a[p, p]
        if not d > 0:
            return p
        r = np.sqrt(d)
        a[p, p] = r
        for j in range(p + 1, b):
            a[p, j] = a[p, j] / r
        for i in range(p + 1, b):
            x = a[p, i]
            for j in range(i, b):
                a[i, j] = a[i, j] - x * a[p, j]
    return -1


def chol_factor(A: DenseMat, block: int = 128) -> TriFactor:
    """Upper Cholesky factor of a symmetric positive definite matrix.

    Right-looking by blocks of ``block`` columns: factor the diagonal block,
    solve for the block row to its right, subtract its Gram matrix from the
    trailing submatrix.
    """
    a = A.to_array()
    if A.rows != A.cols:
        raise AsymmetricInput(f"matrix is {A.rows}x{A.cols}")
    if not np.array_equal(a, a.T):
        raise AsymmetricInput("matrix is not exactly symmetric")
    n = A.rows
    a = a.copy()
    # only the upper triangle is read; the lower one is scratch
    for k0 in range(0, n, block):
        k1 = min(k0 + block, n)
        bad = _factor_block(a[k0:k1, k0:k1])
        if bad >= 0:
            raise NotPositiveDefinite(k0 + bad)
        if k1 < n:
            u11 = a[k0:k1, k0:k1]
            a[k0:k1, k1:] = solve_triangular(u11, a[k0:k1, k1:], trans="T", lower=False, check_finite=False)
            u12 = a[k0:k1, k1:]
            a[k1:, k1:] -= u12.T @ u12
    return TriFactor.from_dense(np.triu(a))
