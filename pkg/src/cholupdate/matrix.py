"""Dense and packed-upper-triangular matrices, plus CWM1/CSV serialization.

The packed layout stores the upper triangle row by row: row ``i`` holds
columns ``i..n-1``, so element ``(i, j)`` with ``j >= i`` sits at
``i*n - i*(i-1)//2 + (j - i)``.
"""

from __future__ import annotations

import csv
import enum
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CWM1"
HEADER = struct.Struct("<4sBBH QQ")


class Precision(enum.Enum):
    SINGLE = "f32"
    DOUBLE = "f64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)

    @property
    def code(self) -> int:
        return 0 if self is Precision.SINGLE else 1

    @classmethod
    def from_code(cls, code: int) -> "Precision":
        if code == 0:
            return cls.SINGLE
        if code == 1:
            return cls.DOUBLE
        raise FormatError(f"unknown precision byte {code}")

    @classmethod
    def from_dtype(cls, dtype) -> "Precision":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.SINGLE
        if dtype == np.float64:
            return cls.DOUBLE
        raise PrecisionError(f"unsupported element type {dtype}")

    @classmethod
    def parse(cls, text: str) -> "Precision":
        key = text.lower()
        for p in cls:
            if key in (p.value, p.name.lower()):
                return p
        raise ValueError(f"unknown precision {text!r}")


class Layout(enum.IntEnum):
    DENSE = 0
    PACKED_UPPER = 1
    UPDATE = 2


class MatrixError(Exception):
    pass


class FormatError(MatrixError):
    """Bad magic, unknown header byte or malformed CSV."""


class TruncatedError(FormatError):
    pass


class ShapeError(FormatError):
    """Declared dimensions disagree with the payload length."""


class NaNError(FormatError):
    pass


class PrecisionError(MatrixError):
    pass


def packed_size(n: int) -> int:
    return n * (n + 1) // 2


def packed_index(i: int, j: int, n: int) -> int:
    if not 0 <= i <= j < n:
        raise IndexError(f"({i}, {j}) is not in the upper triangle of an order-{n} matrix")
    return i * n - i * (i - 1) // 2 + (j - i)


def row_offsets(n: int) -> np.ndarray:
    """Offset of each diagonal element in the packed buffer."""
    i = np.arange(n, dtype=np.int64)
    return i * n - i * (i - 1) // 2


def _as_buffer(data, dtype=None) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype)).ravel()
    Precision.from_dtype(arr.dtype)
    return arr


@dataclass(eq=False)
class DenseMat:
    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_buffer(self.data)
        if self.data.size != self.rows * self.cols:
            raise ShapeError(
                f"dense {self.rows}x{self.cols} needs {self.rows * self.cols} elements, got {self.data.size}"
            )

    @classmethod
    def from_array(cls, a, dtype=None) -> "DenseMat":
        a = np.asarray(a, dtype=dtype)
        if a.ndim != 2:
            raise ShapeError("dense matrix must be two dimensional")
        return cls(a.shape[0], a.shape[1], a)

    @property
    def precision(self) -> Precision:
        return Precision.from_dtype(self.data.dtype)

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.rows, self.cols)

    def copy(self) -> "DenseMat":
        return DenseMat(self.rows, self.cols, self.data.copy())

    def __eq__(self, other):
        return (
            isinstance(other, DenseMat)
            and (self.rows, self.cols) == (other.rows, other.cols)
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass(eq=False)
class TriFactor:
    """Upper-triangular Cholesky factor ``L`` with ``A = L^T L``, packed by rows."""

    n: int
    data: np.ndarray

    def __post_init__(self):
        self.data = _as_buffer(self.data)
        if self.data.size != packed_size(self.n):
            raise ShapeError(
                f"packed factor of order {self.n} needs {packed_size(self.n)} elements, got {self.data.size}"
            )

    @classmethod
    def from_dense(cls, u, dtype=None) -> "TriFactor":
        u = np.asarray(u, dtype=dtype)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ShapeError("factor must be square")
        n = u.shape[0]
        return cls(n, u[np.triu_indices(n)])

    @classmethod
    def identity(cls, n: int, precision: Precision = Precision.DOUBLE) -> "TriFactor":
        data = np.zeros(packed_size(n), dtype=precision.dtype)
        data[row_offsets(n)] = 1
        return cls(n, data)

    @property
    def precision(self) -> Precision:
        return Precision.from_dtype(self.data.dtype)

    def diagonal(self) -> np.ndarray:
        return self.data[row_offsets(self.n)]

    def get(self, i: int, j: int):
        if j < i:
            return self.data.dtype.type(0)
        return self.data[packed_index(i, j, self.n)]

    def row(self, i: int) -> np.ndarray:
        """View of columns ``i..n-1`` of row ``i``."""
        start = packed_index(i, i, self.n)
        return self.data[start:start + self.n - i]

    def to_dense(self) -> np.ndarray:
        u = np.zeros((self.n, self.n), dtype=self.data.dtype)
        u[np.triu_indices(self.n)] = self.data
        return u

    def copy(self) -> "TriFactor":
        return TriFactor(self.n, self.data.copy())

    def __eq__(self, other):
        return (
            isinstance(other, TriFactor)
            and self.n == other.n
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass(eq=False)
class UpdateMat:
    """The ``n x k`` modification matrix, stored one update vector after another."""

    n: int
    k: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = _as_buffer(self.data)
        if self.k < 1:
            raise ShapeError("update matrix needs at least one column")
        if self.data.size != self.n * self.k:
            raise ShapeError(
                f"update matrix {self.n}x{self.k} needs {self.n * self.k} elements, got {self.data.size}"
            )

    @classmethod
    def from_array(cls, v, dtype=None) -> "UpdateMat":
        v = np.asarray(v, dtype=dtype)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ShapeError("update matrix must be one or two dimensional")
        return cls(v.shape[0], v.shape[1], v.T)

    @property
    def precision(self) -> Precision:
        return Precision.from_dtype(self.data.dtype)

    @property
    def columns(self) -> np.ndarray:
        """``(k, n)`` view; row ``e`` is update vector ``e``."""
        return self.data.reshape(self.k, self.n)

    def column(self, e: int) -> np.ndarray:
        return self.columns[e]

    def to_array(self) -> np.ndarray:
        """The ``n x k`` matrix (a copy)."""
        return self.columns.T.copy()

    def copy(self) -> "UpdateMat":
        return UpdateMat(self.n, self.k, self.data.copy())

    def __eq__(self, other):
        return (
            isinstance(other, UpdateMat)
            and (self.n, self.k) == (other.n, other.k)
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


Matrix = DenseMat | TriFactor | UpdateMat


def check_same_precision(*mats) -> Precision:
    precs = {m.precision for m in mats}
    if len(precs) != 1:
        raise PrecisionError("operands mix single and double precision")
    return precs.pop()


def tri_transpose_mul(L: TriFactor) -> DenseMat:
    """Form ``C = L^T L`` as an exactly symmetric dense matrix."""
    u = L.to_dense()
    c = u.T @ u
    iu = np.triu_indices(L.n, 1)
    c.T[iu] = c[iu]
    return DenseMat.from_array(c)


# -- serialization -----------------------------------------------------------

def _layout_of(m) -> tuple[Layout, int, int]:
    if isinstance(m, DenseMat):
        return Layout.DENSE, m.rows, m.cols
    if isinstance(m, TriFactor):
        return Layout.PACKED_UPPER, m.n, m.n
    if isinstance(m, UpdateMat):
        return Layout.UPDATE, m.n, m.k
    raise TypeError(f"cannot serialize {type(m).__name__}")


def to_bytes(m) -> bytes:
    layout, rows, cols = _layout_of(m)
    head = HEADER.pack(MAGIC, m.precision.code, int(layout), 0, rows, cols)
    le = m.data.dtype.newbyteorder("<")
    return head + m.data.astype(le, copy=False).tobytes()


def from_bytes(buf: bytes):
    if len(buf) < HEADER.size:
        raise TruncatedError(f"header needs {HEADER.size} bytes, got {len(buf)}")
    magic, prec, layout, reserved, rows, cols = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if reserved != 0:
        raise FormatError("reserved header bytes must be zero")
    precision = Precision.from_code(prec)
    try:
        layout = Layout(layout)
    except ValueError:
        raise FormatError(f"unknown layout byte {layout}") from None
    if layout is Layout.PACKED_UPPER and rows != cols:
        raise ShapeError(f"packed-upper file declares {rows}x{cols}")
    count = packed_size(rows) if layout is Layout.PACKED_UPPER else rows * cols
    itemsize = precision.dtype.itemsize
    payload = memoryview(buf)[HEADER.size:]
    if len(payload) < count * itemsize:
        raise TruncatedError(f"payload holds {len(payload) // itemsize} elements, header implies {count}")
    if len(payload) != count * itemsize:
        raise ShapeError(f"payload holds {len(payload) / itemsize:g} elements, header implies {count}")
    data = np.frombuffer(payload, dtype=precision.dtype.newbyteorder("<")).astype(precision.dtype)
    if np.isnan(data).any():
        raise NaNError("payload contains NaN")
    if layout is Layout.DENSE:
        return DenseMat(rows, cols, data)
    if layout is Layout.PACKED_UPPER:
        return TriFactor(rows, data)
    return UpdateMat(rows, cols, data)


# CSV: a header row ``layout,precision,rows,cols`` then the matrix row by row.
# Packed factors are written as their full upper-triangular square (zeros below).

def _fmt(x, precision: Precision) -> str:
    return repr(float(x)) if precision is Precision.DOUBLE else repr(float(np.float32(x)))


def to_csv(m) -> str:
    layout, rows, cols = _layout_of(m)
    p = m.precision
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["layout", "precision", "rows", "cols"])
    w.writerow([layout.name.lower(), p.value, rows, cols])
    if isinstance(m, DenseMat):
        grid = m.to_array()
    elif isinstance(m, TriFactor):
        grid = m.to_dense()
    else:
        grid = m.to_array()
    for r in grid:
        w.writerow([_fmt(x, p) for x in r])
    return out.getvalue()


def from_csv(text: str):
    rows_ = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows_) < 2 or [h.strip().lower() for h in rows_[0]] != ["layout", "precision", "rows", "cols"]:
        raise FormatError("CSV matrix must start with header 'layout,precision,rows,cols'")
    try:
        layout = Layout[rows_[1][0].strip().upper()]
        precision = Precision.parse(rows_[1][1].strip())
        nrows, ncols = int(rows_[1][2]), int(rows_[1][3])
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"bad CSV descriptor row: {exc}") from None
    body = rows_[2:]
    if len(body) != nrows or any(len(r) != ncols for r in body):
        raise ShapeError(f"CSV body is not {nrows}x{ncols}")
    try:
        grid = np.array([[float(x) for x in r] for r in body], dtype=precision.dtype).reshape(nrows, ncols)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    if np.isnan(grid).any():
        raise NaNError("CSV contains NaN")
    if layout is Layout.DENSE:
        return DenseMat.from_array(grid)
    if layout is Layout.PACKED_UPPER:
        if nrows != ncols:
            raise ShapeError("packed-upper CSV must be square")
        return TriFactor.from_dense(grid)
    return UpdateMat.from_array(grid)


def mat_write(m, path) -> None:
    """Write ``m`` as CWM1 binary, or CSV when ``path`` ends in ``.csv``."""
    path = os.fspath(path)
    try:
        if path.endswith(".csv"):
            with open(path, "w", newline="") as fh:
                fh.write(to_csv(m))
        else:
            with open(path, "wb") as fh:
                fh.write(to_bytes(m))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write matrix to {path}: {exc.strerror}") from exc


def mat_read(path):
    path = os.fspath(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] == MAGIC:
        return from_bytes(buf)
    if path.endswith(".csv") or buf[:6] == b"layout":
        try:
            return from_csv(buf.decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"{path}: not UTF-8 CSV") from None
    return from_bytes(buf)
