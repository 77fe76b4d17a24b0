"""Compressed sparse row storage, triplet assembly and MatrixMarket I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TripletBuffer",
    "CsrMatrix",
    "from_triplets",
    "matvec",
    "inf_norm",
    "identity",
    "from_dense",
    "read_matrix_market",
    "write_matrix_market",
]


class TripletBuffer:
    """Growable list of ``(row, col, value)`` entries; duplicates are summed on conversion."""

    def __init__(self):
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, row, col, value):
        self._rows.append(np.atleast_1d(np.asarray(row, dtype=np.int64)).ravel())
        self._cols.append(np.atleast_1d(np.asarray(col, dtype=np.int64)).ravel())
        self._vals.append(np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel())

    def extend(self, entries):
        entries = list(entries)
        if entries:
            r, c, v = zip(*entries)
            self.add(r, c, v)

    def arrays(self):
        if not self._rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), np.zeros(0)
        return (np.concatenate(self._rows), np.concatenate(self._cols),
                np.concatenate(self._vals))

    def __len__(self):
        return sum(r.size for r in self._rows)


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray = field(repr=False)
    col_idx: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        for a in (self.row_ptr, self.col_idx, self.values):
            a.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))

    def to_triplets(self) -> TripletBuffer:
        buf = TripletBuffer()
        buf.add(self.row_indices(), self.col_idx, self.values)
        return buf

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def to_scipy(self):
        import scipy.sparse as sp
        return sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=self.shape)

    def with_values(self, values) -> CsrMatrix:
        """Same sparsity pattern, new values."""
        values = np.array(values, dtype=np.float64)
        if values.shape != (self.nnz,):
            raise ValueError(f"expected {self.nnz} values, got {values.shape}")
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx, values)

    def transpose(self) -> CsrMatrix:
        buf = TripletBuffer()
        buf.add(self.col_idx, self.row_indices(), self.values)
        return from_triplets(buf, self.n_cols, self.n_rows)

    def same_pattern(self, other: CsrMatrix) -> bool:
        return (self.shape == other.shape
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx))

    def is_structurally_symmetric(self) -> bool:
        return self.n_rows == self.n_cols and self.same_pattern(self.transpose())

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        r = self.row_indices()
        on = r == self.col_idx
        d[r[on]] = self.values[on]
        return d

    def norm_inf(self) -> float:
        """Maximum absolute row sum."""
        if self.nnz == 0:
            return 0.0
        return float(np.max(np.bincount(self.row_indices(), weights=np.abs(self.values),
                                        minlength=self.n_rows)))

    def submatrix(self, index) -> CsrMatrix:
        """Principal submatrix ``A[index][:, index]`` keeping the stored pattern."""
        index = np.asarray(index, dtype=np.int64)
        sel, local_cols = self.submatrix_selector(index)
        rows = self.row_indices()[sel]
        local_of = np.full(self.n_rows, -1, dtype=np.int64)
        local_of[index] = np.arange(index.size)
        ptr = np.zeros(index.size + 1, dtype=np.int64)
        np.add.at(ptr, local_of[rows] + 1, 1)
        return CsrMatrix(index.size, index.size, np.cumsum(ptr), local_cols,
                         self.values[sel].copy())

    def submatrix_selector(self, index):
        """Positions into ``values`` and local column ids of ``A[index][:, index]``.

        ``index`` must be sorted; the selection can be reused to pull new
        values out of any matrix with the same pattern.
        """
        index = np.asarray(index, dtype=np.int64)
        if index.size and np.any(np.diff(index) <= 0):
            raise ValueError("submatrix index must be strictly increasing")
        local_of = np.full(self.n_cols, -1, dtype=np.int64)
        local_of[index] = np.arange(index.size)
        starts, stops = self.row_ptr[index], self.row_ptr[index + 1]
        lens = stops - starts
        pos = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(lens.sum())
        lc = local_of[self.col_idx[pos]]
        keep = lc >= 0
        return pos[keep], lc[keep]


def _check_dim(n, name):
    if int(n) != n or n < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {n!r}")
    return int(n)


def from_triplets(buf, n_rows: int, n_cols: int) -> CsrMatrix:
    """Assemble a :class:`CsrMatrix`, summing duplicate entries.

    ``buf`` is a :class:`TripletBuffer` or a ``(rows, cols, values)`` tuple of
    arrays. Explicit zeros are kept so the pattern depends on positions only.
    """
    n_rows, n_cols = _check_dim(n_rows, "n_rows"), _check_dim(n_cols, "n_cols")
    if isinstance(buf, TripletBuffer):
        rows, cols, vals = buf.arrays()
    else:
        rows, cols, vals = (np.asarray(a).ravel() for a in buf)
        rows, cols = rows.astype(np.int64), cols.astype(np.int64)
        vals = vals.astype(np.float64)
    if not (rows.size == cols.size == vals.size):
        raise ValueError("triplet arrays have different lengths")
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                      or cols.min() < 0 or cols.max() >= n_cols):
        raise ValueError("triplet index out of range for a "
                         f"{n_rows}x{n_cols} matrix")
    key = rows * max(n_cols, 1) + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    starts = np.flatnonzero(first)
    summed = np.add.reduceat(vals[order], starts) if key.size else np.zeros(0)
    ukey = key[starts]
    r = ukey // max(n_cols, 1)
    ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(ptr, r + 1, 1)
    return CsrMatrix(n_rows, n_cols, np.cumsum(ptr), ukey % max(n_cols, 1), summed)


def matvec(A: CsrMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise ValueError(f"dimension mismatch: matrix is {A.n_rows}x{A.n_cols}, "
                         f"vector has shape {x.shape}")
    return np.bincount(A.row_indices(), weights=A.values * x[A.col_idx],
                       minlength=A.n_rows).astype(np.float64)


def inf_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.max(np.abs(x))) if x.size else 0.0


def identity(n: int) -> CsrMatrix:
    idx = np.arange(n, dtype=np.int64)
    return CsrMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))


def from_dense(a, keep_zeros: bool = False) -> CsrMatrix:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    r, c = (np.indices(a.shape).reshape(2, -1) if keep_zeros else np.nonzero(a))
    return from_triplets((r, c, a[r, c]), *a.shape)


def write_matrix_market(path, A: CsrMatrix, comment: str = "") -> None:
    """Write ``A`` as a real general coordinate MatrixMarket file."""
    lines = ["%%MatrixMarket matrix coordinate real general"]
    lines += [f"% {c}" for c in comment.splitlines()]
    lines.append(f"{A.n_rows} {A.n_cols} {A.nnz}")
    rows = A.row_indices() + 1
    lines += [f"{i} {j} {v!r}" for i, j, v in zip(rows.tolist(), (A.col_idx + 1).tolist(),
                                                  A.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path) -> CsrMatrix:
    """Read a coordinate MatrixMarket file (real/integer/pattern, general/symmetric)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 5 or header[0] != "%%MatrixMarket" or header[2] != "coordinate":
            raise ValueError(f"{path}: not a coordinate MatrixMarket file")
        field_, symmetry = header[3].lower(), header[4].lower()
        if field_ not in ("real", "integer", "pattern"):
            raise ValueError(f"{path}: unsupported field {field_!r}")
        line = fh.readline()
        while line.startswith("%") or not line.strip():
            line = fh.readline()
        m, n, nnz = (int(t) for t in line.split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    rows = data[:, 0].astype(np.int64) - 1
    cols = data[:, 1].astype(np.int64) - 1
    vals = np.ones(rows.size) if field_ == "pattern" else data[:, 2].astype(np.float64)
    if symmetry in ("symmetric", "skew-symmetric"):
        off = rows != cols
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, sign * vals[off]]))
    elif symmetry != "general":
        raise ValueError(f"{path}: unsupported symmetry {symmetry!r}")
    return from_triplets((rows, cols, vals), m, n)
