"""Dense tensors and CSR sparse matrices used throughout the package.

Dense values are plain 2-D float64 numpy arrays.  Sparse matrices are
immutable CSR triples (row offsets, sorted column indices, values) with no
explicitly stored zeros.  Products, extraction and transposition are
vectorized numpy over those arrays; derived matrices are cached on the
instance, which is safe because instances never mutate.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as _sp


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


def as_tensor(data, check_finite: bool = True) -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array (1-D becomes a column)."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 1-D or 2-D value, got ndim={arr.ndim}")
    if check_finite and arr.size and not np.isfinite(arr).all():
        raise ValueError("tensor contains NaN or Inf")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense matrix product with an explicit shape check."""
    a = as_tensor(a, check_finite=False)
    b = as_tensor(b, check_finite=False)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return a @ b


def row_l1_norm(m: np.ndarray) -> np.ndarray:
    """Per-row sum of absolute values, returned as an (n, 1) column."""
    m = as_tensor(m, check_finite=False)
    return np.abs(m).sum(axis=1, keepdims=True)


class SparseMatrix:
    """Immutable CSR matrix with sorted column indices and no stored zeros."""

    __slots__ = ("rows", "cols", "row_offsets", "col_indices", "values", "_cache")

    def __init__(self, rows, cols, row_offsets, col_indices, values,
                 _validate: bool = True):
        self.rows = int(rows)
        self.cols = int(cols)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.intp)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.intp)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self._cache: dict = {}
        if _validate:
            self._check_invariants()

    def _check_invariants(self):
        off, col, val = self.row_offsets, self.col_indices, self.values
        if off.shape != (self.rows + 1,):
            raise ShapeError("row_offsets length must be rows + 1")
        if off[0] != 0 or off[-1] != len(val) or np.any(np.diff(off) < 0):
            raise ValueError("row offsets must be non-decreasing and span the values")
        if len(col) != len(val):
            raise ShapeError("col_indices and values length mismatch")
        if len(col):
            if col.min() < 0 or col.max() >= self.cols:
                raise IndexError("column index out of range")
            # strictly increasing within each row: decreases allowed only at row starts
            dec = np.nonzero(np.diff(col) <= 0)[0] + 1
            if len(dec) and not np.isin(dec, off).all():
                raise ValueError("column indices must be strictly increasing per row")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, r, c, v, dedup: str = "sum") -> "SparseMatrix":
        """Build from coordinate triplets; duplicates are summed (or forbidden)."""
        r = np.asarray(r, dtype=np.intp).ravel()
        c = np.asarray(c, dtype=np.intp).ravel()
        v = np.asarray(v, dtype=np.float64).ravel()
        if not (len(r) == len(c) == len(v)):
            raise ShapeError("coordinate arrays must have equal length")
        if len(r) == 0:
            return cls.zeros(rows, cols)
        if r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols:
            raise IndexError("coordinate out of range")
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        first = np.empty(len(r), dtype=bool)
        first[0] = True
        np.not_equal(r[1:], r[:-1], out=first[1:])
        first[1:] |= c[1:] != c[:-1]
        if dedup == "error" and not first.all():
            raise ValueError("duplicate coordinates")
        starts = np.nonzero(first)[0]
        v = np.add.reduceat(v, starts)
        r, c = r[starts], c[starts]
        keep = v != 0.0
        r, c, v = r[keep], c[keep], v[keep]
        offsets = np.zeros(rows + 1, dtype=np.intp)
        np.cumsum(np.bincount(r, minlength=rows), out=offsets[1:])
        return cls(rows, cols, offsets, c, v, _validate=False)

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        arr = as_tensor(arr, check_finite=False)
        r, c = np.nonzero(arr)
        offsets = np.zeros(arr.shape[0] + 1, dtype=np.intp)
        np.cumsum(np.bincount(r, minlength=arr.shape[0]), out=offsets[1:])
        return cls(arr.shape[0], arr.shape[1], offsets, c, arr[r, c],
                   _validate=False)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n), _validate=False)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        return cls(rows, cols, np.zeros(rows + 1, dtype=np.intp), [], [],
                   _validate=False)

    # -- views --------------------------------------------------------------

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def scipy(self) -> _sp.csr_matrix:
        if "scipy" not in self._cache:
            self._cache["scipy"] = _sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets),
                shape=(self.rows, self.cols))
        return self._cache["scipy"]

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, aligned with col_indices/values."""
        if "row_ids" not in self._cache:
            self._cache["row_ids"] = np.repeat(
                np.arange(self.rows, dtype=np.intp), np.diff(self.row_offsets))
        return self._cache["row_ids"]

    def entry_keys(self) -> np.ndarray:
        """row * cols + col per stored entry; strictly increasing overall."""
        if "keys" not in self._cache:
            self._cache["keys"] = self.row_ids() * self.cols + self.col_indices
        return self._cache["keys"]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        if self.nnz:
            out[self.row_ids(), self.col_indices] = self.values
        return out

    def with_values(self, values) -> "SparseMatrix":
        """Same pattern, new values (zeros are kept; callers prune explicitly)."""
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeError("value array does not match pattern")
        return SparseMatrix(self.rows, self.cols, self.row_offsets,
                            self.col_indices, values, _validate=False)

    def row_sums(self) -> np.ndarray:
        if self.nnz == 0:
            return np.zeros(self.rows)
        return np.bincount(self.row_ids(), weights=self.values,
                           minlength=self.rows)

    def diagonal(self) -> np.ndarray:
        n = min(self.rows, self.cols)
        out = np.zeros(n)
        if self.nnz:
            keys = self.entry_keys()
            want = np.arange(n, dtype=np.intp) * (self.cols + 1)
            pos = np.searchsorted(keys, want)
            pos = np.minimum(pos, len(keys) - 1)
            hit = keys[pos] == want
            out[hit] = self.values[pos[hit]]
        return out

    def is_symmetric(self, tol: float = 0.0) -> bool:
        d = self.scipy() - self.scipy().T
        return d.nnz == 0 or np.abs(d.data).max() <= tol

    # -- operations ---------------------------------------------------------

    def _reduce_meta(self):
        meta = self._cache.get("reduce_meta")
        if meta is None:
            nz = np.diff(self.row_offsets) > 0
            meta = (nz, self.row_offsets[:-1][nz])
            self._cache["reduce_meta"] = meta
        return meta

    def matmat(self, dense: np.ndarray) -> np.ndarray:
        """Sparse x dense product."""
        dense = as_tensor(dense, check_finite=False)
        if self.cols != dense.shape[0]:
            raise ShapeError(f"spmm: inner dims differ, {self.shape} x {dense.shape}")
        out = np.zeros((self.rows, dense.shape[1]))
        if self.nnz:
            contrib = self.values[:, None] * dense[self.col_indices]
            nz, starts = self._reduce_meta()
            out[nz] = np.add.reduceat(contrib, starts, axis=0)
        return out

    def t_matmat(self, dense: np.ndarray) -> np.ndarray:
        """Transposed product self.T @ dense (used by backward rules)."""
        return self.transpose().matmat(dense)

    def transpose(self) -> "SparseMatrix":
        if "T" not in self._cache:
            order = np.argsort(self.col_indices, kind="stable")
            offsets = np.zeros(self.cols + 1, dtype=np.intp)
            if self.nnz:
                np.cumsum(np.bincount(self.col_indices, minlength=self.cols),
                          out=offsets[1:])
            t = SparseMatrix(self.cols, self.rows, offsets,
                             self.row_ids()[order], self.values[order],
                             _validate=False)
            t._cache["T"] = self
            self._cache["T"] = t
        return self._cache["T"]

    def _extract(self, idx: np.ndarray):
        """Shared core of submatrix extraction: new pattern + source positions."""
        starts = self.row_offsets[idx]
        lens = self.row_offsets[idx + 1] - starts
        total = int(lens.sum())
        row_of = np.repeat(np.arange(len(idx), dtype=np.intp), lens)
        within = np.arange(total, dtype=np.intp) - np.repeat(
            np.cumsum(lens) - lens, lens)
        pos = starts[row_of] + within
        cols_parent = self.col_indices[pos]
        j = np.searchsorted(idx, cols_parent)
        j = np.minimum(j, len(idx) - 1) if len(idx) else j
        keep = len(idx) and (idx[j] == cols_parent)
        if len(idx):
            new_cols = j[keep]
            new_rows = row_of[keep]
            kept_pos = pos[keep]
        else:
            new_cols = new_rows = kept_pos = np.empty(0, dtype=np.intp)
        offsets = np.zeros(len(idx) + 1, dtype=np.intp)
        if len(new_rows):
            np.cumsum(np.bincount(new_rows, minlength=len(idx)), out=offsets[1:])
        return offsets, new_cols, kept_pos

    def extract_submatrix(self, idx) -> "SparseMatrix":
        """Symmetric extraction result(r, c) = self(idx[r], idx[c])."""
        idx = _check_extract_idx(self, idx)
        offsets, cols, pos = self._extract(idx)
        return SparseMatrix(len(idx), len(idx), offsets, cols, self.values[pos],
                            _validate=False)

    def extract_positions(self, idx):
        """Like extract_submatrix, also returning each entry's source position."""
        idx = _check_extract_idx(self, idx)
        offsets, cols, pos = self._extract(idx)
        pattern = SparseMatrix(len(idx), len(idx), offsets, cols,
                               np.ones(len(cols)), _validate=False)
        return pattern, pos

    def positions_in(self, mask: "SparseMatrix") -> np.ndarray:
        """Position of each of self's entries inside mask's value array.

        Requires mask's pattern to be a superset of self's.
        """
        if self.shape != mask.shape:
            raise ShapeError("mask shape mismatch")
        if self.nnz == 0:
            return np.empty(0, dtype=np.intp)
        pos = np.searchsorted(mask.entry_keys(), self.entry_keys())
        if pos.max(initial=-1) >= mask.nnz or \
                np.any(mask.entry_keys()[pos] != self.entry_keys()):
            raise ValueError("mask pattern does not cover all stored entries")
        return pos

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"

    # derived-matrix caches are dropped on pickling and rebuilt on demand
    def __getstate__(self):
        return (self.rows, self.cols, self.row_offsets, self.col_indices,
                self.values)

    def __setstate__(self, state):
        self.rows, self.cols, self.row_offsets, self.col_indices, self.values = state
        self._cache = {}


def _check_extract_idx(m: SparseMatrix, idx) -> np.ndarray:
    if m.rows != m.cols:
        raise ShapeError("submatrix extraction requires a square matrix")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise IndexError("index list must be 1-D")
    if len(idx):
        if idx.min() < 0 or idx.max() >= m.rows:
            raise IndexError("extraction index out of range")
        if np.any(np.diff(idx) <= 0):
            raise IndexError("extraction indices must be strictly increasing")
    return idx


def spmm(s: SparseMatrix, d: np.ndarray) -> np.ndarray:
    """Sparse x dense product (free-function form of SparseMatrix.matmat)."""
    return s.matmat(d)


def extract_submatrix(s: SparseMatrix, idx) -> SparseMatrix:
    return s.extract_submatrix(idx)
