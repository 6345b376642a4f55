"""Compressed sparse row storage for pruned weight matrices."""
from dataclasses import dataclass

import numpy as np

from . import kernels


class CsrInvariantError(ValueError):
    """A CSR triple violates the storage invariants."""


@dataclass(frozen=True)
class CsrMatrix:
    values: np.ndarray   # float32, nnz
    col_idx: np.ndarray  # int32, nnz
    row_ptr: np.ndarray  # int32, rows + 1
    shape: tuple

    @property
    def nnz(self):
        return int(self.values.shape[0])

    @property
    def rows(self):
        return int(self.shape[0])

    @property
    def cols(self):
        return int(self.shape[1])

    def payload_bytes(self):
        """Bytes taken by values (f32), column indices (u32) and row pointers (u32)."""
        return csr_payload_bytes(self.rows, self.nnz)

    def validate(self):
        rows, cols = self.shape
        if self.values.dtype != np.float32 or self.col_idx.dtype != np.int32 or self.row_ptr.dtype != np.int32:
            raise CsrInvariantError("CSR arrays must be float32 values with int32 indices")
        if self.values.ndim != 1 or self.col_idx.shape != self.values.shape:
            raise CsrInvariantError("values and col_idx must be 1-D arrays of equal length")
        if self.row_ptr.shape != (rows + 1,):
            raise CsrInvariantError(f"row_ptr has length {self.row_ptr.shape[0]}, expected {rows + 1}")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.nnz:
            raise CsrInvariantError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise CsrInvariantError("row_ptr must be non-decreasing")
        if self.nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= cols:
                raise CsrInvariantError("column index out of range")
            # strictly increasing within a row: every step up except at row boundaries
            step = np.diff(self.col_idx.astype(np.int64))
            boundary = np.zeros(self.nnz - 1, dtype=bool)
            starts = self.row_ptr[1:-1]
            starts = starts[(starts > 0) & (starts < self.nnz)]
            boundary[starts - 1] = True
            if np.any((step <= 0) & ~boundary):
                raise CsrInvariantError("col_idx must be strictly increasing within each row")
            if np.any(self.values == 0):
                raise CsrInvariantError("explicit zero stored in CSR values")
            if not np.all(np.isfinite(self.values)):
                raise CsrInvariantError("non-finite value stored in CSR values")
        return self

    def to_dense(self):
        return from_csr(self)


def csr_payload_bytes(rows, nnz):
    return nnz * 8 + (rows + 1) * 4


def to_csr(dense):
    a = np.asarray(dense)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    a = a.astype(np.float32)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    rows, cols = np.nonzero(a)  # row-major order, columns ascending within a row
    counts = np.bincount(rows, minlength=a.shape[0])
    row_ptr = np.zeros(a.shape[0] + 1, dtype=np.int32)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(
        values=np.ascontiguousarray(a[rows, cols], dtype=np.float32),
        col_idx=cols.astype(np.int32),
        row_ptr=row_ptr,
        shape=(int(a.shape[0]), int(a.shape[1])),
    )


def from_csr(c):
    out = np.zeros(c.shape, dtype=np.float32)
    rows = np.repeat(np.arange(c.rows), np.diff(c.row_ptr))
    out[rows, c.col_idx] = c.values
    return out


def spmv(m, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (m.cols,):
        raise ValueError(f"vector length {x.shape[0] if x.ndim else 0} does not match {m.cols} columns")
    return kernels.spmv(m.values, m.col_idx, m.row_ptr, x)
