"""Pure-Python (numpy) fallback for the compiled kernels in ``_ckernels``.

Signatures and dtypes match the Cython module one-for-one. None of these call
into BLAS, so dense and sparse timings stay comparable.
"""
import numpy as np

BACKEND = "python"


def _products(values, col_idx, x):
    return values.astype(np.float64) * x[col_idx]


def spmv(values, col_idx, row_ptr, x):
    rows = len(row_ptr) - 1
    y = np.zeros(rows, dtype=np.float64)
    if len(values) == 0:
        return y
    starts = row_ptr[:-1]
    nonempty = np.flatnonzero(row_ptr[1:] > starts)
    # segments between consecutive non-empty row starts are exactly those rows
    y[nonempty] = np.add.reduceat(_products(values, col_idx, x), starts[nonempty])
    return y


def spmv_bias(values, col_idx, row_ptr, x, bias):
    y = spmv(values, col_idx, row_ptr, x)
    y += bias
    return y


def dense_matvec(w, x):
    return (w * x).sum(axis=1, dtype=np.float64)


def dense_matvec_bias(w, x, bias):
    y = dense_matvec(w, x)
    y += bias
    return y


def relu_inplace(y):
    np.maximum(y, 0.0, out=y)


def spmv_counted(values, col_idx, row_ptr, x):
    """Scalar reference loop. Returns ``(y, multiply_adds)``."""
    rows = len(row_ptr) - 1
    y = np.zeros(rows, dtype=np.float64)
    count = 0
    for i in range(rows):
        acc = 0.0
        for k in range(int(row_ptr[i]), int(row_ptr[i + 1])):
            acc += float(values[k]) * float(x[col_idx[k]])
            count += 1
        y[i] = acc
    return y, count
