# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for CSR and naive dense matrix-vector products.

Weights are float32 (the storage dtype of the model files); activations and
accumulators are float64.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def spmv(const float[::1] values, const int[::1] col_idx, const int[::1] row_ptr,
         const double[::1] x):
    cdef Py_ssize_t rows = row_ptr.shape[0] - 1
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, k
    cdef double acc
    with nogil:
        for i in range(rows):
            acc = 0.0
            for k in range(row_ptr[i], row_ptr[i + 1]):
                acc += values[k] * x[col_idx[k]]
            y[i] = acc
    return out


def spmv_bias(const float[::1] values, const int[::1] col_idx, const int[::1] row_ptr,
              const double[::1] x, const float[::1] bias):
    cdef Py_ssize_t rows = row_ptr.shape[0] - 1
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, k
    cdef double acc
    with nogil:
        for i in range(rows):
            acc = bias[i]
            for k in range(row_ptr[i], row_ptr[i + 1]):
                acc += values[k] * x[col_idx[k]]
            y[i] = acc
    return out


def dense_matvec(const float[:, ::1] w, const double[::1] x):
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1]
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(rows):
            acc = 0.0
            for j in range(cols):
                acc += w[i, j] * x[j]
            y[i] = acc
    return out


def dense_matvec_bias(const float[:, ::1] w, const double[::1] x, const float[::1] bias):
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1]
    out = np.empty(rows, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(rows):
            acc = bias[i]
            for j in range(cols):
                acc += w[i, j] * x[j]
            y[i] = acc
    return out


def relu_inplace(double[::1] y):
    cdef Py_ssize_t i
    with nogil:
        for i in range(y.shape[0]):
            if y[i] < 0.0:
                y[i] = 0.0
