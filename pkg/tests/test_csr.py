import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from sparsebench.csr import CsrInvariantError, CsrMatrix, csr_payload_bytes, from_csr, spmv, to_csr
from sparsebench.prune import compute_mask

from conftest import random_sparse


def test_hand_example():
    c = to_csr(np.array([[0, 2], [3, 0]]))
    assert c.values.tolist() == [2.0, 3.0]
    assert c.col_idx.tolist() == [1, 0]
    assert c.row_ptr.tolist() == [0, 1, 2]
    assert c.values.dtype == np.float32 and c.col_idx.dtype == np.int32 and c.row_ptr.dtype == np.int32


def test_zero_matrix():
    c = to_csr(np.zeros((3, 4)))
    assert c.nnz == 0
    assert c.row_ptr.tolist() == [0, 0, 0, 0]
    c.validate()


def test_spmv_examples():
    c = to_csr(np.array([[0, 2], [3, 0]]))
    assert spmv(c, np.ones(2)).tolist() == [2.0, 3.0]
    assert spmv(c, np.zeros(2)).tolist() == [0.0, 0.0]
    x = np.array([0.5, -1.25, 3.0])
    np.testing.assert_array_equal(spmv(to_csr(np.eye(3)), x), x)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(to_csr(np.eye(3)), np.ones(4))


def test_roundtrip_65_percent(rng):
    a = random_sparse(rng, 40, 30, 0.65)
    np.testing.assert_array_equal(from_csr(to_csr(a)), a)


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=9),
                  elements=st.sampled_from([0.0, 0.0, 0.0, 1.5, -2.0, 0.25])))
def test_roundtrip_property(a):
    c = to_csr(a).validate()
    np.testing.assert_array_equal(from_csr(c), a)
    assert c.nnz == np.count_nonzero(a)
    assert c.payload_bytes() == 8 * c.nnz + 4 * (a.shape[0] + 1)


def test_payload_formula_at_65_percent(rng):
    for r, cc in [(16, 49), (128, 16), (64, 128), (3, 64)]:
        w = rng.standard_normal((r, cc))
        w *= compute_mask(w, 0.65)
        nnz = r * cc - int(np.floor(0.65 * r * cc + 0.5))
        assert to_csr(w).payload_bytes() == nnz * 8 + (r + 1) * 4


def test_128_square_at_65_percent(rng):
    # 16384 weights, round(0.65 * 16384) = 10650 pruned, nnz = 5734
    w = rng.standard_normal((128, 128))
    w *= compute_mask(w, 0.65)
    c = to_csr(w)
    assert c.nnz == 5734
    assert c.payload_bytes() == 5734 * 8 + 129 * 4 == 46388
    assert c.payload_bytes() / (128 * 128 * 4) <= 0.75


def _bad(values, col_idx, row_ptr, shape):
    return CsrMatrix(np.asarray(values, np.float32), np.asarray(col_idx, np.int32),
                     np.asarray(row_ptr, np.int32), shape)


@pytest.mark.parametrize("m", [
    _bad([1, 2], [1, 0], [0, 2], (1, 2)),        # columns out of order within a row
    _bad([1, 2], [0, 0], [0, 2], (1, 2)),        # duplicate column
    _bad([1, 0], [0, 1], [0, 2], (1, 2)),        # stored zero
    _bad([1], [5], [0, 1], (1, 2)),              # column out of range
    _bad([1], [0], [0, 2], (1, 2)),              # row_ptr does not end at nnz
    _bad([1, 2], [0, 1], [0, 2, 1, 2], (3, 2)),  # decreasing row_ptr
    _bad([np.nan], [0], [0, 1], (1, 2)),
])
def test_invariant_violations(m):
    with pytest.raises(CsrInvariantError):
        m.validate()


def test_row_boundaries_allow_column_reset():
    _bad([1, 2, 3], [1, 0, 1], [0, 1, 3], (2, 2)).validate()


def test_payload_helper():
    assert csr_payload_bytes(100, 3500) == 28404
