import numpy as np
import pytest

from hgpool.tensor import (ShapeError, SparseMatrix, as_tensor, extract_submatrix,
                           matmul, row_l1_norm, spmm)

from conftest import path_adjacency


class TestMatmul:
    def test_identity_right(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(a, np.eye(2)), a)

    def test_identity_left(self):
        assert np.array_equal(matmul(np.eye(2), [[5.0], [7.0]]), [[5.0], [7.0]])

    def test_hand_product(self):
        assert matmul([[1.0, 2.0]], [[3.0], [4.0]]) == pytest.approx([[11.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestRowL1Norm:
    def test_zero_row(self):
        assert np.array_equal(row_l1_norm([[0.0, 0.0]]), [[0.0]])

    def test_column_input(self):
        assert np.array_equal(row_l1_norm([[-2.0], [2.0]]), [[2.0], [2.0]])

    def test_mixed_signs(self):
        assert np.array_equal(row_l1_norm([[1.0, -2.0, 3.0]]), [[6.0]])

    def test_always_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = rng.standard_normal((rng.integers(1, 8), rng.integers(1, 8)))
            assert row_l1_norm(m).min() >= 0.0


class TestSpmm:
    def test_all_zero_operand(self):
        s = SparseMatrix.zeros(3, 3)
        assert np.array_equal(spmm(s, np.ones((3, 2))), np.zeros((3, 2)))

    def test_identity(self):
        d = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(spmm(SparseMatrix.identity(3), d), d)

    def test_hand_product(self):
        s = SparseMatrix.from_dense([[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(spmm(s, [[1.0], [3.0]]), [[3.0], [1.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            spmm(SparseMatrix.identity(3), np.ones((2, 2)))

    def test_matches_dense_product(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            rows = int(rng.integers(1, 51))
            cols = int(rng.integers(1, 51))
            inner = int(rng.integers(1, 6))
            dense = rng.standard_normal((rows, cols))
            dense[rng.random((rows, cols)) < 0.6] = 0.0
            s = SparseMatrix.from_dense(dense)
            d = rng.standard_normal((cols, inner))
            assert np.abs(s.matmat(d) - dense @ d).max() < 1e-12

    def test_transposed_product_matches(self):
        rng = np.random.default_rng(8)
        dense = rng.standard_normal((6, 4))
        dense[rng.random((6, 4)) < 0.5] = 0.0
        s = SparseMatrix.from_dense(dense)
        d = rng.standard_normal((6, 3))
        assert np.abs(s.t_matmat(d) - dense.T @ d).max() < 1e-12


class TestExtractSubmatrix:
    def test_full_range_is_identity(self):
        s = path_adjacency(4)
        sub = extract_submatrix(s, np.arange(4))
        assert np.array_equal(sub.to_dense(), s.to_dense())

    def test_empty_index(self):
        sub = extract_submatrix(path_adjacency(3), [])
        assert sub.shape == (0, 0) and sub.nnz == 0

    def test_path_ends_become_disconnected(self):
        # dropping the middle of 0-1-2 leaves no edges between the ends
        sub = extract_submatrix(path_adjacency(3), [0, 2])
        assert sub.shape == (2, 2) and sub.nnz == 0

    def test_values_follow(self):
        dense = np.arange(16.0).reshape(4, 4)
        s = SparseMatrix.from_dense(dense)
        sub = s.extract_submatrix([1, 3])
        assert np.array_equal(sub.to_dense(), dense[np.ix_([1, 3], [1, 3])])

    def test_bad_indices(self):
        s = path_adjacency(3)
        with pytest.raises(IndexError):
            s.extract_submatrix([2, 0])
        with pytest.raises(IndexError):
            s.extract_submatrix([0, 5])
        with pytest.raises(IndexError):
            s.extract_submatrix([1, 1])

    def test_positions_point_back(self):
        rng = np.random.default_rng(3)
        dense = rng.standard_normal((8, 8))
        dense[rng.random((8, 8)) < 0.5] = 0.0
        s = SparseMatrix.from_dense(dense)
        pattern, pos = s.extract_positions([0, 2, 5, 7])
        assert np.array_equal(s.values[pos],
                              s.extract_submatrix([0, 2, 5, 7]).values)
        assert pattern.nnz == len(pos)


class TestSparseMatrix:
    def test_from_coo_sums_duplicates(self):
        s = SparseMatrix.from_coo(2, 2, [0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0])
        assert s.nnz == 2
        assert s.to_dense()[0, 1] == 3.0

    def test_from_coo_drops_zeros(self):
        s = SparseMatrix.from_coo(2, 2, [0, 1], [0, 1], [0.0, 2.0])
        assert s.nnz == 1

    def test_from_coo_duplicate_error_mode(self):
        with pytest.raises(ValueError):
            SparseMatrix.from_coo(2, 2, [0, 0], [1, 1], [1.0, 1.0], dedup="error")

    def test_sorted_column_invariant(self):
        s = SparseMatrix.from_coo(2, 3, [0, 0, 1], [2, 0, 1], [1.0, 2.0, 3.0])
        assert np.array_equal(s.col_indices, [0, 2, 1])
        assert np.array_equal(np.asarray(s.row_offsets), [0, 2, 3])

    def test_invariant_validation(self):
        with pytest.raises(ValueError):
            SparseMatrix(2, 2, [0, 2, 2], [1, 0], [1.0, 1.0])  # decreasing cols
        with pytest.raises(IndexError):
            SparseMatrix(1, 1, [0, 1], [3], [1.0])

    def test_transpose_round_trip(self):
        rng = np.random.default_rng(11)
        dense = rng.standard_normal((5, 7))
        dense[rng.random((5, 7)) < 0.5] = 0.0
        s = SparseMatrix.from_dense(dense)
        assert np.array_equal(s.transpose().to_dense(), dense.T)
        assert s.transpose().transpose() is s  # cached both ways

    def test_row_sums_and_diagonal(self):
        dense = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [4.0, 0.0, 5.0]])
        s = SparseMatrix.from_dense(dense)
        assert np.array_equal(s.row_sums(), dense.sum(axis=1))
        assert np.array_equal(s.diagonal(), np.diag(dense))

    def test_positions_in_superset(self):
        small = SparseMatrix.from_dense([[0.0, 1.0], [0.0, 2.0]])
        big = SparseMatrix.from_dense([[1.0, 1.0], [1.0, 1.0]])
        pos = small.positions_in(big)
        assert np.array_equal(big.values[pos], [1.0, 1.0])
        assert np.array_equal(pos, [1, 3])

    def test_positions_in_rejects_uncovered(self):
        small = SparseMatrix.from_dense([[1.0, 0.0], [0.0, 0.0]])
        big = SparseMatrix.from_dense([[0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            small.positions_in(big)

    def test_symmetry_check(self):
        assert path_adjacency(4).is_symmetric()
        assert not SparseMatrix.from_dense([[0.0, 1.0], [0.0, 0.0]]).is_symmetric()

    def test_pickling_drops_caches(self):
        import pickle
        s = path_adjacency(4)
        s.transpose()  # populate a cache entry
        clone = pickle.loads(pickle.dumps(s))
        assert np.array_equal(clone.to_dense(), s.to_dense())
        assert clone._cache == {}


class TestAsTensor:
    def test_one_dim_becomes_column(self):
        assert as_tensor([1.0, 2.0]).shape == (2, 1)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_tensor([[np.nan]])

    def test_rejects_higher_rank(self):
        with pytest.raises(ShapeError):
            as_tensor(np.zeros((2, 2, 2)))
