import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linalg.matrix import DenseMatrix, cosine, matmul
from utils.errors import DataError, ShapeError

finite = st.floats(min_value=-100, max_value=100, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 8), elements=finite)


class TestDenseMatrix(unittest.TestCase):
    def test_rejects_non_finite(self):
        with self.assertRaises(DataError):
            DenseMatrix.of([[1.0, float("nan")]])
        with self.assertRaises(DataError):
            DenseMatrix.of([[float("inf")]])

    def test_values_are_read_only(self):
        m = DenseMatrix.of([[1.0, 2.0]])
        with self.assertRaises(ValueError):
            m.values[0, 0] = 5.0

    def test_of_copies_input(self):
        src = np.array([[1.0, 2.0]])
        m = DenseMatrix.of(src)
        src[0, 0] = 9.0
        self.assertEqual(m.values[0, 0], 1.0)

    def test_row_major_data(self):
        m = DenseMatrix.from_rows([[1, 2, 3], [4, 5, 6]])
        self.assertEqual(m.data, (1.0, 2.0, 3.0, 4.0, 5.0, 6.0))
        self.assertEqual(len(m.data), m.rows * m.cols)

    def test_select(self):
        w = DenseMatrix.of(np.arange(9.0).reshape(3, 3))
        self.assertEqual(w.select(rows=[0, 2], cols=[1]), DenseMatrix.of([[1.0], [7.0]]))


class TestMatmul(unittest.TestCase):
    def test_identity(self):
        m = DenseMatrix.of([[1.5, -2.0], [3.0, 4.0]])
        self.assertEqual(matmul(DenseMatrix.identity(2), m), m)

    def test_outer_product(self):
        got = matmul(DenseMatrix.of([[1.0], [2.0]]), DenseMatrix.of([[3.0, 4.0]]))
        self.assertEqual(got, DenseMatrix.of([[3.0, 4.0], [6.0, 8.0]]))

    def test_annihilator(self):
        a = DenseMatrix.of([[1.0, 2.0], [3.0, 4.0]])
        self.assertEqual(a @ DenseMatrix.zeros(2, 3), DenseMatrix.zeros(2, 3))

    def test_shape_mismatch_reports_both_shapes(self):
        with self.assertRaises(ShapeError) as ctx:
            matmul(DenseMatrix.zeros(2, 3), DenseMatrix.zeros(2, 3))
        self.assertIn("(2x3)", str(ctx.exception))
        self.assertEqual(ctx.exception.shapes, ((2, 3), (2, 3)))


class TestCosine(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(cosine([1, 0], [0, 1]), 0.0)
        self.assertAlmostEqual(cosine([1, 1], [2, 2]), 1.0, places=12)
        self.assertEqual(cosine([1, 2], [0, 0]), 0.0)

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            cosine([1, 2, 3], [1, 2])

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_symmetric_and_scale_invariant(self, data):
        u = data.draw(vectors)
        v = data.draw(arrays(np.float64, u.shape, elements=finite))
        t = data.draw(st.floats(min_value=0.01, max_value=100))
        c = cosine(u, v)
        self.assertTrue(-1.0 <= c <= 1.0)
        self.assertAlmostEqual(c, cosine(v, u), places=12)
        if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
            self.assertAlmostEqual(c, cosine(t * u, v), places=9)


if __name__ == "__main__":
    unittest.main()
