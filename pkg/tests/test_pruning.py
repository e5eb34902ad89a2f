import unittest

import numpy as np

from linalg.matrix import DenseMatrix
from linalg.regression import mse
from pruning.backbone import CHAIN, Backbone
from pruning.importance import GroupImportance, group_importance
from pruning.selection import (
    PARAMETER_TABLE,
    LayerPrune,
    PruneMap,
    apply_prune,
    pruning_ratio,
    select_groups,
)
from utils.errors import AccountingError, MapError, ParameterError
from utils.types import Batch


def importance(scores):
    n = len(scores)
    return GroupImportance(scores=tuple(float(s) for s in scores), topology="single", layer_shapes=(("proj", n, 2),))


class TestGroupImportance(unittest.TestCase):
    def test_zero_weights(self):
        bb = Backbone.single(DenseMatrix.zeros(3, 2))
        self.assertEqual(group_importance(bb).scores, (0.0, 0.0, 0.0))
        calib = Batch.of(np.ones((2, 4)), np.ones((3, 4)))
        self.assertEqual(group_importance(bb, calib).scores, (0.0, 0.0, 0.0))

    def test_magnitude_fallback_is_row_norm(self):
        bb = Backbone.single(DenseMatrix.of([[1.0, 0.0], [0.0, -3.0]]))
        self.assertEqual(group_importance(bb).scores, (1.0, 3.0))

    def test_chain_magnitude_is_product_of_norms(self):
        up = np.array([[3.0, 4.0], [0.0, 1.0]])
        down = np.array([[1.0, 0.0], [0.0, 2.0]])
        scores = group_importance(Backbone.chain(DenseMatrix.of(up), DenseMatrix.of(down))).scores
        np.testing.assert_allclose(scores, [5.0 * 1.0, 1.0 * 2.0])

    def test_first_order_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(3, 2))
        x = rng.normal(size=(2, 1))
        y = rng.normal(size=(3, 1))
        h = 1e-5
        grad = np.zeros_like(w)
        for i in range(3):
            for j in range(2):
                plus, minus = w.copy(), w.copy()
                plus[i, j] += h
                minus[i, j] -= h
                grad[i, j] = (mse(plus @ x, y) - mse(minus @ x, y)) / (2 * h)
        expected = np.abs(grad * w).sum(axis=1)
        got = group_importance(Backbone.single(DenseMatrix.of(w)), Batch.of(x, y)).scores
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_unknown_loss(self):
        with self.assertRaises(ParameterError):
            group_importance(Backbone.single(DenseMatrix.identity(2)), loss="xent")


class TestSelectGroups(unittest.TestCase):
    def test_ratio_zero_keeps_everything(self):
        pm = select_groups(importance([3, 1, 2, 4]), 0.0)
        self.assertEqual(pm.layers[0].rows, (0, 1, 2, 3))

    def test_top_half(self):
        pm = select_groups(importance([3, 1, 2, 4]), 0.5)
        self.assertEqual(pm.layers[0].rows, (0, 3))

    def test_ties_keep_lower_index(self):
        self.assertEqual(select_groups(importance([1, 1, 2]), 2 / 3).layers[0].rows, (2,))
        self.assertEqual(select_groups(importance([1, 1, 2]), 1 / 3).layers[0].rows, (0, 2))

    def test_ratio_one_keeps_one_group(self):
        self.assertEqual(select_groups(importance([1, 5, 2]), 1.0).layers[0].rows, (1,))

    def test_ratio_out_of_range(self):
        with self.assertRaises(ParameterError):
            select_groups(importance([1, 2]), 1.5)

    def test_reselect_is_idempotent(self):
        imp = importance([5, 1, 3, 2, 4])
        kept = select_groups(imp, 0.4).layers[0].rows
        sub = importance([imp.scores[i] for i in kept])
        again = select_groups(sub, 0.0).layers[0].rows
        self.assertEqual(tuple(kept[i] for i in again), kept)


class TestApplyPrune(unittest.TestCase):
    def test_full_map_is_identity(self):
        bb = Backbone.single(DenseMatrix.of(np.arange(6.0).reshape(3, 2)))
        self.assertEqual(apply_prune(bb, PruneMap.identity(bb)).layer("proj"), bb.layer("proj"))

    def test_rows_and_cols(self):
        w = np.arange(9.0).reshape(3, 3)
        bb = Backbone.single(DenseMatrix.of(w))
        pm = PruneMap(layers=(LayerPrune("proj", (0, 2), (1,), 3, 3),))
        self.assertEqual(apply_prune(bb, pm).layer("proj"), DenseMatrix.of([[w[0, 1]], [w[2, 1]]]))
        self.assertEqual(pm.total_params_after, 2)

    def test_chain_coupling(self):
        rng = np.random.default_rng(0)
        bb = Backbone.chain(DenseMatrix.of(rng.normal(size=(4, 3))), DenseMatrix.of(rng.normal(size=(2, 4))))
        imp = GroupImportance(scores=(5.0, 1.0, 4.0, 0.5), topology=CHAIN, layer_shapes=(("up", 4, 3), ("down", 2, 4)))
        pm = select_groups(imp, 0.5)
        self.assertEqual(pm.layer("up").rows, (0, 2))
        self.assertEqual(pm.layer("down").cols, (0, 2))
        pruned = apply_prune(bb, pm)
        self.assertEqual(pruned.layer("up").shape, (2, 3))
        self.assertEqual(pruned.layer("down").shape, (2, 2))

    def test_output_rows(self):
        single = PruneMap(layers=(LayerPrune("proj", (0, 2), (1,), 3, 3),))
        self.assertEqual(single.output_rows, (0, 2))
        self.assertIsNone(PruneMap(layers=(LayerPrune("proj", (0, 1, 2), (1,), 3, 3),)).output_rows)
        imp = GroupImportance(scores=(5.0, 1.0, 4.0, 0.5), topology=CHAIN, layer_shapes=(("up", 4, 3), ("down", 2, 4)))
        self.assertIsNone(select_groups(imp, 0.5).output_rows)

        batch = Batch.of(np.arange(4.0).reshape(2, 2), np.arange(6.0).reshape(3, 2))
        kept = batch.select_outputs(single.output_rows)
        np.testing.assert_array_equal(kept.targets, [[0.0, 1.0], [4.0, 5.0]])
        np.testing.assert_array_equal(kept.inputs, batch.inputs)

    def test_broken_coupling_rejected(self):
        with self.assertRaises(MapError):
            PruneMap(
                layers=(LayerPrune("up", (0, 1), (0, 1, 2), 4, 3), LayerPrune("down", (0, 1), (0, 2), 2, 4)),
                topology=CHAIN,
            )

    def test_read_back_matches_source(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m, n = rng.integers(2, 8, size=2)
            w = rng.normal(size=(m, n))
            rows = tuple(sorted(rng.choice(m, size=rng.integers(1, m + 1), replace=False).tolist()))
            cols = tuple(sorted(rng.choice(n, size=rng.integers(1, n + 1), replace=False).tolist()))
            pruned = apply_prune(Backbone.single(DenseMatrix.of(w)), PruneMap(layers=(LayerPrune("proj", rows, cols, m, n),)))
            for i, r in enumerate(rows):
                for j, c in enumerate(cols):
                    self.assertEqual(pruned.layer("proj").values[i, j], w[r, c])

    def test_index_validation(self):
        with self.assertRaises(MapError):
            LayerPrune("proj", (0, 3), (0,), 3, 1)
        with self.assertRaises(MapError):
            LayerPrune("proj", (1, 1), (0,), 3, 1)
        with self.assertRaises(MapError):
            LayerPrune("proj", (), (0,), 3, 1)

    def test_map_dict_round_trip(self):
        pm = PruneMap(layers=(LayerPrune("proj", (0, 2), (1,), 3, 3),))
        self.assertEqual(PruneMap.from_dict(pm.to_dict()), pm)
        with self.assertRaises(MapError):
            PruneMap.from_dict({"layers": [{"name": "proj"}]})


class TestPruningRatio(unittest.TestCase):
    def test_reference_table(self):
        self.assertEqual(round(pruning_ratio(8_030_261_248, 3_976_728_576), 2), 0.50)
        self.assertAlmostEqual(pruning_ratio(8_030_261_248, 3_976_728_576), 0.5048, places=4)
        for exact, before, after in PARAMETER_TABLE.values():
            self.assertEqual(round(pruning_ratio(before, after), 2), exact)

    def test_bounds(self):
        self.assertEqual(pruning_ratio(100, 100), 0.0)
        self.assertEqual(pruning_ratio(100, 0), 1.0)
        with self.assertRaises(AccountingError):
            pruning_ratio(100, 101)
        with self.assertRaises(AccountingError):
            pruning_ratio(0, 0)

    def test_monotone(self):
        ratios = [pruning_ratio(1000, after) for after in range(1000, -1, -100)]
        self.assertEqual(ratios, sorted(ratios))


if __name__ == "__main__":
    unittest.main()
