"""Desk-scale directional checks over 20 seeds of the default configuration."""
import unittest

import numpy as np

from config.settings import RunConfig
from simulation.sweep import cr_win_rate, sweep


class TestDirectionalTrends(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.result = sweep(RunConfig(), ratios=(0.4, 0.6, 0.8), seeds=range(20))

    def test_cr_beats_plain_fedavg(self):
        points = self.result.at(0.6)
        self.assertGreaterEqual(cr_win_rate(points), 0.7)
        self.assertLess(np.mean([p.cross_cr for p in points]), np.mean([p.cross_no_cr for p in points]))

    def test_conflict_never_increases(self):
        for p in self.result.at(0.6):
            self.assertLessEqual(p.conflict_post, p.conflict_pre + 1e-12, f"seed {p.seed}")

    def test_gain_grows_with_pruning(self):
        summary = self.result.summary()
        self.assertGreaterEqual(summary["0.8"]["mean_improvement"], summary["0.4"]["mean_improvement"])


if __name__ == "__main__":
    unittest.main()
