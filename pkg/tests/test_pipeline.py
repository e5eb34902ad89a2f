import unittest
from dataclasses import replace
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

from adapters.lora import materialize
from config.settings import RunConfig
from connectors.adapter_file import read_adapter
from connectors.report_io import dumps, read_json
from simulation.pipeline import BASE, FUSED_CR, FUSED_NO_CR, run_pipeline, stage
from simulation.sweep import SweepPoint, cr_win_rate, sweep
from utils.errors import AccountingError, DataError, ParameterError, StageError


def small_config(**sections):
    cfg = RunConfig(seed=11).with_overrides(
        domains={"d_in": 8, "d_out": 8, "train_samples": 16, "test_samples": 16, "cross_samples": 16},
        model={"hidden": 10},
        lora={"rank": 2, "alpha": 4.0},
        train={"steps": 20},
    )
    return cfg.with_overrides(**sections) if sections else cfg


class TestRunPipeline(unittest.TestCase):
    def test_single_client_fusion_equals_local_model(self):
        cfg = RunConfig(seed=2, num_clients=1).with_overrides(
            domains={"d_in": 6, "d_out": 6, "train_samples": 12, "test_samples": 12},
            model={"hidden": 8},
            prune={"ratio": 0.0},
            lora={"rank": 2},
            train={"steps": 15},
            cr={"enabled": False},
        )
        report = run_pipeline(cfg).report
        self.assertEqual(report.cross_domain[FUSED_NO_CR], {})
        self.assertAlmostEqual(
            report.in_domain[FUSED_NO_CR]["domain0"], report.in_domain["local"]["domain0"], delta=1e-10
        )

    def test_conflict_values(self):
        report = run_pipeline(small_config()).report
        for key in ("pre", "post"):
            self.assertGreaterEqual(report.conflict[key], 0.0)
            self.assertLessEqual(report.conflict[key], 1.0)
        self.assertEqual(set(report.conflict["layers"]), {"up", "down"})
        self.assertEqual(set(report.cross_domain), {BASE, FUSED_NO_CR, FUSED_CR})
        self.assertEqual(set(report.cross_domain[FUSED_CR]), {"0-1"})

    def test_cr_disabled(self):
        report = run_pipeline(small_config(cr={"enabled": False})).report
        self.assertIn("pre", report.conflict)
        self.assertNotIn("post", report.conflict)
        self.assertNotIn(FUSED_CR, report.cross_domain)
        self.assertFalse(report.cr_enabled)

    def test_deterministic(self):
        first = dumps(run_pipeline(small_config()).report.to_dict(timings=False))
        again = dumps(run_pipeline(small_config()).report.to_dict(timings=False))
        self.assertEqual(first, again)
        parallel = dumps(run_pipeline(replace(small_config(), workers=2)).report.to_dict(timings=False))
        self.assertEqual(first.replace('"workers": 1', '"workers": 2'), parallel)

    def test_training_reduces_loss(self):
        for client in run_pipeline(small_config()).report.clients:
            self.assertLessEqual(client["final_loss"], client["initial_loss"])
            self.assertEqual(client["steps"], 20)

    def test_stage_error_names_stage(self):
        with self.assertRaises(StageError) as ctx:
            run_pipeline(small_config(eval={"hardness_floor": 1e6}))
        self.assertEqual(ctx.exception.stage, "generate")
        self.assertIsInstance(ctx.exception.__cause__, DataError)

    def test_ffa_clients_share_frozen_factor(self):
        result = run_pipeline(small_config(fusion={"method": "ffa"}))
        first, second = result.clients
        for name in ("up", "down"):
            self.assertEqual(first.adapters[name].A, second.adapters[name].A)
            self.assertNotEqual(first.adapters[name].B, second.adapters[name].B)

    def test_fedsa(self):
        report = run_pipeline(small_config(fusion={"method": "fedsa"})).report
        self.assertTrue(np.isfinite(report.cross_mean(FUSED_CR)))

    def test_three_clients(self):
        report = run_pipeline(replace(small_config(), num_clients=3)).report
        self.assertEqual(sorted(report.cross_domain[BASE]), ["0-1", "0-2", "1-2"])
        self.assertEqual(len(report.clients), 3)

    def test_outputs_written(self):
        with TemporaryDirectory() as td:
            out = Path(td)
            result = run_pipeline(small_config(), out_dir=out)
            for rel in (
                "prune_map.json",
                "conflict_report.json",
                "report.json",
                "adapters/client0/up.lcra",
                "adapters/client1/down.lcra",
                "fused/up.lcra",
                "fused/down.lcra",
            ):
                self.assertTrue((out / rel).is_file(), rel)
            stored = read_adapter(out / "fused" / "down.lcra")
            np.testing.assert_allclose(
                materialize(stored.adapter).values, result.fused[FUSED_CR]["down"].values, atol=1e-10
            )
            report = read_json(out / "report.json")
        self.assertIn("timings", report)
        self.assertEqual(report["seed"], 11)

    def test_single_layer_with_pruned_outputs(self):
        result = run_pipeline(small_config(model={"topology": "single"}, prune={"ratio": 0.5}))
        rows = result.prune_map.output_rows
        self.assertEqual(len(rows), 4)
        for client in result.report.clients:
            self.assertLessEqual(client["final_loss"], client["initial_loss"])
        dropped = [i for i in range(8) if i not in rows]
        for recovered in result.recovered:
            update = materialize(recovered["proj"]).values
            self.assertEqual(update.shape, (8, 8))
            np.testing.assert_array_equal(update[dropped], 0.0)
        for model in (FUSED_NO_CR, FUSED_CR):
            self.assertTrue(np.isfinite(result.report.cross_mean(model)))
        self.assertEqual(sorted(result.report.in_domain["local"]), ["domain0", "domain1"])

    def test_conflict_not_raised_by_resolution(self):
        for cfg in (small_config(), small_config(model={"topology": "single"}, prune={"ratio": 0.5})):
            conflict = run_pipeline(cfg).report.conflict
            self.assertLessEqual(conflict["post"], conflict["pre"] + 1e-12)
            for layer in conflict["layers"].values():
                self.assertLessEqual(layer["post"], layer["pre"] + 1e-12)

    def test_cross_mean_needs_tasks(self):
        cfg = small_config(cr={"enabled": False})
        report = run_pipeline(replace(cfg, num_clients=1)).report
        with self.assertRaises(AccountingError):
            report.cross_mean(BASE)


class TestStage(unittest.TestCase):
    def test_records_timing_and_wraps(self):
        timings = {}
        with self.assertRaises(StageError) as ctx:
            with stage("fuse", timings):
                raise ValueError("boom")
        self.assertEqual(ctx.exception.stage, "fuse")
        self.assertIn("fuse", timings)


class TestSweep(unittest.TestCase):
    def test_small_grid(self):
        result = sweep(small_config(train={"steps": 10}), ratios=(0.2, 0.6), seeds=range(2))
        self.assertEqual(len(result.points), 4)
        summary = result.summary()
        self.assertEqual(sorted(summary), ["0.2", "0.6"])
        for row in summary.values():
            self.assertGreaterEqual(row["cr_win_rate"], 0.0)
            self.assertLessEqual(row["cr_win_rate"], 1.0)
        self.assertEqual(len(result.at(0.6)), 2)

    def test_win_rate(self):
        points = [
            SweepPoint(0.2, 0, cross_no_cr=1.0, cross_cr=0.5, conflict_pre=0.3, conflict_post=0.1),
            SweepPoint(0.2, 1, cross_no_cr=1.0, cross_cr=1.0, conflict_pre=0.3, conflict_post=0.1),
        ]
        self.assertEqual(cr_win_rate(points), 0.5)
        self.assertEqual(points[0].improvement, 0.5)
        with self.assertRaises(AccountingError):
            cr_win_rate([])

    def test_bad_arguments(self):
        with self.assertRaises(ParameterError):
            sweep(small_config(), ratios=())
        with self.assertRaises(ParameterError):
            sweep(replace(small_config(), num_clients=1), seeds=range(1))


if __name__ == "__main__":
    unittest.main()
