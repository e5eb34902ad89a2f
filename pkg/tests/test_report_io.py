import json
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

from connectors.report_io import dumps, read_json, round_significant, strip_timings, write_report
from utils.errors import ArtifactIOError, FormatError


class TestReportIO(unittest.TestCase):
    def test_twelve_significant_digits(self):
        self.assertEqual(round_significant(1 / 3), 0.333333333333)
        self.assertEqual(round_significant(123456.7890123456), 123456.789012)
        self.assertEqual(round_significant(0.0), 0.0)

    def test_values_survive_a_parser(self):
        report = {"b": {"x": np.float64(2 / 3), "n": np.int64(4)}, "a": [0.1, True], "timings": {"train": 0.5}}
        with TemporaryDirectory() as td:
            path = Path(td) / "report.json"
            write_report(path, report)
            text = path.read_text()
            loaded = read_json(path)
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(loaded["b"]["x"], float(f"{2 / 3:.12g}"))
        self.assertEqual(loaded["b"]["n"], 4)
        self.assertEqual(loaded["a"], [0.1, True])
        self.assertEqual(strip_timings(loaded), {"a": [0.1, True], "b": {"n": 4, "x": 0.666666666667}})

    def test_key_order_is_deterministic(self):
        self.assertEqual(dumps({"z": 1, "a": {"y": 2, "b": 3}}), dumps({"a": {"b": 3, "y": 2}, "z": 1}))

    def test_objects_with_to_dict(self):
        class Thing:
            def to_dict(self):
                return {"value": 1.23456789012345}

        self.assertEqual(json.loads(dumps(Thing())), {"value": 1.23456789012})

    def test_read_errors(self):
        with TemporaryDirectory() as td:
            with self.assertRaises(ArtifactIOError):
                read_json(Path(td) / "missing.json")
            bad = Path(td) / "bad.json"
            bad.write_text("[1, 2]")
            with self.assertRaises(FormatError):
                read_json(bad)


if __name__ == "__main__":
    unittest.main()
