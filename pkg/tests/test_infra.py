import json
import math
import tempfile
import unittest
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.errors import SpecValidationError
from src.core.settings import AppSettings
from src.domain.reports import Estimate, ExperimentReport
from src.infra.spec_file import dump_spec, load_spec, parse_spec, save_spec
from src.infra.tree_dump import dump_tree, load_tree, parse_tree, save_tree
from src.infra.writers import ResultJSONEncoder, write_manifest, write_records, write_report
from src.services import envspec
from tests.trees import grown, hand_tree

SYM2_TEXT = """
# symmetric two-point environment
environment.name = sym2
environment.kind = two_point
environment.q = 2:1.0
environment.weights = 0.2679491924311228:0.9330127018922193, 3.7320508075688776:0.0669872981077807
environment.ellipticity = true
environment.epsilon0 = 0.2679491924311228
environment.N0 = 2
"""


class TestSpecFile(unittest.TestCase):
    def test_round_trip(self) -> None:
        for spec in (
            envspec.calibrate_two_point(),
            envspec.calibrate_two_point(symmetric=False),
            envspec.calibrate_lognormal(),
            envspec.flat_spec({0: 0.3, 3: 0.7}),
        ):
            self.assertEqual(parse_spec(dump_spec(spec)), spec, msg=spec.name)

    def test_hand_written_file(self) -> None:
        spec = parse_spec(SYM2_TEXT)
        self.assertEqual(spec.kind, "two_point")
        self.assertEqual(spec.offspring, ((2, 1.0),))
        self.assertFalse(spec.calibrated)
        self.assertTrue(spec.ellipticity)
        self.assertEqual(spec.N0, 2)

    def test_save_and_load(self) -> None:
        spec = envspec.calibrate_lognormal()
        with tempfile.TemporaryDirectory() as tmp:
            path = save_spec(spec, Path(tmp) / "nested" / "gauss2.spec")
            self.assertTrue(path.exists())
            self.assertEqual(load_spec(path), spec)

    def test_errors(self) -> None:
        with self.assertRaises(SpecValidationError):
            parse_spec("environment.kind = two_point\nenvironment.q = 2:1.0\n")
        with self.assertRaises(SpecValidationError):
            parse_spec(SYM2_TEXT + "environment.ellipticity = maybe\n")
        with self.assertRaises(SpecValidationError):
            parse_spec(SYM2_TEXT.replace("2:1.0", "2:0.7, 3:0.2"))
        with self.assertRaises(SpecValidationError):
            parse_spec(SYM2_TEXT.replace("environment.q = 2:1.0", "environment.q = 2"))
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(SpecValidationError):
                load_spec(Path(tmp) / "missing.spec")


class TestTreeDump(unittest.TestCase):
    def _assert_same_tree(self, a, b) -> None:
        ra, rb = a.records(), b.records()
        self.assertEqual(len(ra), len(rb))
        self.assertEqual(ra[1:], rb[1:])
        self.assertEqual(ra[0][:3], rb[0][:3])
        self.assertEqual(rb[0][4:], (0.0, -math.inf))
        self.assertEqual(a.frontier_ids(), b.frontier_ids())

    def test_round_trip(self) -> None:
        spec = envspec.calibrate_two_point()
        arena = grown(spec, 5, seed=3)
        back = parse_tree(spec, dump_tree(arena))
        self._assert_same_tree(arena, back)
        self.assertEqual(back.generation(5), arena.generation(5))

    def test_save_and_load_partial_tree(self) -> None:
        spec = envspec.flat_spec()
        arena = hand_tree(spec, [[0.5, 2.0], [], [1.0]])
        with tempfile.TemporaryDirectory() as tmp:
            path = save_tree(arena, Path(tmp) / "tree.txt")
            back = load_tree(spec, path)
        self._assert_same_tree(arena, back)
        self.assertEqual(back.frontier_ids(), [3])
        self.assertEqual(list(back.children(1)), [])

    def test_bad_dumps(self) -> None:
        spec = envspec.flat_spec()
        with self.assertRaises(SpecValidationError):
            parse_tree(spec, "0 -1 0 nan 0.0 -inf\n1 0 1 1.0\n")
        non_contiguous = "\n".join(
            [
                "0 -1 0 nan 0.0 -inf",
                "1 0 1 1.0 0.0 0.0",
                "2 1 2 1.0 0.0 0.0",
                "3 0 1 1.0 0.0 0.0",
                "# frontier 2 3",
            ]
        )
        with self.assertRaises(SpecValidationError):
            parse_tree(spec, non_contiguous)
        with self.assertRaises(SpecValidationError):
            parse_tree(spec, "1 0 1 1.0 0.0 0.0\n")


class TestWriters(unittest.TestCase):
    def setUp(self) -> None:
        self.report = ExperimentReport(experiment="demo", spec="sym2", grid={"n": [10, 100]})
        for n, est in ((10, 1.5), (100, 2.5)):
            self.report.estimates.append(Estimate(check="K", params={"n": n}, estimate=est, stderr=0.1, samples=20))
        self.report.records = [{"replica": 0, "K": {"1": 2, "2": 3}}, {"replica": 1, "K": {"1": 1, "2": 4}}]
        self.report.add_verdict("demo_rule", True, "ok")

    def test_encoder(self) -> None:
        now = datetime(2024, 1, 2, 3, 4, 5, tzinfo=timezone.utc)
        payload = {
            "i": np.int64(3),
            "f": np.float32(0.5),
            "b": np.bool_(True),
            "a": np.arange(3),
            "t": (1, 2),
            "s": {7},
            "d": now,
            "m": self.report.verdicts[0],
        }
        out = json.loads(json.dumps(payload, cls=ResultJSONEncoder))
        self.assertEqual(out["i"], 3)
        self.assertEqual(out["f"], 0.5)
        self.assertIs(out["b"], True)
        self.assertEqual(out["a"], [0, 1, 2])
        self.assertEqual(out["s"], [7])
        self.assertEqual(out["d"], now.isoformat())
        self.assertEqual(out["m"]["rule"], "demo_rule")

    def test_write_report_csv(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_report(self.report, tmp, "csv")
            names = sorted(p.name for p in paths)
            self.assertEqual(names, ["demo.csv", "demo_records.csv", "demo_verdicts.json"])
            frame = pd.read_csv(Path(tmp) / "demo.csv")
            self.assertEqual(list(frame["estimate"]), [1.5, 2.5])
            records = pd.read_csv(Path(tmp) / "demo_records.csv")
            self.assertIn("K.2", records.columns)
            verdicts = json.loads((Path(tmp) / "demo_verdicts.json").read_text(encoding="utf-8"))
            self.assertTrue(verdicts["passed"])
            self.assertEqual(verdicts["verdicts"][0]["rule"], "demo_rule")

    def test_write_records_jsonl_keeps_nesting(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = write_records(self.report.records, Path(tmp) / "r.jsonl", "jsonl")
            rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        self.assertEqual(rows[1]["K"], {"1": 1, "2": 4})

    def test_empty_report_writes_only_verdicts(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_report(ExperimentReport(experiment="empty", spec="sym2"), tmp, "jsonl")
            self.assertEqual([p.name for p in paths], ["empty_verdicts.json"])

    def test_manifest(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            settings = AppSettings().with_overrides(out_dir=tmp, log_dir=tmp, master_seed=5)
            path = write_manifest(
                tmp,
                settings,
                "demo",
                {"n": 10, "zeta": float("nan")},
                envspec.calibrate_two_point(),
                [self.report],
            )
            manifest = json.loads(path.read_text(encoding="utf-8"))
        self.assertEqual(manifest["command"], "demo")
        self.assertIsNone(manifest["arguments"]["zeta"])
        self.assertEqual(manifest["seeds"]["master"], 5)
        self.assertEqual(manifest["verdicts"], {"demo": {"demo_rule": True}})
        self.assertEqual(manifest["spec"]["name"], "sym2")
        self.assertIn("numpy", manifest["versions"])


if __name__ == "__main__":
    unittest.main()
