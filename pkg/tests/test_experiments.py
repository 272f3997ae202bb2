import unittest

import pytest

from src.core.errors import EllipticityRequiredError
from src.core.rng import SeedPath
from src.services import clusters, envspec
from src.services.tree import TreeArena
from src.services.experiments import (
    RunContext,
    _kstar_task,
    calibrate_report,
    cut_plan_report,
    ell_for,
    exact_check,
    grow_report,
    lefttail_experiment,
    miss_bound_experiment,
    reports_match,
    walk_experiment,
)


def _ctx(replicas: int = 4, threads: int = 1, seed: int = 101) -> RunContext:
    return RunContext(seed=SeedPath(seed, "tests"), replicas=replicas, threads=threads)


class TestCalibrate(unittest.TestCase):
    def test_builtins_pass(self) -> None:
        for spec in (envspec.calibrate_two_point(), envspec.calibrate_two_point(symmetric=False), envspec.calibrate_lognormal()):
            rep = calibrate_report(spec)
            self.assertTrue(rep.verdict("calibration_exact").passed, msg=rep.verdict("calibration_exact").detail)
            checks = {e.check for e in rep.estimates}
            self.assertIn("psi(1)", checks)

    def test_uncalibrated_spec_has_no_verdict(self) -> None:
        rep = calibrate_report(envspec.flat_spec())
        self.assertEqual(rep.verdicts, [])
        self.assertTrue(rep.passed)


class TestGrowAndDeterminism(unittest.TestCase):
    def test_binary_martingale_is_one(self) -> None:
        rep = grow_report(envspec.calibrate_two_point(), 4, _ctx())
        w = [e for e in rep.estimates if e.check == "W_k"]
        self.assertEqual(len(w), 4)
        for e in w:
            self.assertAlmostEqual(e.estimate, 1.0, places=12)
        self.assertEqual(len(rep.records), 4 * 4)
        self.assertEqual(rep.resamples, 0)

    def test_same_seed_same_numbers(self) -> None:
        spec = envspec.calibrate_two_point(symmetric=False)
        a = grow_report(spec, 5, _ctx())
        b = grow_report(spec, 5, _ctx(threads=3))
        self.assertTrue(reports_match(a, b))
        c = grow_report(spec, 5, _ctx(seed=102))
        self.assertFalse(reports_match(a, c))

    def test_ell_for(self) -> None:
        self.assertEqual(ell_for(10.0, 0.0), 10)
        self.assertEqual(ell_for(10.0, 1.0), 100)
        self.assertEqual(ell_for(0.5, 1.0), 1)


class TestSmallExperiments(unittest.TestCase):
    def test_walk_by_returns(self) -> None:
        rep = walk_experiment(envspec.calibrate_two_point(), _ctx(replicas=3), n_returns=20, generations=(1, 2))
        self.assertTrue(rep.verdict("walker.recurrence").passed)
        self.assertEqual(len(rep.records), 3)
        self.assertEqual({e.check for e in rep.estimates}, {"M_mean"})

    def test_exact_check_without_monte_carlo(self) -> None:
        rep = exact_check(envspec.calibrate_two_point(), _ctx(), trees=3, depth=4, targets=3, mc_trees=0, walk_trees=0)
        self.assertTrue(rep.verdict("hitting_formulas.solver").passed)
        with self.assertRaises(KeyError):
            rep.verdict("quenched_mean")
        self.assertTrue(all(r["p_z_mc"] is None for r in rep.records))

    def test_lefttail_exact_anchor(self) -> None:
        rep = lefttail_experiment({1: 0.3, 2: 0.7}, [2, 3, 4], [0.0, 0.5], _ctx())
        self.assertTrue(rep.verdict("lefttail.anchor").passed)
        at_one = [e for e in rep.estimates if e.check == "P(Z_n<=threshold)" and e.params["kappa"] == 0.0 and e.params["n"] == 3]
        self.assertEqual(len(at_one), 1)
        self.assertAlmostEqual(at_one[0].estimate, 0.3**3, places=12)
        self.assertIn("exact", at_one[0].flags)

    def test_cut_plan_report_records_every_point(self) -> None:
        rep = cut_plan_report(envspec.calibrate_two_point(), [20.0, 40.0], 0.5, 0.1, 0.1)
        self.assertEqual(len(rep.records), 2)
        for row, ln in zip(rep.records, (20.0, 40.0)):
            plan = clusters.build_cut_plan(envspec.calibrate_two_point(), ln, 0.5, 0.1, 0.1)
            for key in ("case", "ell", "k_n", "r_n", "h_n", "feasible"):
                self.assertEqual(row[key], plan.as_dict()[key])
        self.assertEqual(rep.verdict("cut_plan.feasible_somewhere").passed, any(r["feasible"] for r in rep.records))

    def test_kstar_trees_are_redrawn_until_they_reach_ell(self) -> None:
        spec = envspec.calibrate_two_point(offspring={0: 0.3, 3: 0.7})
        out = [_kstar_task((spec, SeedPath(5, "kstar", 0, r), 6, 3.0, 10**6)) for r in range(30)]
        self.assertGreater(sum(r for _, _, r in out), 0)
        self.assertEqual(out[0], _kstar_task((spec, SeedPath(5, "kstar", 0, 0), 6, 3.0, 10**6)))
        for r in range(30):
            arena = TreeArena(spec, SeedPath(5, "kstar", 0, r).generator("tree"))
            for _ in range(out[r][2]):
                self.assertEqual(arena.accessible_count(3.0, 6, grow=True), 0)
                self.assertFalse(arena.survives_to(6))
                arena.resample("test")
            count = arena.accessible_count(3.0, 6, grow=True)
            self.assertEqual(count, out[r][0])
            self.assertTrue(count > 0 or arena.survives_to(6))

    def test_miss_bound_compares_walks_with_the_bound(self) -> None:
        rep = miss_bound_experiment(
            envspec.calibrate_two_point(), [2, 3], [10.0], _ctx(), calibration_trees=3, test_trees=2, walks=40, kappa=[1.0, 1.5]
        )
        names = {v.rule for v in rep.verdicts}
        self.assertEqual(names, {"miss_bound.empirical", "miss_bound.fitted", "miss_bound.analytic"})
        self.assertEqual({r["returns"] for r in rep.records}, {10, 32})
        self.assertEqual(len(rep.records), 2 * 2 * 2)
        for r in rep.records:
            self.assertEqual(r["walks"] + r["censored"], 40)
            self.assertTrue(0 <= r["held_mc"] <= r["nodes"])
        rates = [e for e in rep.estimates if e.check == "mc_miss_rate"]
        self.assertEqual(len(rates), 4)
        self.assertTrue(all(e.prediction is not None for e in rates))
        with self.assertRaises(EllipticityRequiredError):
            miss_bound_experiment(envspec.calibrate_lognormal(), [2], [10.0], _ctx())


@pytest.mark.slow
class TestWalkBySteps(unittest.TestCase):
    def test_root_local_time_rule(self) -> None:
        rep = walk_experiment(envspec.calibrate_two_point(), _ctx(replicas=10), steps=20000, generations=(1, 2, 4))
        checks = {e.check for e in rep.estimates}
        self.assertIn("root_local_time_above", checks)
        self.assertIn("Xstar_over_log3", checks)
        self.assertEqual(rep.censored, 0)


if __name__ == "__main__":
    unittest.main()
