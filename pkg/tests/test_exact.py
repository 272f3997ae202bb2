import math
import random
import unittest

import numpy as np

from src.core.errors import EllipticityRequiredError, NotAncestorError
from src.services import envspec, exact
from src.services.tree import ROOT
from tests.trees import grown, hand_tree

# root -> 1, 2; 1 -> 3, 4; 2 -> 5; 3 -> 6; 5 -> 7, 8
WEIGHTS = [[0.8, 1.7], [0.5, 2.0], [1.2], [0.9], [], [0.6, 1.5]]


class TestPathFormulas(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.flat_spec()
        self.arena = hand_tree(self.spec, WEIGHTS)

    def test_reduction(self) -> None:
        red = exact.path_reduction(self.arena, ROOT, 6)
        self.assertEqual(red.path, (ROOT, 1, 3, 6))
        v = [self.arena.V[u] for u in (1, 3, 6)]
        self.assertAlmostEqual(red.partial_sums[-1], sum(math.exp(x) for x in v), places=12)
        self.assertAlmostEqual(red.conductances[1], math.exp(-v[0]), places=12)
        with self.assertRaises(NotAncestorError):
            exact.path_reduction(self.arena, 2, 6)

    def test_root_hit_closed_form(self) -> None:
        a = self.arena
        # p_6 = 1 / ((A1 + A2 + 1) (e^{V(1)} + e^{V(3)} + e^{V(6)}))
        total = math.exp(a.V[1]) + math.exp(a.V[3]) + math.exp(a.V[6])
        self.assertAlmostEqual(exact.root_excursion_hit(a, 6), 1.0 / ((0.8 + 1.7 + 1.0) * total), places=12)
        with self.assertRaises(ValueError):
            exact.root_excursion_hit(a, ROOT)

    def test_reduction_matches_solver(self) -> None:
        a = self.arena
        for z in range(1, len(a)):
            self.assertAlmostEqual(exact.root_excursion_hit(a, z), exact.solver_root_hit(a, z), delta=1e-10)

    def test_path_hitting_matches_solver(self) -> None:
        a = self.arena
        for top, z in ((ROOT, 6), (1, 6), (2, 8), (ROOT, 7)):
            for start in ("child", "parent"):
                closed = exact.path_hitting(a, top, z, start=start)
                solved = exact.solver_path_hitting(a, top, z, start=start)
                self.assertAlmostEqual(closed, solved, delta=1e-10)
        with self.assertRaises(NotAncestorError):
            exact.solver_path_hitting(a, 1, 8)

    def test_generation_hits(self) -> None:
        ids, p = exact.generation_hits(self.arena, 2)
        self.assertEqual(ids, [3, 4, 5])
        for z, pz in zip(ids, p):
            self.assertAlmostEqual(pz, exact.root_excursion_hit(self.arena, z), places=12)

    def test_quenched_mean(self) -> None:
        a = self.arena
        _, p = exact.generation_hits(a, 2)
        self.assertEqual(exact.quenched_mean_K(a, 0, 2), 0.0)
        for n in (1, 10, 1000):
            direct = sum(1.0 - (1.0 - x) ** n for x in p)
            self.assertAlmostEqual(exact.quenched_mean_K(a, n, 2), direct, places=10)
        self.assertAlmostEqual(exact.quenched_mean_K(a, 1e9, 2), 3.0, places=6)

    def test_deeper_potential_lowers_hit(self) -> None:
        heavier = [row[:] for row in WEIGHTS]
        heavier[1] = [0.25, 2.0]
        other = hand_tree(self.spec, heavier)
        for z in (3, 6):
            self.assertLess(exact.root_excursion_hit(other, z), exact.root_excursion_hit(self.arena, z))
        self.assertAlmostEqual(exact.root_excursion_hit(other, 4), exact.root_excursion_hit(self.arena, 4), places=14)

    def test_monte_carlo_agrees(self) -> None:
        a = hand_tree(envspec.calibrate_two_point(), WEIGHTS)
        rng = random.Random(17)
        for z in (1, 3):
            p, se, censored = exact.mc_root_hit(a, z, excursions=3000, rng=rng, step_cap=5000)
            target = exact.root_excursion_hit(a, z)
            self.assertLessEqual(abs(p - target), 5.0 * se + censored / 3000.0 + 1e-3)


class TestOnGrownTrees(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.calibrate_two_point()
        self.arena = grown(self.spec, 5, seed=41)

    def test_solver_on_random_tree(self) -> None:
        a = self.arena
        for z in a.generation(5)[::4]:
            self.assertAlmostEqual(exact.root_excursion_hit(a, z), exact.solver_root_hit(a, z), delta=1e-10)

    def test_bound_constants(self) -> None:
        a = self.arena
        c_minus, c_plus = exact.pz_bound_constants(a, a.generation(5))
        c7 = exact.ellipticity_c7(self.spec.alpha, self.spec.N0)
        self.assertGreaterEqual(c_minus, c7 * (1.0 - 1e-12))
        self.assertLessEqual(c_plus, 1.0)

    def test_c7_value(self) -> None:
        c7 = exact.ellipticity_c7(self.spec.alpha, self.spec.N0)
        self.assertAlmostEqual(c7, 1.0 / (5.0 + 2.0 * math.sqrt(3.0)), places=12)
        with self.assertRaises(EllipticityRequiredError):
            exact.ellipticity_c7(None, 2)

    def test_analytic_miss_bound_holds(self) -> None:
        a = self.arena
        for z in a.generation(5):
            for n in (1, 10, 100, 10**4):
                mb = exact.miss_probability_bound(a, z, n)
                self.assertEqual(mb.mode, "ellipticity")
                self.assertTrue(mb.holds, msg=f"z={z}, N={n}: {mb}")

    def test_fitted_constant_is_tight_but_valid(self) -> None:
        a = self.arena
        nodes = a.generation(5)
        c7 = exact.fit_c7(a, nodes, safety=1.0)
        self.assertGreaterEqual(c7, exact.ellipticity_c7(self.spec.alpha, self.spec.N0) * (1.0 - 1e-12))
        for z in nodes:
            mb = exact.miss_probability_bound(a, z, 50, c7=c7)
            self.assertEqual(mb.mode, "fitted")
            self.assertTrue(mb.holds)

    def test_union_bound(self) -> None:
        a = self.arena
        c7 = exact.ellipticity_c7(self.spec.alpha, self.spec.N0)
        union, closed = exact.union_miss_bound(a, a.generation(5), 200, c7)
        self.assertLessEqual(union, closed * (1.0 + 1e-12))
        self.assertEqual(exact.union_miss_bound(a, [], 200, c7), (0.0, 0.0))


class TestWithoutEllipticity(unittest.TestCase):
    def test_refused_without_surrogate(self) -> None:
        spec = envspec.calibrate_lognormal()
        arena = grown(spec, 3, seed=2)
        z = arena.generation(3)[0]
        with self.assertRaises(EllipticityRequiredError):
            exact.miss_probability_bound(arena, z, 10)
        with self.assertRaises(EllipticityRequiredError):
            exact.miss_probability_bound(arena, z, 10, c7=0.1)
        mb = exact.miss_probability_bound(arena, z, 10, surrogate=True)
        self.assertEqual(mb.mode, "surrogate_alpha")
        self.assertTrue(0.0 <= mb.exact_miss <= 1.0)
        self.assertIsNone(mb.mc_holds)
        self.assertTrue(np.isfinite(mb.bound))


class TestMissRates(unittest.TestCase):
    def setUp(self) -> None:
        self.arena = hand_tree(envspec.calibrate_two_point(), WEIGHTS)

    def test_excursion_count(self) -> None:
        self.assertEqual(exact.excursion_count(7), 7)
        self.assertEqual(exact.excursion_count(10, 2.0), 100)
        self.assertEqual(exact.excursion_count(10, 3.0), 1000)
        self.assertEqual(exact.excursion_count(10, 0.5), 4)
        self.assertEqual(exact.excursion_count(0), 1)
        with self.assertRaises(ValueError):
            exact.excursion_count(-1.0)

    def test_kappa_sets_the_count(self) -> None:
        mb = exact.miss_probability_bound(self.arena, 6, 10, kappa=2.0)
        self.assertEqual(mb.returns, 100)
        self.assertAlmostEqual(mb.exact_miss, (1.0 - mb.p_z) ** 100, places=12)
        self.assertEqual(mb.walks, 0)
        with self.assertRaises(ValueError):
            exact.miss_probability_bound(self.arena, 6, 10, walks=5)

    def test_walk_miss_rate_matches_closed_form(self) -> None:
        for z, N in ((6, 5), (4, 3)):
            mb = exact.miss_probability_bound(self.arena, z, N, walks=3000, rng=random.Random(23), step_cap=10**6)
            self.assertEqual(mb.walks + mb.censored, 3000)
            se = math.sqrt(mb.exact_miss * (1.0 - mb.exact_miss) / mb.walks)
            self.assertLessEqual(abs(mb.mc_miss - mb.exact_miss), 3.0 * se + 2e-3, msg=str(mb.as_dict()))
            self.assertTrue(mb.mc_holds)

    def test_rates_follow_the_requested_order(self) -> None:
        nodes = [3, 4, 6, 7]
        rates, done, censored = exact.mc_miss_rates(self.arena, nodes, [20, 2], 400, random.Random(3), 10**6)
        self.assertEqual(rates.shape, (2, 4))
        self.assertEqual(done + censored, 400)
        # a longer walk misses less
        self.assertTrue(np.all(rates[0] <= rates[1]))

    def test_tolerance(self) -> None:
        self.assertTrue(exact.mc_under_bound(0.0, 0.0, 100))
        self.assertTrue(exact.mc_under_bound(0.01, 0.0, 100))
        self.assertFalse(exact.mc_under_bound(0.5, 0.1, 1000))
        self.assertFalse(exact.mc_under_bound(math.nan, 0.5, 100))


if __name__ == "__main__":
    unittest.main()
