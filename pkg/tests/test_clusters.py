import math
import random
import unittest

from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import InfeasiblePlanError, OverlappingExtentsError
from src.services import clusters, envspec
from src.services.tree import FRONTIER, ROOT
from src.services.walker import WalkState, run_until_returns
from tests.trees import grown, hand_tree

# root -> 1, 2; 1 -> 3, 4; 2 -> 5, 6, 7
SHAPE = [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0, 1.0]]


def _extents(pieces):
    out, hi = [], -1
    for gap, width in pieces:
        lo = hi + 1 + gap
        hi = lo + width
        out.append((lo, hi))
    return out


class TestNeveuSpacing(unittest.TestCase):
    def setUp(self) -> None:
        self.arena = hand_tree(envspec.flat_spec(), SHAPE)

    def test_neveu_distance(self) -> None:
        a = self.arena
        self.assertEqual(clusters.neveu_distance(a, 2, [3], [6]), 2)
        self.assertEqual(clusters.neveu_distance(a, 2, [3, 4], [5]), 0)
        with self.assertRaises(OverlappingExtentsError):
            clusters.neveu_distance(a, 2, [5], [4])
        with self.assertRaises(ValueError):
            clusters.neveu_distance(a, 2, [], [4])
        with self.assertRaises(ValueError):
            clusters.neveu_distance(a, 2, [1], [4])

    def test_cluster_of(self) -> None:
        self.assertEqual(clusters.cluster_of(self.arena, 2, 2), [5, 6, 7])
        self.assertEqual(clusters.cluster_of(self.arena, 6, 2), [6])

    def test_cluster_set_is_ordered(self) -> None:
        cs = clusters.cluster_set(self.arena, [2, 1], 2)
        self.assertEqual(cs.roots, [1, 2])
        self.assertEqual(cs.clusters, [[3, 4], [5, 6, 7]])
        self.assertEqual(cs.neveu_extents, [(0, 1), (2, 4)])
        self.assertEqual(len(cs), 2)
        self.assertEqual(cs.D_statistic, math.inf)

    def test_d_statistic(self) -> None:
        self.assertEqual(clusters.d_statistic([(0, 1), (3, 4), (7, 9)]), 5.0)
        self.assertEqual(clusters.d_statistic([(0, 1), (3, 4)]), math.inf)
        with self.assertRaises(OverlappingExtentsError):
            clusters.d_statistic([(0, 3), (2, 5)])


class TestFamilies(unittest.TestCase):
    def test_greedy_small(self) -> None:
        ext = [(0, 0), (2, 2), (4, 4), (6, 6), (8, 8)]
        self.assertEqual(clusters.greedy_family(ext, 0), [0, 1, 2, 3, 4])
        fam = clusters.greedy_family(ext, 5)
        self.assertGreaterEqual(clusters.d_statistic([ext[i] for i in fam]), 5)
        self.assertEqual(len(fam), len(clusters.exhaustive_family(ext, 5)))

    def test_exhaustive_limit(self) -> None:
        with self.assertRaises(ValueError):
            clusters.exhaustive_family([(2 * i, 2 * i) for i in range(21)], 1)

    @settings(max_examples=60, deadline=None)
    @given(
        pieces=st.lists(st.tuples(st.integers(0, 6), st.integers(0, 3)), min_size=1, max_size=9),
        m=st.integers(-1, 12),
    )
    def test_greedy_is_optimal(self, pieces, m) -> None:
        ext = _extents(pieces)
        fam = clusters.greedy_family(ext, m)
        self.assertEqual(fam, sorted(fam))
        self.assertGreaterEqual(clusters.d_statistic([ext[i] for i in fam]), m)
        self.assertEqual(len(fam), len(clusters.exhaustive_family(ext, m)))


class TestCutPlans(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.calibrate_two_point()

    def test_exponents(self) -> None:
        case, k, r, s, problem = clusters.cut_exponents(0.5, 0.1)
        self.assertEqual(case, "zeta<=1")
        self.assertAlmostEqual(k, 0.05)
        self.assertAlmostEqual(r, 0.3)
        self.assertAlmostEqual(s, 0.65)
        self.assertIsNone(problem)
        self.assertIsNotNone(clusters.cut_exponents(0.5, 0.3)[4])
        case, k, r, s, problem = clusters.cut_exponents(1.5, 0.1)
        self.assertEqual(case, "zeta>1")
        self.assertAlmostEqual(r, 2.1 / 3.0)
        self.assertAlmostEqual(s, 2.5 / 3.0)
        self.assertIsNone(problem)

    @settings(max_examples=40, deadline=None)
    @given(
        log_n=st.floats(min_value=5.0, max_value=200.0),
        zeta=st.floats(min_value=0.2, max_value=1.8),
        frac=st.floats(min_value=0.05, max_value=0.95),
    )
    def test_telescoping_identity(self, log_n, zeta, frac) -> None:
        bound = zeta / 2.0 if zeta <= 1.0 else (2.0 - zeta) / 3.0
        plan = clusters.build_cut_plan(self.spec, log_n, zeta, epsilon=0.1, delta=frac * bound)
        self.assertLessEqual(plan.ell, math.floor(plan.ell_target))
        if plan.k_n >= 2:
            self.assertEqual(plan.ell, plan.k_n * plan.r_n + (plan.k_n - 1) * plan.h_n)
            self.assertEqual(plan.end_generation(plan.k_n), plan.ell)

    def test_infeasible_plans(self) -> None:
        plan = clusters.build_cut_plan(self.spec, 50.0, 1.5, 0.1, 0.3)
        self.assertFalse(plan.feasible)
        with self.assertRaises(InfeasiblePlanError) as ctx:
            plan.require_feasible()
        self.assertIs(ctx.exception.plan, plan)
        bad = clusters.build_cut_plan(self.spec, 50.0, 2.5, 0.1, 0.1)
        self.assertTrue(any("zeta" in v for v in bad.violations))
        self.assertFalse(clusters.build_cut_plan(self.spec, 0.5, 0.5, 0.1, 0.1).feasible)

    def test_scaled_plan(self) -> None:
        plan = clusters.scaled_cut_plan(self.spec, 3, 2, 2, 1.0, log_n=30.0)
        self.assertTrue(plan.feasible)
        self.assertEqual(plan.ell, 10)
        self.assertEqual([plan.root_generation(i) for i in plan.levels()], [0, 4, 8])
        self.assertEqual([plan.end_generation(i) for i in plan.levels()], [2, 6, 10])
        self.assertAlmostEqual(plan.barrier(2), 2 * (self.spec.alpha * 2 + 1.0))
        self.assertEqual(plan.as_dict()["case"], "scaled")
        degenerate = clusters.scaled_cut_plan(self.spec, 1, 2, 0, 1.0, log_n=30.0)
        self.assertTrue(degenerate.degenerate)
        self.assertFalse(degenerate.feasible)

    def test_surrogate_alpha_is_noted(self) -> None:
        plan = clusters.scaled_cut_plan(envspec.calibrate_lognormal(), 2, 2, 1, 1.0, log_n=40.0)
        self.assertTrue(any("surrogate" in n for n in plan.notes))


class TestRegularCuts(unittest.TestCase):
    def test_anchors_respect_the_barrier(self) -> None:
        spec = envspec.calibrate_two_point()
        plan = clusters.scaled_cut_plan(spec, 3, 2, 2, 1.0, log_n=30.0)
        arena = grown(spec, 2, seed=13)
        cuts = clusters.regular_cut_clusters(arena, plan)
        self.assertEqual(len(cuts.clusters), plan.k_n)
        for i, cs in enumerate(cuts.clusters, start=1):
            self.assertEqual(cs.generation, plan.end_generation(i))
        for i, level in enumerate(cuts.anchors[1:], start=1):
            for u in level:
                self.assertEqual(arena.depth[u], plan.root_generation(i + 1))
                self.assertLessEqual(arena.Vbar[u], plan.barrier(i))
        self.assertEqual(cuts.realised, cuts.missing == 0)

    def test_infeasible_plan_refused(self) -> None:
        spec = envspec.calibrate_two_point()
        plan = clusters.scaled_cut_plan(spec, 1, 2, 0, 1.0, log_n=30.0)
        with self.assertRaises(InfeasiblePlanError):
            clusters.regular_cut_clusters(grown(spec, 2), plan)

    def test_leftmost_below(self) -> None:
        arena = hand_tree(envspec.flat_spec(), SHAPE)
        self.assertEqual(clusters.leftmost_below(arena, ROOT, 2, 0.0), 3)
        self.assertEqual(clusters.leftmost_below(arena, 2, 2, 0.0), 5)
        self.assertEqual(clusters.leftmost_below(arena, ROOT, 2, -1.0), FRONTIER)


class TestEvents(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.calibrate_two_point()
        self.plan = clusters.scaled_cut_plan(self.spec, 2, 2, 1, 1.0, log_n=20.0)
        self.arena = grown(self.spec, 5, seed=29)
        self.walk = run_until_returns(WalkState(), self.arena, random.Random(4), n_returns=300, step_cap=10**7)

    def test_event_bookkeeping(self) -> None:
        events = clusters.scan_A_events(self.arena, self.walk, self.plan, m=1.0, q=2.0)
        self.assertEqual([e.level for e in events], [1, 2])
        for e in events:
            self.assertEqual(e.candidates, len(self.arena.generation(e.root_gen)))
            self.assertLessEqual(e.q_found, e.fully_visited)
            self.assertLessEqual(e.fully_visited, e.candidates)
            self.assertEqual(e.holds, e.q_found >= 2)
            self.assertGreaterEqual(e.D_found, 1.0)
            self.assertEqual(len(e.family), e.q_found)
            self.assertEqual(e.as_record()["witness_ids"], e.family)

    def test_zero_spacing_takes_every_visited_cluster(self) -> None:
        events = clusters.scan_A_events(self.arena, self.walk, self.plan, m=0.0, q=1.0, levels=[1])
        self.assertEqual(events[0].q_found, events[0].fully_visited)


class TestWitnesses(unittest.TestCase):
    def setUp(self) -> None:
        self.arena = hand_tree(envspec.flat_spec(), SHAPE)
        self.walk = WalkState(
            first_visit={1: 1, 3: 2, 4: 3, 2: 5, 5: 6},
            local_times={1: 2, 3: 2, 4: 1, 2: 1, 5: 4},
        )

    def test_root_generation(self) -> None:
        self.assertEqual(clusters.witness_root_generation(10, 3.5), (6, False))
        self.assertEqual(clusters.witness_root_generation(10, 0.0), (9, True))
        self.assertEqual(clusters.witness_root_generation(3, 5.0), (1, True))

    def test_visited_at(self) -> None:
        self.assertEqual(clusters.visited_at(self.arena, self.walk, 1), [1, 2])
        self.assertEqual(clusters.visited_at(self.arena, self.walk, 2), [3, 4, 5])

    def test_full_cluster(self) -> None:
        w = clusters.witness_full_cluster(self.arena, self.walk, ell=2, root_gen=1)
        self.assertEqual((w.z, w.size, w.scanned), (1, 2, 2))
        self.assertTrue(w.full)
        top = clusters.witness_full_cluster(self.arena, self.walk, ell=2, root_gen=0)
        self.assertEqual(top.z, ROOT)
        self.assertAlmostEqual(top.fraction, 0.6)
        self.assertFalse(top.full)
        with self.assertRaises(ValueError):
            clusters.witness_full_cluster(self.arena, self.walk, ell=2, root_gen=3)

    def test_spread(self) -> None:
        s = clusters.witness_spread(self.arena, self.walk, ell=2, ancestor_gen=1)
        self.assertEqual((s.value, s.worst, s.ancestors, s.extinct), (2, 1, 2, 0))
        self.assertTrue(s.indicator)

    def test_spread_with_extinct_ancestor(self) -> None:
        arena = hand_tree(envspec.flat_spec(), [[1.0, 1.0], [1.0, 1.0], []])
        walk = WalkState(first_visit={1: 1, 3: 2}, local_times={1: 1, 3: 3})
        kept = clusters.witness_spread(arena, walk, ell=2, ancestor_gen=1)
        self.assertEqual((kept.value, kept.worst, kept.extinct), (0, 2, 1))
        self.assertFalse(kept.indicator)
        skipped = clusters.witness_spread(arena, walk, ell=2, ancestor_gen=1, skip_extinct=True)
        self.assertEqual((skipped.value, skipped.worst), (3, 1))

    def test_spread_without_eligible_ancestor(self) -> None:
        arena = hand_tree(envspec.flat_spec(), [[1.0, 1.0], [], []])
        s = clusters.witness_spread(arena, WalkState(), ell=2, ancestor_gen=1, skip_extinct=True)
        self.assertIsNone(s.value)
        self.assertEqual((s.worst, s.ancestors, s.extinct), (FRONTIER, 2, 2))
        self.assertFalse(s.indicator)
        kept = clusters.witness_spread(arena, WalkState(), ell=2, ancestor_gen=1)
        self.assertEqual((kept.value, kept.worst), (0, 1))


if __name__ == "__main__":
    unittest.main()
