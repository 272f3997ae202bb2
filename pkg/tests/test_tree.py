import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import NodeCapExceededError, NotAncestorError, SubtreeNotGrownError
from src.core.rng import SeedPath
from src.services import envspec
from src.services.tree import FRONTIER, ROOT, TreeArena, exact_generation_law, sample_generation_sizes
from tests.trees import grown, hand_tree


class TestGrowth(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.calibrate_two_point()
        self.arena = grown(self.spec, 6)

    def test_generation_sizes(self) -> None:
        sizes = self.arena.grow_to_depth(6)
        self.assertEqual(sizes, [2**k for k in range(1, 7)])
        self.assertEqual(self.arena.max_depth, 6)
        self.assertTrue(self.arena.generation_complete(6))

    def test_records_are_consistent(self) -> None:
        a = self.arena
        self.assertEqual(a.V[ROOT], 0.0)
        self.assertEqual(a.Vbar[ROOT], -math.inf)
        for x in range(1, len(a)):
            p = a.parent[x]
            self.assertEqual(a.depth[x], a.depth[p] + 1)
            self.assertAlmostEqual(a.V[x], a.V[p] - math.log(a.A[x]), places=12)
            self.assertAlmostEqual(a.V[x], a.recompute_V(x), places=10)
            self.assertEqual(a.Vbar[x], max(a.Vbar[p], a.V[x]))

    def test_children_are_contiguous(self) -> None:
        a = self.arena
        for x in range(len(a)):
            if a.is_frontier(x):
                continue
            kids = list(a.children(x))
            self.assertEqual(kids, list(range(kids[0], kids[0] + len(kids))))
            self.assertTrue(all(a.parent[c] == x for c in kids))
            self.assertAlmostEqual(a.child_weight_sum[x], math.fsum(a.A[c] for c in kids), places=12)

    def test_deterministic_per_seed(self) -> None:
        again = grown(self.spec, 6)
        self.assertEqual(again.records(), self.arena.records())
        other = grown(self.spec, 6, replica=1)
        self.assertNotEqual(other.records(), self.arena.records())

    def test_lazy_growth_is_idempotent(self) -> None:
        x = self.arena.generation(6)[0]
        self.assertTrue(self.arena.is_frontier(x))
        first = self.arena.extend_at(x)
        self.assertEqual(self.arena.extend_at(x), first)
        self.assertEqual(self.arena.ensure_children(x), first)

    def test_bad_depth(self) -> None:
        with self.assertRaises(ValueError):
            self.arena.grow_to_depth(0)

    def test_node_cap(self) -> None:
        arena = TreeArena(self.spec, np.random.default_rng(0), node_cap=20)
        with self.assertRaises(NodeCapExceededError):
            arena.grow_to_depth(6)


class TestSurvival(unittest.TestCase):
    def test_conditioned_tree_survives(self) -> None:
        spec = envspec.flat_spec({0: 0.3, 3: 0.7})
        for replica in range(5):
            arena = TreeArena(spec, SeedPath(3, "survival", 0, replica).generator("tree"))
            sizes = arena.grow_to_depth(5)
            self.assertGreater(sizes[-1], 0)

    def test_unconditioned_tree_may_die(self) -> None:
        spec = envspec.flat_spec({0: 0.3, 3: 0.7})
        dead = 0
        for replica in range(40):
            arena = TreeArena(spec, SeedPath(3, "survival", 1, replica).generator("tree"), condition_on_survival=False)
            if arena.grow_to_depth(4)[-1] == 0:
                dead += 1
        self.assertGreater(dead, 0)

    def test_survives_to_matches_full_growth(self) -> None:
        spec = envspec.flat_spec({0: 0.3, 3: 0.7})
        seen = set()
        for replica in range(30):
            arena = TreeArena(spec, SeedPath(3, "survival", 2, replica).generator("tree"), condition_on_survival=False)
            alive = arena.survives_to(4)
            self.assertEqual(alive, arena.complete_to_depth(4)[-1] > 0)
            seen.add(alive)
        self.assertEqual(seen, {True, False})

    def test_resample_starts_over(self) -> None:
        arena = grown(envspec.flat_spec(), 3)
        self.assertGreater(len(arena), 1)
        arena.resample("test")
        self.assertEqual(len(arena), 1)
        self.assertEqual(arena.survival_resamples, 1)
        self.assertTrue(arena.is_frontier(ROOT))


class TestNeveuOrder(unittest.TestCase):
    def setUp(self) -> None:
        spec = envspec.flat_spec()
        # root -> 1, 2; 1 -> 3, 4; 2 -> 5, 6, 7
        self.arena = hand_tree(spec, [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0, 1.0]])

    def test_generation_order(self) -> None:
        self.assertEqual(self.arena.generation(1), [1, 2])
        self.assertEqual(self.arena.generation(2), [3, 4, 5, 6, 7])
        self.assertEqual(self.arena.neveu_rank(2)[5], 2)

    def test_order_follows_parents_after_lazy_growth(self) -> None:
        a = self.arena
        a.extend_at(7)
        a.extend_at(3)
        order = a.neveu_order(3)
        ranks = a.neveu_rank(2)
        parent_ranks = [ranks[a.parent[x]] for x in order]
        self.assertEqual(parent_ranks, sorted(parent_ranks))
        self.assertEqual(a.parent[order[0]], 3)

    def test_descendants(self) -> None:
        a = self.arena
        self.assertEqual(a.descendants_at(2, 2), [5, 6, 7])
        self.assertEqual(a.descendants_at(ROOT, 2), [3, 4, 5, 6, 7])
        self.assertEqual(a.descendants_at(4, 2), [4])
        with self.assertRaises(SubtreeNotGrownError):
            a.descendants_at(1, 3)
        with self.assertRaises(ValueError):
            a.descendants_at(4, 1)

    def test_ancestry(self) -> None:
        a = self.arena
        self.assertEqual(a.path_from_root(6), [ROOT, 2, 6])
        self.assertEqual(a.ancestor_at(6, 1), 2)
        self.assertTrue(a.is_ancestor(2, 6))
        self.assertFalse(a.is_ancestor(1, 6))
        self.assertFalse(a.is_ancestor(6, 6))
        self.assertTrue(a.is_ancestor(6, 6, strict=False))
        with self.assertRaises(NotAncestorError):
            a.ancestor_at(1, 2)

    def test_incomplete_generation(self) -> None:
        with self.assertRaises(SubtreeNotGrownError):
            self.arena.generation(3)
        with self.assertRaises(SubtreeNotGrownError):
            self.arena.children(3)

    def test_node_view(self) -> None:
        node = self.arena.node(2)
        self.assertEqual(node.children, (5, 6, 7))
        self.assertFalse(node.frontier)
        self.assertTrue(self.arena.node(5).frontier)
        self.assertEqual(self.arena.frontier_ids(), [3, 4, 5, 6, 7])


class TestAccessible(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.calibrate_two_point()
        self.arena = grown(self.spec, 7, seed=19)

    def test_count_matches_scan(self) -> None:
        a = self.arena
        for k in (3, 5, 7):
            for bound in (0.0, 1.5, 3.0):
                brute = sum(1 for x in a.generation(k) if a.Vbar[x] <= bound)
                self.assertEqual(a.accessible_count(bound, k), brute)

    def test_relative_from_root(self) -> None:
        a = self.arena
        self.assertEqual(a.accessible_nodes(1.5, 6), a.accessible_nodes(1.5, 6, relative=True))

    def test_relative_from_origin(self) -> None:
        a = self.arena
        z = a.generation(2)[0]
        nodes = a.accessible_nodes(1.0, 6, origin=z, relative=True)
        for u in nodes:
            path = a.path_from_root(u)[3:]
            self.assertLessEqual(max(a.V[w] - a.V[z] for w in path), 1.0)
        with self.assertRaises(ValueError):
            a.accessible_nodes(1.0, 2, origin=z)

    def test_min_vbar(self) -> None:
        a = self.arena
        for k in (1, 4, 7):
            vb, x = a.min_vbar(k)
            stats = a.generation_stats(k)
            self.assertEqual(vb, stats.min_vbar)
            self.assertEqual(a.Vbar[x], vb)
        with self.assertRaises(ValueError):
            a.min_vbar(0)

    def test_generation_stats(self) -> None:
        stats = self.arena.generation_stats(7)
        self.assertEqual(stats.Z, 128)
        self.assertAlmostEqual(stats.W, 1.0, places=12)
        self.assertLessEqual(stats.min_vbar, stats.max_vbar)

    def test_min_vbar_extinct(self) -> None:
        spec = envspec.flat_spec()
        arena = hand_tree(spec, [[1.0], []])
        self.assertEqual(arena.min_vbar(2), (math.inf, FRONTIER))


class TestGenerationSizes(unittest.TestCase):
    def test_deterministic_offspring(self) -> None:
        sizes = sample_generation_sizes(((2, 1.0),), 5, np.random.default_rng(1), size=3)
        self.assertEqual(sizes.shape, (3, 5))
        self.assertTrue((sizes == np.array([2, 4, 8, 16, 32])).all())

    def test_exact_law_binary(self) -> None:
        law = exact_generation_law(((2, 1.0),), 4, cap=64)
        self.assertAlmostEqual(law[16], 1.0, places=12)
        self.assertAlmostEqual(law.sum(), 1.0, places=12)

    @settings(max_examples=20, deadline=None)
    @given(q1=st.floats(min_value=0.05, max_value=0.6), n=st.integers(min_value=1, max_value=5))
    def test_exact_law_matches_pgf(self, q1: float, n: int) -> None:
        q = ((1, q1), (2, 1.0 - q1))
        law = exact_generation_law(q, n, cap=64)
        self.assertAlmostEqual(law.sum(), 1.0, places=9)
        mean = float(np.dot(np.arange(len(law)), law))
        self.assertAlmostEqual(mean, (2.0 - q1) ** n, places=8)
        self.assertAlmostEqual(law[1], q1**n, places=12)


if __name__ == "__main__":
    unittest.main()
