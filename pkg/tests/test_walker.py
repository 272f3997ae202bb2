import random
import unittest

import pytest

from src.core.errors import ReturnIndexError
from src.services import envspec
from src.services.tree import ROOT
from src.services.walker import (
    PARENT_OF_ROOT,
    WalkState,
    K_of,
    fully_visited_generations,
    next_vertex,
    observables,
    run_steps,
    run_until_returns,
    step,
    summarize,
)
from tests.trees import grown, hand_tree


class TestTransitions(unittest.TestCase):
    def setUp(self) -> None:
        spec = envspec.flat_spec()
        # root -> 1 (A=1), 2 (A=3)
        self.arena = hand_tree(spec, [[1.0, 3.0]])

    def test_next_vertex_partitions_unit_interval(self) -> None:
        a = self.arena
        # total weight 4, so [0, 0.2) -> 1, [0.2, 0.8) -> 2, [0.8, 1) -> parent
        self.assertEqual(next_vertex(a, ROOT, 0.0), 1)
        self.assertEqual(next_vertex(a, ROOT, 0.19), 1)
        self.assertEqual(next_vertex(a, ROOT, 0.21), 2)
        self.assertEqual(next_vertex(a, ROOT, 0.79), 2)
        self.assertEqual(next_vertex(a, ROOT, 0.81), PARENT_OF_ROOT)
        self.assertEqual(next_vertex(a, PARENT_OF_ROOT, 0.5), ROOT)

    def test_frontier_grows_on_demand(self) -> None:
        a = self.arena
        self.assertTrue(a.is_frontier(1))
        next_vertex(a, 1, 0.1)
        self.assertFalse(a.is_frontier(1))

    def test_step_records(self) -> None:
        walk = WalkState()
        rng = random.Random(5)
        for _ in range(50):
            step(walk, self.arena, rng)
        self.assertEqual(walk.steps, 50)
        self.assertEqual(sum(walk.local_times.values()), 50)


class TestWalkRecords(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = envspec.calibrate_two_point()
        self.arena = grown(self.spec, 4, seed=23)
        self.walk = run_until_returns(WalkState(), self.arena, random.Random(1), n_returns=40, step_cap=10**6)

    def test_returns_and_times(self) -> None:
        w = self.walk
        self.assertFalse(w.censored)
        self.assertEqual(w.returns, 40)
        self.assertEqual(len(w.return_times), 40)
        self.assertEqual(w.return_times, sorted(w.return_times))
        self.assertEqual(w.position, ROOT)
        self.assertEqual(w.return_times[-1], w.steps)
        self.assertEqual(w.local_time(ROOT), 40)
        self.assertEqual(sum(w.local_times.values()), w.steps)

    def test_first_visits(self) -> None:
        w = self.walk
        for m, times in enumerate(w.first_visits):
            self.assertEqual(times, sorted(times))
            self.assertEqual(len(times), sum(1 for x in w.first_visit if self.arena.depth[x] == m))
        self.assertEqual(w.Xstar, max(self.arena.depth[x] for x in w.first_visit))
        self.assertNotIn(PARENT_OF_ROOT, w.first_visit)

    def test_M_is_monotone_in_time(self) -> None:
        w = self.walk
        for m in (1, 2, 3):
            series = [w.M(m, t) for t in range(0, w.steps + 1, max(1, w.steps // 50))]
            self.assertEqual(series, sorted(series))
            self.assertEqual(w.M(m), len(w.first_visits[m]) if m < len(w.first_visits) else 0)
        self.assertEqual(w.M(10**6), 0)

    def test_K_of(self) -> None:
        w = self.walk
        self.assertEqual(K_of(w, 2, 0), 0)
        ks = [K_of(w, 2, n) for n in range(1, 41)]
        self.assertEqual(ks, sorted(ks))
        self.assertEqual(ks[-1], w.M(2))
        with self.assertRaises(ReturnIndexError):
            K_of(w, 2, 41)
        with self.assertRaises(ReturnIndexError):
            K_of(w, 2, -1)

    def test_fully_visited_generations(self) -> None:
        R = fully_visited_generations(self.walk, self.arena)
        self.assertLessEqual(R, self.walk.Xstar)
        for k in range(1, R + 1):
            gen = self.arena.neveu_order(k)
            self.assertTrue(all(self.walk.visited(x) for x in gen))

    def test_summary(self) -> None:
        s = summarize(self.walk, self.arena, seed=99, generations=[1, 2], n_returns=40)
        self.assertEqual(s.seed, 99)
        self.assertEqual(s.returns, 40)
        self.assertEqual(s.K[2], self.walk.M(2))
        self.assertEqual(s.root_local_time, 40)
        self.assertEqual(s.Xstar, self.walk.Xstar)

    def test_bad_arguments(self) -> None:
        with self.assertRaises(ValueError):
            run_until_returns(WalkState(), self.arena, random.Random(1), n_returns=0, step_cap=10)
        with self.assertRaises(ValueError):
            observables(WalkState(), self.arena, [1])


class TestCensoring(unittest.TestCase):
    def test_step_cap_marks_censored(self) -> None:
        spec = envspec.flat_spec({3: 1.0})
        arena = grown(spec, 2)
        walk = run_until_returns(WalkState(), arena, random.Random(3), n_returns=10**6, step_cap=500)
        self.assertTrue(walk.censored)
        self.assertEqual(walk.steps, 500)

    def test_run_steps_is_resumable(self) -> None:
        spec = envspec.calibrate_two_point()
        a1, a2 = grown(spec, 3, seed=5), grown(spec, 3, seed=5)
        one = run_steps(WalkState(), a1, random.Random(8), 400)
        rng = random.Random(8)
        two = run_steps(WalkState(), a2, rng, 150)
        two = run_steps(two, a2, rng, 400)
        self.assertEqual(one.local_times, two.local_times)
        self.assertEqual(one.first_visit, two.first_visit)


@pytest.mark.slow
class TestRecurrence(unittest.TestCase):
    def test_sym2_walks_come_back(self) -> None:
        spec = envspec.calibrate_two_point()
        for replica in range(10):
            arena = grown(spec, 2, seed=31, replica=replica)
            walk = run_until_returns(WalkState(), arena, random.Random(replica), n_returns=200, step_cap=10**7)
            self.assertFalse(walk.censored)
            obs = observables(walk, arena, [1, 2, 3])
            self.assertGreaterEqual(obs.M[1], 1)
            self.assertGreaterEqual(obs.R, 1)


if __name__ == "__main__":
    unittest.main()
