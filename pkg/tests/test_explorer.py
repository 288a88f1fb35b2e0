"""
Exploration tests for Mimic Explorer
"""

import itertools
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from mimic.benchmark import build_screen
from mimic.errors import InvariantViolation, SimError, UsageError
from mimic.explorer import (
    ExplorationPolicy,
    Purpose,
    UiTransitionGraph,
    next_input,
    run_exploration,
)
from mimic.models import Action, ActionType, enumerate_actions
from mimic.network import InteractionNet
from mimic.sim import SimSession, coverage

from .fixtures import chain_app, make_state, tiny_model_config


def floyd_warshall(utg: UiTransitionGraph):
    names = list(utg.nodes)
    dist = {(a, b): (0 if a == b else float("inf")) for a in names for b in names}
    for edge in utg.edges:
        dist[(edge.source, edge.target)] = min(dist[(edge.source, edge.target)], 1)
    for k, i, j in itertools.product(names, repeat=3):
        if dist[(i, k)] + dist[(k, j)] < dist[(i, j)]:
            dist[(i, j)] = dist[(i, k)] + dist[(k, j)]
    return dist


def follow(utg: UiTransitionGraph, source: str, path):
    current = source
    for action in path:
        current = next(e.target for e in utg.edges if e.source == current and e.action.key == action.key)
    return current


class FailingEnvironment:
    """Environment that breaks after a fixed number of inputs."""

    def __init__(self, spec, fail_after: int):
        self.session = SimSession(spec)
        self.fail_after = fail_after

    def reset(self):
        return self.session.reset()

    def step(self, action):
        if self.session.steps >= self.fail_after:
            raise SimError("device went away")
        return self.session.step(action)


class TestUiTransitionGraph(unittest.TestCase):
    """Test graph bookkeeping and path search."""

    def setUp(self):
        self.home = make_state("home")
        self.next = make_state("next")
        self.touch, self.long = enumerate_actions(self.home)

    def test_recording_marks_actions_explored(self):
        utg = UiTransitionGraph()
        utg.add_state(self.home)
        self.assertEqual(utg.unexplored_count(self.home.fingerprint), 2)
        utg.record_transition(self.home, self.touch, self.next)
        self.assertEqual(utg.unexplored_count(self.home.fingerprint), 1)
        self.assertEqual(utg.states_seen, 2)
        self.assertEqual(utg.actions_explored, 1)

    def test_duplicate_and_nondeterministic_edges(self):
        utg = UiTransitionGraph()
        utg.record_transition(self.home, self.touch, self.next)
        utg.record_transition(self.home, self.touch, self.next)
        self.assertEqual(len(utg.edges), 1)
        utg.record_transition(self.home, self.touch, self.home)
        self.assertEqual(len(utg.edges), 2)
        self.assertEqual(utg.actions_explored, 1)

    def test_foreign_action_is_rejected(self):
        utg = UiTransitionGraph()
        with self.assertRaises(InvariantViolation):
            utg.record_transition(self.home, Action(ActionType.SWIPE_UP, "ok", (60, 80)), self.next)

    def test_trivial_and_missing_paths(self):
        utg = UiTransitionGraph()
        utg.record_transition(self.home, self.touch, self.next)
        self.assertEqual(utg.shortest_path(self.home.fingerprint, self.home.fingerprint), [])
        self.assertEqual(utg.shortest_path(self.home.fingerprint, self.next.fingerprint), [self.touch])
        self.assertIsNone(utg.shortest_path(self.next.fingerprint, self.home.fingerprint))
        with self.assertRaises(InvariantViolation):
            utg.shortest_path(self.home.fingerprint, "unknown")

    def test_shortest_paths_match_floyd_warshall(self):
        rng = np.random.default_rng(3)
        states = [build_screen(f"screen {i}", 4, [False] * 4, with_back=False) for i in range(7)]
        for _ in range(100):
            utg = UiTransitionGraph()
            for state in states:
                utg.add_state(state)
                for action in enumerate_actions(state):
                    if rng.random() < 0.35:
                        utg.record_transition(state, action, states[int(rng.integers(0, len(states)))])
            dist = floyd_warshall(utg)
            for source, target in itertools.product(utg.nodes, repeat=2):
                path = utg.shortest_path(source, target)
                if dist[(source, target)] == float("inf"):
                    self.assertIsNone(path)
                else:
                    self.assertEqual(len(path), dist[(source, target)])
                    self.assertEqual(follow(utg, source, path), target)

    def test_to_dot(self):
        utg = UiTransitionGraph()
        utg.record_transition(self.home, self.touch, self.next)
        dot = utg.to_dot()
        self.assertTrue(dot.startswith("digraph utg {"))
        self.assertIn('[label="touch@ok"]', dot)
        self.assertIn('1 unexplored"', dot)
        self.assertIn('2 unexplored"', dot)


class TestNextInput(unittest.TestCase):
    """Test the decision procedure."""

    def setUp(self):
        self.policy = ExplorationPolicy("random", seed=0)
        self.a = make_state("a")
        self.b = make_state("b")
        self.c = make_state("c")
        self.touch, self.long = enumerate_actions(self.a)

    def test_explores_current_state_first(self):
        utg = UiTransitionGraph()
        utg.add_state(self.a)
        decision = next_input(utg, self.a, self.policy)
        self.assertIs(decision.purpose, Purpose.EXPLORE)
        self.assertIn(decision.action, [self.touch, self.long])

    def test_navigates_toward_unexplored_state(self):
        utg = UiTransitionGraph()
        utg.record_transition(self.a, self.touch, self.b)
        utg.record_transition(self.a, self.long, self.a)
        decision = next_input(utg, self.a, self.policy)
        self.assertIs(decision.purpose, Purpose.NAVIGATE)
        self.assertEqual(decision.action, self.touch)
        self.assertEqual(decision.target, self.b.fingerprint)

    def test_restart_then_stop_when_stranded(self):
        utg = UiTransitionGraph()
        utg.record_transition(self.a, self.touch, self.b)
        utg.record_transition(self.a, self.long, self.a)
        for action in enumerate_actions(self.b):
            utg.record_transition(self.b, action, self.b)
        utg.add_state(self.c)
        decision = next_input(utg, self.b, self.policy)
        self.assertIs(decision.purpose, Purpose.RESTART)
        self.assertEqual(decision.target, self.c.fingerprint)
        stopped = next_input(utg, self.b, self.policy, stranded={self.c.fingerprint})
        self.assertIs(stopped.purpose, Purpose.STOP)

    def test_unregistered_state(self):
        with self.assertRaises(InvariantViolation):
            next_input(UiTransitionGraph(), self.a, self.policy)


class TestExplorationPolicy(unittest.TestCase):

    def test_model_policy_needs_model(self):
        with self.assertRaises(UsageError):
            ExplorationPolicy("model-greedy")

    def test_unknown_variant(self):
        with self.assertRaises(UsageError):
            ExplorationPolicy("clairvoyant")

    def test_empty_candidates(self):
        with self.assertRaises(InvariantViolation):
            ExplorationPolicy("random").choose(None, [])


class TestRunExploration(unittest.TestCase):
    """Test the exploration loop on synthetic apps."""

    def setUp(self):
        self.spec = chain_app(length=3)

    def _explore(self, policy: ExplorationPolicy, budget: int = 100):
        return run_exploration(SimSession(self.spec), policy, budget)

    def test_explores_everything_reachable(self):
        utg, log = self._explore(ExplorationPolicy("random", seed=4))
        self.assertEqual(utg.actions_explored, 9)
        self.assertLess(len(log.records), 100)
        self.assertIsNotNone(log.first_target_step)
        self.assertIsNone(log.failure)
        explored = {(self.spec.state_name(utg.nodes[fp].exemplar), element, kind)
                    for fp, element, kind in utg.explored_keys()}
        self.assertAlmostEqual(coverage(self.spec, explored), 1.0)

    def test_counters_are_monotone(self):
        _, log = self._explore(ExplorationPolicy("random", seed=1))
        for before, after in zip(log.records, log.records[1:]):
            self.assertLessEqual(before.states_seen, after.states_seen)
            self.assertLessEqual(before.actions_explored, after.actions_explored)
            self.assertEqual(after.step, before.step + 1)

    def test_budget_is_respected(self):
        _, log = self._explore(ExplorationPolicy("random", seed=1), budget=4)
        self.assertEqual(len(log.records), 4)

    def test_same_seed_same_log(self):
        _, first = self._explore(ExplorationPolicy("random", seed=9))
        _, second = self._explore(ExplorationPolicy("random", seed=9))
        self.assertEqual(first.records, second.records)

    def test_model_guided_run(self):
        model = InteractionNet(tiny_model_config())
        for variant in ("model-greedy", "model-weighted"):
            utg, log = self._explore(ExplorationPolicy(variant, seed=2, model=model), budget=5)
            self.assertEqual(len(log.records), 5)
            self.assertGreaterEqual(utg.states_seen, 1)

    def test_invalid_budget(self):
        with self.assertRaises(UsageError):
            self._explore(ExplorationPolicy("random"), budget=0)

    def test_environment_failure_truncates_log(self):
        env = FailingEnvironment(self.spec, fail_after=2)
        _, log = run_exploration(env, ExplorationPolicy("random", seed=0), 20)
        self.assertEqual(len(log.records), 2)
        self.assertIn("device went away", log.failure)
        temp_dir = Path(tempfile.mkdtemp())
        try:
            path = temp_dir / "exploration.csv"
            log.to_csv(path, header="h")
            lines = path.read_text().splitlines()
            self.assertEqual(lines[0], "# h")
            self.assertEqual(len(lines), 2 + 3)
            self.assertIn(",failure,", lines[-1])
        finally:
            shutil.rmtree(temp_dir)


if __name__ == '__main__':
    unittest.main()
