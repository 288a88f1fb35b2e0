"""
Policy comparison tests for Mimic Explorer
"""

import math
import shutil
import tempfile
import unittest
from pathlib import Path

import pytest

from mimic.checkpoint import Checkpoint, save_checkpoint
from mimic.compare import (
    SessionResult,
    SessionTask,
    build_tasks,
    censored_steps,
    run_session,
    run_sessions,
    summarize,
    win_loss,
    write_report,
)
from mimic.errors import UsageError
from mimic.network import InteractionNet

from .fixtures import chain_app, tiny_model_config


def result(app_id: str, policy: str, seed: int = 0, first=None, final: float = 0.5,
           failure=None) -> SessionResult:
    return SessionResult(app_id, policy, seed, steps=10, first_target_step=first,
                         final_coverage=final, curve=[(1, final)], failure=failure)


class TestBuildTasks(unittest.TestCase):
    """Test task expansion."""

    def setUp(self):
        self.suite = [chain_app("a"), chain_app("b")]

    def test_one_task_per_combination(self):
        tasks = build_tasks(self.suite, ["model-weighted", "random"], range(5), 20, checkpoint="m.ckpt")
        self.assertEqual(len(tasks), 20)
        self.assertEqual((tasks[0].spec.app_id, tasks[0].policy, tasks[0].seed), ("a", "model-weighted", 0))
        self.assertEqual((tasks[-1].spec.app_id, tasks[-1].policy, tasks[-1].seed), ("b", "random", 4))
        self.assertTrue(all(t.budget == 20 for t in tasks))

    def test_needs_two_policies(self):
        with self.assertRaises(UsageError):
            build_tasks(self.suite, ["random", "random"], range(5), 10)

    def test_model_policy_needs_checkpoint(self):
        with self.assertRaises(UsageError):
            build_tasks(self.suite, ["model-greedy", "random"], range(5), 10)

    def test_needs_five_seeds(self):
        with self.assertRaises(UsageError):
            build_tasks(self.suite, ["model-weighted", "random"], [0, 1, 2, 3, 3], 10, checkpoint="m.ckpt")


class TestStatistics(unittest.TestCase):
    """Test censoring, summaries and win/loss tables."""

    def test_censored_steps(self):
        self.assertEqual(censored_steps(result("a", "x", first=4), 30), 4)
        self.assertEqual(censored_steps(result("a", "x"), 30), 31)

    def test_summary_skips_failures(self):
        results = [
            result("a", "x", first=2, final=0.4),
            result("b", "x", first=None, final=0.8),
            result("c", "x", failure="boom"),
        ]
        summary = summarize(results, ["x", "y"], budget=10)
        x, y = summary
        self.assertEqual((x.sessions, x.failed, x.target_hits), (3, 1, 1))
        self.assertEqual(x.median_steps_to_target, 6.5)
        self.assertAlmostEqual(x.median_final_coverage, 0.6)
        self.assertEqual(y.sessions, 0)
        self.assertTrue(math.isnan(y.mean_final_coverage))

    def test_win_loss(self):
        results = [
            result("a", "x", first=3, final=0.5),
            result("a", "y", first=None, final=0.5),
            result("b", "x", first=5, final=0.9),
            result("b", "y", first=2, final=0.3),
            result("c", "x", first=1),
            result("c", "y", failure="boom"),
        ]
        rows = win_loss(results, ["x", "y"], budget=10)
        self.assertEqual(rows, [
            ("x", "y", "steps_to_target", 1, 1, 0),
            ("x", "y", "final_coverage", 1, 0, 1),
        ])


class TestReport(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_report_files(self):
        results = [result("a", "x", first=3), result("a", "y")]
        write_report(results, ["x", "y"], 10, self.temp_dir, header="mimic-explorer test")
        for name in ("sessions.csv", "curves.csv", "summary.csv", "winloss.csv"):
            lines = (self.temp_dir / name).read_text().splitlines()
            self.assertEqual(lines[0], "# mimic-explorer test")
        sessions = (self.temp_dir / "sessions.csv").read_text().splitlines()
        self.assertEqual(sessions[2], "a,x,0,10,3,0.500000,0,")
        self.assertEqual(sessions[3], "a,y,0,10,,0.500000,0,")


class TestRunSessions(unittest.TestCase):
    """Test running exploration sessions."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.checkpoint = self.temp_dir / "model.ckpt"
        save_checkpoint(Checkpoint.from_model(InteractionNet(tiny_model_config())), self.checkpoint)
        self.suite = [chain_app("a"), chain_app("b", length=4)]

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_random_session(self):
        outcome = run_session(SessionTask(chain_app(), "random", seed=1, budget=50))
        self.assertFalse(outcome.failed)
        self.assertAlmostEqual(outcome.final_coverage, 1.0)
        self.assertIsNotNone(outcome.first_target_step)
        coverages = [value for _, value in outcome.curve]
        self.assertEqual(coverages, sorted(coverages))

    def test_failures_are_captured(self):
        task = SessionTask(chain_app(), "model-greedy", seed=0, budget=5,
                           checkpoint=str(self.temp_dir / "absent.ckpt"))
        outcome = run_session(task)
        self.assertTrue(outcome.failed)
        self.assertEqual(outcome.curve, [])

    def test_sequential_runs_are_reproducible(self):
        tasks = build_tasks(self.suite, ["model-weighted", "random"], range(5), 8, checkpoint=str(self.checkpoint))
        first = run_sessions(tasks)
        second = run_sessions(tasks)
        self.assertEqual(first, second)
        self.assertEqual([(r.app_id, r.policy, r.seed) for r in first],
                         [(t.spec.app_id, t.policy, t.seed) for t in tasks])
        self.assertFalse(any(r.failed for r in first))

    @pytest.mark.slow
    def test_worker_pool_matches_sequential(self):
        tasks = build_tasks(self.suite, ["model-greedy", "random"], range(5), 8, checkpoint=str(self.checkpoint))
        self.assertEqual(run_sessions(tasks, workers=2), run_sessions(tasks, workers=1))


if __name__ == '__main__':
    unittest.main()
