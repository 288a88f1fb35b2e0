"""
End-to-end learning and exploration checks for Mimic Explorer
"""

import shutil
import statistics
import tempfile
import time
import unittest
from pathlib import Path

import pytest

from mimic.benchmark import make_benchmark_suite
from mimic.checkpoint import save_checkpoint
from mimic.compare import build_tasks, run_sessions, summarize
from mimic.config import ModelConfig, RunConfig, TrainConfig
from mimic.explorer import ExplorationPolicy, run_exploration
from mimic.models import enumerate_actions
from mimic.network import InteractionNet
from mimic.raster import UiContext
from mimic.sim import SimSession, generate_traces
from mimic.training import evaluate, train

from .fixtures import tiny_model_config

BIAS = 50.0
COMPARE_BUDGET = 150


def gated_flows(suite, n_flows: int, seed: int):
    flows = []
    for index, spec in enumerate(suite):
        flows.extend(generate_traces(spec, n_flows, flow_len=20, seed=seed + index).flows)
    return flows


@pytest.mark.slow
class TestTrainedModel(unittest.TestCase):
    """Train at 45x80 on scripted-user traces, then rank and explore unseen apps."""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = Path(tempfile.mkdtemp())
        training_apps = make_benchmark_suite("gated", 20, seed=11, bias=BIAS, max_states=8)
        cls.unseen_apps = make_benchmark_suite("gated", 20, seed=12, bias=BIAS, max_states=8)
        cls.config = RunConfig(seed=11)
        cls.config.model.learning_rate = 5e-3
        cls.config.train = TrainConfig(epochs=3, patience=3, holdout_fraction=0.0)
        cls.result = train(gated_flows(training_apps, n_flows=10, seed=0), cls.config)
        cls.checkpoint = cls.temp_dir / "model.ckpt"
        save_checkpoint(cls.result.checkpoint, cls.checkpoint)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def test_training_used_the_whole_corpus(self):
        self.assertEqual(len(self.result.train_flows), 200)
        self.assertEqual(self.result.skipped_steps, 0)

    def test_ranks_beat_random_order_on_held_out_apps(self):
        held_out = gated_flows(self.unseen_apps[:5], n_flows=4, seed=500)
        report = evaluate(self.result.model, held_out, self.config.model.label_variance)
        self.assertGreater(len(report.states), 300)
        self.assertGreaterEqual(report.top_n(1), 2.0 * report.random_top_n(1))
        self.assertLessEqual(statistics.median(report.percentile_ranks()), 0.30)

    def test_guided_exploration_reaches_targets_sooner(self):
        policies = ["model-weighted", "random"]
        tasks = build_tasks(self.unseen_apps, policies, range(5), COMPARE_BUDGET, checkpoint=str(self.checkpoint))
        results = run_sessions(tasks, workers=2)
        self.assertFalse(any(r.failed for r in results))
        guided, uniform = summarize(results, policies, COMPARE_BUDGET)
        self.assertEqual(guided.sessions, 100)
        self.assertLessEqual(guided.median_steps_to_target, 0.7 * uniform.median_steps_to_target)


@pytest.mark.slow
class TestExplorationCompleteness(unittest.TestCase):
    """Both policies cover strongly connected apps completely."""

    def test_full_coverage_within_five_times_the_action_count(self):
        model = InteractionNet(tiny_model_config())
        for spec in make_benchmark_suite("uniform", 10, seed=21):
            self.assertLessEqual(len(spec.states), 40)
            total = spec.total_actions()
            coverage = {}
            for variant in ("model-weighted", "random"):
                policy = ExplorationPolicy(variant, seed=0, model=model if variant != "random" else None)
                _, log = run_exploration(SimSession(spec, seed=0), policy, budget=5 * total)
                coverage[variant] = log.records[-1].actions_explored / total
            with self.subTest(app=spec.app_id):
                self.assertEqual(coverage, {"model-weighted": 1.0, "random": 1.0})


@pytest.mark.slow
class TestScoringLatency(unittest.TestCase):

    def test_one_state_scores_within_half_a_second(self):
        model = InteractionNet(ModelConfig())
        state = make_benchmark_suite("wide", 1, seed=3)[0].states["home"]
        policy = ExplorationPolicy("model-greedy", model=model)
        context = UiContext(current=state)
        candidates = enumerate_actions(state)
        policy.scores(context, candidates)
        timings = []
        for _ in range(5):
            started = time.perf_counter()
            policy.scores(context, candidates)
            timings.append(time.perf_counter() - started)
        self.assertLess(statistics.median(timings), 0.5)


if __name__ == '__main__':
    unittest.main()
