"""
Training and evaluation tests for Mimic Explorer
"""

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from mimic.config import RunConfig, TrainConfig
from mimic.errors import DataError
from mimic.models import Action, ActionType, InteractionFlow
from mimic.network import InteractionNet, action_loss, sample_labels
from mimic.raster import encode_context
from mimic.sim import generate_traces
from mimic.training import (
    EvalReport,
    StateScore,
    evaluate,
    flow_samples,
    split_by_app,
    train,
    write_loss_csv,
    write_metrics_csv,
    write_rank_dump,
)

from .fixtures import chain_app, make_state, tiny_model_config


def tiny_run_config(max_steps: int = 2) -> RunConfig:
    return RunConfig(
        seed=1,
        model=tiny_model_config(),
        train=TrainConfig(epochs=2, patience=1, holdout_fraction=0.5, max_steps=max_steps),
    )


def corpus(apps=("a", "b", "c"), n_flows: int = 2, flow_len: int = 4):
    flows = []
    for index, app_id in enumerate(apps):
        flows.extend(generate_traces(chain_app(app_id), n_flows, flow_len, seed=index).flows)
    return flows


def score(rank: int, k: int) -> StateScore:
    return StateScore(state_index=0, k=k, rank=rank, scores=[0.0] * k, truth_index=0, latency_ms=1.0)


class TestSplitByApp(unittest.TestCase):
    """Test the app-level held-out split."""

    def test_apps_do_not_leak(self):
        flows = corpus(apps=("a", "b", "c", "d", "e"))
        train_flows, held = split_by_app(flows, 0.4, np.random.default_rng(0))
        train_apps = {f.app_id for f in train_flows}
        held_apps = {f.app_id for f in held}
        self.assertFalse(train_apps & held_apps)
        self.assertEqual(len(held_apps), 2)
        self.assertEqual(len(train_flows) + len(held), len(flows))

    def test_single_app_stays_in_training(self):
        flows = corpus(apps=("solo",))
        train_flows, held = split_by_app(flows, 0.5, np.random.default_rng(0))
        self.assertEqual(held, [])
        self.assertEqual(len(train_flows), len(flows))

    def test_small_fraction_still_holds_out_one_app(self):
        _, held = split_by_app(corpus(apps=("a", "b")), 0.1, np.random.default_rng(0))
        self.assertEqual(len({f.app_id for f in held}), 1)

    def test_deterministic(self):
        flows = corpus()
        first = split_by_app(flows, 0.3, np.random.default_rng(5))
        second = split_by_app(flows, 0.3, np.random.default_rng(5))
        self.assertEqual(first, second)

    def test_samples_per_step(self):
        flows = corpus(apps=("a",), n_flows=2, flow_len=4)
        samples = flow_samples(flows)
        self.assertEqual(len(samples), 8)
        self.assertEqual(len(samples[3][0].history), 3)


class TestTrain(unittest.TestCase):
    """Test the training loop."""

    def test_max_steps_and_checkpoint(self):
        config = tiny_run_config(max_steps=2)
        result = train(corpus(), config)
        self.assertEqual(result.checkpoint.step, 2)
        self.assertEqual([r.step for r in result.history], [1, 2])
        self.assertTrue(all(np.isfinite(r.train_loss) for r in result.history))
        self.assertEqual(result.checkpoint.run_header, config.header())
        self.assertTrue({f.app_id for f in result.heldout_flows})

    def test_training_is_reproducible(self):
        first = train(corpus(), tiny_run_config())
        second = train(corpus(), tiny_run_config())
        self.assertEqual([r.train_loss for r in first.history], [r.train_loss for r in second.history])
        for name, value in first.checkpoint.params.items():
            np.testing.assert_array_equal(value, second.checkpoint.params[name])

    def test_loss_decreases_on_repeated_batch(self):
        config = tiny_run_config(max_steps=None)
        config.train = TrainConfig(epochs=15, patience=15, holdout_fraction=0.0)
        config.model.learning_rate = 0.05
        flows = corpus(apps=("a",), n_flows=1, flow_len=4)
        result = train(flows, config)
        self.assertLess(result.history[-1].train_loss, result.history[0].train_loss)

    @pytest.mark.slow
    def test_overfits_a_single_sample(self):
        config = tiny_run_config(max_steps=500)
        config.train = TrainConfig(epochs=500, patience=500, holdout_fraction=0.0, max_steps=500)
        config.model.learning_rate = 0.02
        config.model.weight_decay = 0.0
        config.model.label_variance = 1000.0
        flows = corpus(apps=("a",), n_flows=1, flow_len=1)
        result = train(flows, config)
        self.assertEqual(result.skipped_steps, 0)

        [(ctx, action)] = flow_samples(flows)
        dims, variance = config.model.dims, config.model.label_variance
        p_type, p_loc = result.model.predict(encode_context(ctx, dims, variance))
        loss = action_loss(p_type, p_loc, action, ctx.current, variance)
        loc_label = sample_labels(action, ctx.current, dims, variance)[1]
        entropy = -float(np.sum(loc_label[loc_label > 0] * np.log(loc_label[loc_label > 0])))
        self.assertLessEqual(loss, 1.1 * entropy)

    def test_empty_corpus(self):
        with self.assertRaises(DataError):
            train([], tiny_run_config())

    def test_write_loss_csv(self):
        temp_dir = Path(tempfile.mkdtemp())
        try:
            result = train(corpus(), tiny_run_config())
            path = temp_dir / "loss.csv"
            write_loss_csv(result.history, path, header="mimic-explorer test")
            lines = path.read_text().splitlines()
            self.assertEqual(lines[0], "# mimic-explorer test")
            self.assertEqual(lines[1], "epoch,step,train_loss,heldout_loss")
            self.assertEqual(len(lines), 2 + len(result.history))
        finally:
            shutil.rmtree(temp_dir)


class TestEvaluation(unittest.TestCase):
    """Test ranking metrics."""

    def test_top_n_and_random_baseline(self):
        report = EvalReport([score(1, 4), score(3, 4), score(2, 10)])
        self.assertAlmostEqual(report.top_n(1), 1 / 3)
        self.assertAlmostEqual(report.top_n(3), 1.0)
        self.assertAlmostEqual(report.random_top_n(1), (0.25 + 0.25 + 0.1) / 3)
        self.assertAlmostEqual(report.random_top_n(5), (1.0 + 1.0 + 0.5) / 3)
        self.assertEqual(report.percentile_ranks(), [0.25, 0.75, 0.2])

    def test_metric_names(self):
        names = [name for name, _ in EvalReport([score(1, 2)]).metrics()]
        self.assertIn("top10_accuracy", names)
        self.assertIn("random_top1_accuracy", names)
        self.assertIn("percentile_rank_median", names)
        self.assertEqual(names.count("states"), 1)

    def test_evaluate_ranks_every_state(self):
        model = InteractionNet(tiny_model_config())
        flows = corpus(apps=("a",), n_flows=1, flow_len=5)
        report = evaluate(model, flows, variance=20.0)
        self.assertEqual(len(report.states), 5)
        for state in report.states:
            self.assertEqual(state.k, 3)
            self.assertTrue(1 <= state.rank <= state.k)
            self.assertEqual(len(state.scores), state.k)

    def test_non_enumerable_truth_is_skipped(self):
        state = make_state()
        flow = InteractionFlow((state,), (Action(ActionType.SWIPE_DOWN, "ok", (60, 80)),), "odd")
        with self.assertLogs("mimic.training", level="WARNING"):
            report = evaluate(InteractionNet(tiny_model_config()), [flow], variance=20.0)
        self.assertEqual(report.skipped, 1)
        self.assertEqual(report.states, [])

    def test_dump_files(self):
        temp_dir = Path(tempfile.mkdtemp())
        try:
            report = EvalReport([score(2, 3)])
            write_metrics_csv(report, temp_dir / "metrics.csv", header="h")
            write_rank_dump(report, temp_dir / "ranks.csv", temp_dir / "scores.csv", header="h")
            self.assertIn("top1_accuracy,0.000000", (temp_dir / "metrics.csv").read_text())
            self.assertEqual((temp_dir / "ranks.csv").read_text().splitlines()[2], "0,3,2")
            self.assertEqual(len((temp_dir / "scores.csv").read_text().splitlines()), 2 + 3)
        finally:
            shutil.rmtree(temp_dir)


if __name__ == '__main__':
    unittest.main()
