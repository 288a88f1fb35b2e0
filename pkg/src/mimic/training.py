"""
Training and offline evaluation of the interaction network
"""

import csv
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.cache import SkeletonCache

from . import nn
from .checkpoint import Checkpoint
from .config import RunConfig
from .errors import DataError, NonFiniteGradientError
from .models import Action, InteractionFlow, enumerate_actions
from .network import InteractionNet, rank_of, sample_labels, score_actions
from .raster import UiContext, encode_context, flow_contexts

logger = logging.getLogger(__name__)

TOP_N = (1, 3, 5, 10)

Sample = Tuple[UiContext, Action]


def split_by_app(flows: Sequence[InteractionFlow], holdout_fraction: float,
                 rng: np.random.Generator) -> Tuple[List[InteractionFlow], List[InteractionFlow]]:
    """
    Deterministic app-level train/held-out split.

    Apps are shuffled with ``rng``; at least one app stays in training.
    """
    apps = sorted({flow.app_id for flow in flows})
    order = [apps[i] for i in rng.permutation(len(apps))]
    held_count = int(round(len(apps) * holdout_fraction))
    if holdout_fraction > 0 and len(apps) > 1:
        held_count = max(1, held_count)
    held_count = min(held_count, len(apps) - 1)
    held_apps = set(order[:held_count])
    train = [f for f in flows if f.app_id not in held_apps]
    held = [f for f in flows if f.app_id in held_apps]
    return train, held


def flow_samples(flows: Sequence[InteractionFlow]) -> List[Sample]:
    """(context, ground-truth action) for every step of every flow."""
    samples: List[Sample] = []
    for flow in flows:
        samples.extend(zip(flow_contexts(flow), flow.actions))
    return samples


class BatchEncoder:
    """Encodes samples into network batches, reusing rendered skeletons."""

    def __init__(self, dims: Tuple[int, int], variance: float, cache: Optional[SkeletonCache] = None):
        self.dims = dims
        self.variance = variance
        self.cache = cache if cache is not None else SkeletonCache()

    def encode(self, samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        contexts, types, locs = [], [], []
        for ctx, action in samples:
            contexts.append(encode_context(ctx, self.dims, self.variance, self.cache))
            type_label, loc_label = sample_labels(action, ctx.current, self.dims, self.variance)
            types.append(type_label)
            locs.append(loc_label.reshape(-1))
        return np.stack(contexts), np.stack(types), np.stack(locs)


@dataclass
class LossRecord:
    epoch: int
    step: int
    train_loss: float
    heldout_loss: Optional[float] = None


@dataclass
class TrainResult:
    """Outcome of a training run."""
    model: InteractionNet
    checkpoint: Checkpoint
    history: List[LossRecord] = field(default_factory=list)
    train_flows: List[InteractionFlow] = field(default_factory=list)
    heldout_flows: List[InteractionFlow] = field(default_factory=list)
    skipped_steps: int = 0
    stopped_early: bool = False


def _heldout_loss(model: InteractionNet, encoder: BatchEncoder, samples: Sequence[Sample],
                  batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        contexts, types, locs = encoder.encode(chunk)
        total += float(model.batch_loss(contexts, types, locs).data) * len(chunk)
    return total / len(samples)


def train(flows: Sequence[InteractionFlow], config: RunConfig,
          model: Optional[InteractionNet] = None) -> TrainResult:
    """
    Train the interaction network on aligned flows.

    Samples are shuffled per epoch with a generator seeded from the model
    config. Training stops after ``train.epochs`` epochs, after
    ``train.max_steps`` updates, or when the held-out loss has not improved
    for ``train.patience`` epochs; the best held-out weights are kept.

    Raises:
        DataError: If there is nothing to train on
    """
    mcfg, tcfg = config.model, config.train
    rng = np.random.default_rng(mcfg.seed)
    train_flows, held_flows = split_by_app(flows, tcfg.holdout_fraction, rng)
    train_samples = flow_samples(train_flows)
    held_samples = flow_samples(held_flows)
    if not train_samples:
        raise DataError("Training set is empty", field="flows", value=len(flows))
    logger.info(f"Training on {len(train_samples)} samples from {len(train_flows)} flows, "
                f"{len(held_samples)} held-out samples")

    model = model if model is not None else InteractionNet(mcfg)
    encoder = BatchEncoder(mcfg.dims, mcfg.label_variance)
    params = model.parameters()
    history: List[LossRecord] = []
    best_loss: Optional[float] = None
    best_params: Optional[Dict[str, np.ndarray]] = None
    stale_epochs = 0
    step = 0
    skipped = 0
    stopped_early = False

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(train_samples))
        for start in range(0, len(order), mcfg.batch_size):
            if tcfg.max_steps is not None and step >= tcfg.max_steps:
                break
            batch = [train_samples[i] for i in order[start:start + mcfg.batch_size]]
            contexts, types, locs = encoder.encode(batch)
            nn.zero_grad(params)
            loss = model.batch_loss(contexts, types, locs)
            loss.backward()
            try:
                nn.sgd_update(params, mcfg.learning_rate, mcfg.momentum, mcfg.weight_decay)
            except NonFiniteGradientError as e:
                logger.warning(f"Epoch {epoch} step {step + 1}: {e}")
                skipped += 1
            step += 1
            history.append(LossRecord(epoch, step, float(loss.data)))

        if held_samples and history:
            held = _heldout_loss(model, encoder, held_samples, mcfg.batch_size)
            history[-1].heldout_loss = held
            logger.info(f"Epoch {epoch}: train loss {history[-1].train_loss:.4f}, held-out loss {held:.4f}")
            if best_loss is None or held < best_loss:
                best_loss = held
                best_params = {name: p.data.copy() for name, p in model.params.items()}
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= tcfg.patience:
                    logger.info(f"Early stop after epoch {epoch}: no held-out improvement "
                                f"for {tcfg.patience} epochs")
                    stopped_early = True
                    break
        elif history:
            logger.info(f"Epoch {epoch}: train loss {history[-1].train_loss:.4f}")
        if tcfg.max_steps is not None and step >= tcfg.max_steps:
            break

    if best_params is not None:
        for name, data in best_params.items():
            model.params[name].data = data
    checkpoint = Checkpoint.from_model(model, step=step, rng=rng, run_header=config.header())
    return TrainResult(model, checkpoint, history, list(train_flows), list(held_flows), skipped, stopped_early)


def write_loss_csv(history: Sequence[LossRecord], path: Path, header: str = ""):
    """One row per update; held-out loss is filled on each epoch's last step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        if header:
            f.write(f"# {header}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "step", "train_loss", "heldout_loss"])
        for record in history:
            held = "" if record.heldout_loss is None else f"{record.heldout_loss:.6f}"
            writer.writerow([record.epoch, record.step, f"{record.train_loss:.6f}", held])


@dataclass
class StateScore:
    """Ranking outcome for one evaluated state."""
    state_index: int
    k: int
    rank: int
    scores: List[float]
    truth_index: int
    latency_ms: float


@dataclass
class EvalReport:
    """Top-N accuracy, percentile ranks and their random-order baselines."""
    states: List[StateScore]
    skipped: int = 0

    def top_n(self, n: int) -> float:
        if not self.states:
            return 0.0
        return sum(1 for s in self.states if s.rank <= n) / len(self.states)

    def random_top_n(self, n: int) -> float:
        if not self.states:
            return 0.0
        return sum(min(n, s.k) / s.k for s in self.states) / len(self.states)

    def percentile_ranks(self) -> List[float]:
        return [s.rank / s.k for s in self.states]

    def metrics(self, include_latency: bool = True) -> List[Tuple[str, float]]:
        rows: List[Tuple[str, float]] = []
        for n in TOP_N:
            rows.append((f"top{n}_accuracy", self.top_n(n)))
        for n in TOP_N:
            rows.append((f"random_top{n}_accuracy", self.random_top_n(n)))
        percentiles = self.percentile_ranks()
        rows.append(("percentile_rank_mean", statistics.fmean(percentiles) if percentiles else 0.0))
        rows.append(("percentile_rank_median", statistics.median(percentiles) if percentiles else 0.0))
        rows.append(("states", float(len(self.states))))
        rows.append(("skipped_states", float(self.skipped)))
        if include_latency:
            latencies = [s.latency_ms for s in self.states]
            rows.append(("latency_ms_mean", statistics.fmean(latencies) if latencies else 0.0))
            rows.append(("latency_ms_median", statistics.median(latencies) if latencies else 0.0))
        return rows


def evaluate(model: InteractionNet, flows: Sequence[InteractionFlow], variance: float,
             placeholder: str = "hello", cache: Optional[SkeletonCache] = None) -> EvalReport:
    """
    Rank every ground-truth action among its state's enumerated actions.

    States whose ground truth is not enumerable are skipped and counted.
    """
    dims = model.config.dims
    cache = cache if cache is not None else SkeletonCache()
    results: List[StateScore] = []
    skipped = 0
    for ctx, action in flow_samples(flows):
        candidates = enumerate_actions(ctx.current, placeholder)
        truth = next((i for i, a in enumerate(candidates) if a.key == action.key), None)
        if truth is None:
            logger.warning(f"Ground truth {action.label()} not enumerable in state {ctx.current.fingerprint}")
            skipped += 1
            continue
        started = time.perf_counter()
        p_type, p_loc = model.predict(encode_context(ctx, dims, variance, cache))
        scores = score_actions(p_type, p_loc, candidates, ctx.current)
        latency = (time.perf_counter() - started) * 1000.0
        results.append(StateScore(len(results), len(candidates), rank_of(scores, truth), scores, truth, latency))
    logger.info(f"Evaluated {len(results)} states ({skipped} skipped)")
    return EvalReport(results, skipped)


def write_metrics_csv(report: EvalReport, path: Path, header: str = ""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        if header:
            f.write(f"# {header}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in report.metrics():
            writer.writerow([name, f"{value:.6f}"])


def write_rank_dump(report: EvalReport, ranks_path: Path, scores_path: Path, header: str = ""):
    """Per-state ranks and raw scores, enough to re-rank independently."""
    with open(ranks_path, 'w', newline='', encoding='utf-8') as f:
        if header:
            f.write(f"# {header}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["state_index", "k", "rank"])
        for state in report.states:
            writer.writerow([state.state_index, state.k, state.rank])
    with open(scores_path, 'w', newline='', encoding='utf-8') as f:
        if header:
            f.write(f"# {header}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["state_index", "action_index", "score", "is_truth"])
        for state in report.states:
            for index, score in enumerate(state.scores):
                writer.writerow([state.state_index, index, repr(score), int(index == state.truth_index)])
