"""
Policy comparison over a benchmark suite
"""

import csv
import functools
import itertools
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .checkpoint import load_model
from .errors import UsageError
from .explorer import ExplorationPolicy, run_exploration
from .network import InteractionNet
from .sim import SimAppSpec, SimSession

logger = logging.getLogger(__name__)


@dataclass
class SessionTask:
    """One (app, policy, seed) exploration session."""
    spec: SimAppSpec
    policy: str
    seed: int
    budget: int
    checkpoint: Optional[str] = None
    variance: float = 20.0
    text: str = "hello"


@dataclass
class SessionResult:
    app_id: str
    policy: str
    seed: int
    steps: int = 0
    first_target_step: Optional[int] = None
    final_coverage: float = 0.0
    restarts: int = 0
    curve: List[Tuple[int, float]] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@functools.lru_cache(maxsize=4)
def _cached_model(path: str) -> InteractionNet:
    return load_model(path)


def run_session(task: SessionTask) -> SessionResult:
    """Explore one app instance; failures are captured in the result."""
    result = SessionResult(task.spec.app_id, task.policy, task.seed)
    try:
        model = _cached_model(task.checkpoint) if task.policy != "random" and task.checkpoint else None
        policy = ExplorationPolicy(task.policy, seed=task.seed, model=model, variance=task.variance)
        session = SimSession(task.spec, seed=task.seed)
        _, log = run_exploration(session, policy, task.budget, task.text)
    except Exception as e:
        logger.error(f"Session {task.spec.app_id}/{task.policy}/{task.seed} failed: {e}")
        result.failure = str(e)
        return result

    total = task.spec.total_actions()
    result.steps = len(log.records)
    result.first_target_step = log.first_target_step
    result.restarts = log.restarts
    result.curve = [(r.step, r.actions_explored / total if total else 1.0) for r in log.records]
    result.final_coverage = result.curve[-1][1] if result.curve else 0.0
    result.failure = log.failure
    return result


def run_sessions(tasks: Sequence[SessionTask], workers: int = 1) -> List[SessionResult]:
    """Run sessions on a bounded process pool; results keep task order."""
    if workers <= 1:
        return [run_session(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_session, tasks))


MIN_SEEDS = 5


def build_tasks(suite: Sequence[SimAppSpec], policies: Sequence[str], seeds: Iterable[int], budget: int,
                checkpoint: Optional[str] = None, variance: float = 20.0,
                text: str = "hello") -> List[SessionTask]:
    """
    One task per app x policy x seed.

    Raises:
        UsageError: With fewer than two policies or five seeds, or a model
            policy without a checkpoint
    """
    if len(set(policies)) < 2:
        raise UsageError("Comparison needs at least two distinct policies", field="policies", value=list(policies))
    if any(p != "random" for p in policies) and checkpoint is None:
        raise UsageError("Model-guided policies need --checkpoint", field="checkpoint")
    seeds = list(seeds)
    if len(set(seeds)) < MIN_SEEDS:
        raise UsageError(f"Comparison needs at least {MIN_SEEDS} distinct seeds, got {len(set(seeds))}",
                         field="seeds", value=seeds)
    return [
        SessionTask(spec, policy, seed, budget, checkpoint, variance, text)
        for spec, policy, seed in itertools.product(suite, policies, seeds)
    ]


def censored_steps(result: SessionResult, budget: int) -> int:
    """Steps to first target; sessions that never hit count as budget + 1."""
    return result.first_target_step if result.first_target_step is not None else budget + 1


@dataclass
class PolicySummary:
    policy: str
    sessions: int
    failed: int
    target_hits: int
    median_steps_to_target: float
    median_final_coverage: float
    mean_final_coverage: float


def summarize(results: Sequence[SessionResult], policies: Sequence[str], budget: int) -> List[PolicySummary]:
    """Per-policy medians over the sessions that did not fail."""
    summaries = []
    for policy in policies:
        mine = [r for r in results if r.policy == policy]
        ok = [r for r in mine if not r.failed]
        steps = [censored_steps(r, budget) for r in ok]
        coverages = [r.final_coverage for r in ok]
        summaries.append(PolicySummary(
            policy=policy,
            sessions=len(mine),
            failed=len(mine) - len(ok),
            target_hits=sum(1 for r in ok if r.first_target_step is not None),
            median_steps_to_target=statistics.median(steps) if steps else float("nan"),
            median_final_coverage=statistics.median(coverages) if coverages else float("nan"),
            mean_final_coverage=statistics.fmean(coverages) if coverages else float("nan"),
        ))
    return summaries


def win_loss(results: Sequence[SessionResult], policies: Sequence[str],
             budget: int) -> List[Tuple[str, str, str, int, int, int]]:
    """
    Pairwise (app, seed) comparisons.

    Fewer steps to target and higher final coverage win. Pairs where either
    session failed are left out.
    """
    by_key: Dict[Tuple[str, str, int], SessionResult] = {(r.app_id, r.policy, r.seed): r for r in results}
    matches = sorted({(r.app_id, r.seed) for r in results})
    rows = []
    for first, second in itertools.combinations(policies, 2):
        for metric in ("steps_to_target", "final_coverage"):
            wins = losses = ties = 0
            for app_id, seed in matches:
                a, b = by_key.get((app_id, first, seed)), by_key.get((app_id, second, seed))
                if a is None or b is None or a.failed or b.failed:
                    continue
                if metric == "steps_to_target":
                    diff = censored_steps(b, budget) - censored_steps(a, budget)
                else:
                    diff = a.final_coverage - b.final_coverage
                if diff > 0:
                    wins += 1
                elif diff < 0:
                    losses += 1
                else:
                    ties += 1
            rows.append((first, second, metric, wins, losses, ties))
    return rows


def _writer(path: Path, header: str):
    f = open(path, 'w', newline='', encoding='utf-8')
    if header:
        f.write(f"# {header}\n")
    return f, csv.writer(f, lineterminator="\n")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_report(results: Sequence[SessionResult], policies: Sequence[str], budget: int,
                 out_dir: Path, header: str = ""):
    """Write sessions.csv, curves.csv, summary.csv and winloss.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    f, writer = _writer(out_dir / "sessions.csv", header)
    with f:
        writer.writerow(["app_id", "policy", "seed", "steps", "first_target_step", "final_coverage",
                         "restarts", "failure"])
        for r in results:
            writer.writerow([r.app_id, r.policy, r.seed, r.steps,
                             "" if r.first_target_step is None else r.first_target_step,
                             _fmt(r.final_coverage), r.restarts, r.failure or ""])

    f, writer = _writer(out_dir / "curves.csv", header)
    with f:
        writer.writerow(["app_id", "policy", "seed", "step", "coverage"])
        for r in results:
            for step, value in r.curve:
                writer.writerow([r.app_id, r.policy, r.seed, step, _fmt(value)])

    f, writer = _writer(out_dir / "summary.csv", header)
    with f:
        writer.writerow(["policy", "sessions", "failed", "target_hits", "median_steps_to_target",
                         "median_final_coverage", "mean_final_coverage"])
        for s in summarize(results, policies, budget):
            writer.writerow([s.policy, s.sessions, s.failed, s.target_hits, s.median_steps_to_target,
                             _fmt(s.median_final_coverage), _fmt(s.mean_final_coverage)])

    f, writer = _writer(out_dir / "winloss.csv", header)
    with f:
        writer.writerow(["policy_a", "policy_b", "metric", "wins", "losses", "ties"])
        for row in win_loss(results, policies, budget):
            writer.writerow(row)
    logger.info(f"Wrote comparison of {len(results)} sessions to {out_dir}")
