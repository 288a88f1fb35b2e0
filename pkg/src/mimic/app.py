"""
Command line interface for Mimic Explorer
"""

import argparse
import csv
import json
import logging
import statistics
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .benchmark import make_benchmark_suite, mean_actions_per_state
from .checkpoint import load_model, save_checkpoint
from .compare import build_tasks, run_sessions, summarize, write_report
from .config import ConfigManager, RunConfig, parse_dims
from .errors import MimicError, UsageError
from .explorer import ExplorationPolicy, run_exploration
from .models import action_count_cdf
from .raster import dump_context, dump_png, encode_context, encode_flow, flow_contexts, render_skeleton
from .sim import SimAppSpec, SimSession, coverage, generate_traces, load_suite, save_suite, write_raw_corpus
from .traces import prep_directory, read_corpus, write_corpus
from .training import evaluate, train, write_loss_csv, write_metrics_csv, write_rank_dump

logger = logging.getLogger(__name__)

DEBUG_DUMP_LIMIT = 5


def setup_logging(debug: bool = False, log_file: Optional[str] = None):
    """Setup logging configuration."""
    level = logging.DEBUG if debug else logging.INFO

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    if log_file:
        try:
            Path(log_file).parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(formatter)
            root.addHandler(file_handler)
        except OSError as e:
            logger.error(f"Failed to setup file logging: {e}")

    root.setLevel(level)


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting bad usage as UsageError."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", metavar="PATH", help="Configuration file (JSON or TOML)")
    common.add_argument("--seed", type=int, help="Global random seed")
    common.add_argument("--dims", type=parse_dims, metavar="WxH", help="Raster size, e.g. 45x80")
    common.add_argument("--policy", choices=["model-greedy", "model-weighted", "random"],
                        help="Exploration policy")
    common.add_argument("--budget", type=int, metavar="N", help="Maximum inputs per exploration session")
    common.add_argument("--checkpoint", metavar="PATH", help="Model checkpoint")
    common.add_argument("--out", metavar="DIR", help="Output directory")
    common.add_argument("--workers", type=int, metavar="N", help="Parallel exploration sessions")
    common.add_argument("--debug", "-d", action="store_true", help="Enable debug logging")
    common.add_argument("--log-file", metavar="PATH", help="Also write the log to a file")
    common.add_argument("--dump-images", action="store_true", help="Write PNG debug images of encoded inputs")
    return common


def create_argument_parser() -> argparse.ArgumentParser:
    """Create command line argument parser."""
    common = _common_options()
    parser = ArgumentParser(
        prog="mimic",
        description="Mimic Explorer - learn interaction patterns from traces and explore apps with them",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  mimic synth --out out/suite                    # Generate a gated benchmark suite
  mimic gen-traces out/suite --raw --out out/data
  mimic prep out/data/raw --out out/prepped      # Traces to flows
  mimic train out/data/corpus --out out/model
  mimic eval out/data/corpus --checkpoint out/model/model.ckpt --out out/eval
  mimic explore out/suite --policy random --budget 500 --out out/explore
  mimic compare out/suite --checkpoint out/model/model.ckpt --workers 4 --out out/compare
        """
    )
    parser.add_argument("--version", "-v", action="store_true", help="Show version information and exit")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    prep = sub.add_parser("prep", parents=[common], help="Extract flows from raw pointer traces")
    prep.add_argument("raw_dir", help="Directory with traces/ and states/")

    synth = sub.add_parser("synth", parents=[common], help="Generate a benchmark suite of synthetic apps")
    synth.add_argument("--kind", choices=["gated", "uniform", "wide"], help="Suite kind")
    synth.add_argument("--count", type=int, help="Number of apps")
    synth.add_argument("--bias", type=float, help="Preference weight of gate actions")

    gen = sub.add_parser("gen-traces", parents=[common], help="Generate scripted-user flows from a suite")
    gen.add_argument("suite", help="Suite directory or spec file")
    gen.add_argument("--n-flows", type=int, help="Flows per app")
    gen.add_argument("--flow-len", type=int, help="Actions per flow")
    gen.add_argument("--raw", action="store_true", help="Also write raw pointer traces")

    tr = sub.add_parser("train", parents=[common], help="Train the interaction model on a flow corpus")
    tr.add_argument("corpus", help="Flow corpus directory")
    tr.add_argument("--epochs", type=int, help="Maximum epochs")

    ev = sub.add_parser("eval", parents=[common], help="Top-N and percentile-rank evaluation")
    ev.add_argument("corpus", help="Held-out flow corpus directory")

    ex = sub.add_parser("explore", parents=[common], help="Explore one synthetic app")
    ex.add_argument("suite", help="Suite directory or spec file")
    ex.add_argument("--app", help="App id (default: first app)")

    cmp_ = sub.add_parser("compare", parents=[common], help="Compare exploration policies over a suite")
    cmp_.add_argument("suite", help="Suite directory or spec file")
    cmp_.add_argument("--policies", nargs="+", help="Policies to compare")
    cmp_.add_argument("--seeds", type=int, help="Seeds per app and policy")

    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Configuration file plus command line overrides."""
    manager = ConfigManager(args.config)
    manager.load_config()
    overrides = {
        "seed": args.seed,
        "model.seed": args.seed,
        "dims": args.dims,
        "explore.policy": args.policy,
        "explore.budget": args.budget,
        "compare.budget": args.budget,
        "workers": args.workers,
        "paths.checkpoint": args.checkpoint,
        "paths.out": args.out,
        "debug_dumps": True if args.dump_images else None,
        "suite.kind": getattr(args, "kind", None),
        "suite.count": getattr(args, "count", None),
        "suite.bias": getattr(args, "bias", None),
        "corpus.n_flows": getattr(args, "n_flows", None),
        "corpus.flow_len": getattr(args, "flow_len", None),
        "train.epochs": getattr(args, "epochs", None),
        "compare.policies": getattr(args, "policies", None),
        "compare.seeds": getattr(args, "seeds", None),
    }
    return manager.apply_overrides(**overrides)


def _require_path(path: str, what: str) -> Path:
    resolved = Path(path)
    if not resolved.exists():
        raise UsageError(f"{what} not found: {resolved}", field=what, value=str(resolved))
    return resolved


def _write_metric_rows(path: Path, rows: Sequence[Sequence], header: str, columns: Sequence[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(f"# {header}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def cmd_prep(args: argparse.Namespace, config: RunConfig) -> int:
    raw_dir = _require_path(args.raw_dir, "raw_dir")
    out = Path(config.paths.out)
    tc = config.traces
    flows, failures = prep_directory(raw_dir, tc.touch_radius_px, tc.long_touch_ms, tc.text_gap_ms,
                                     tc.text_placeholder)
    write_corpus(flows, out, config.header())
    states = [state for flow in flows for state in flow.states]
    summary = [
        ("flows", len(flows)),
        ("failed_traces", len(failures)),
        ("mean_actions_per_flow", f"{statistics.fmean(len(f) for f in flows):.3f}" if flows else "0"),
        ("distinct_states", len({state.fingerprint for state in states})),
    ]
    _write_metric_rows(out / "prep_summary.csv", summary, config.header(), ["metric", "value"])
    cdf = [(count, f"{fraction:.6f}") for count, fraction in action_count_cdf(states)]
    _write_metric_rows(out / "action_cdf.csv", cdf, config.header(), ["actions", "cumulative_fraction"])
    for name, reason in failures:
        print(f"malformed: {name}: {reason}", file=sys.stderr)
    print(f"Extracted {len(flows)} flows ({len(failures)} malformed traces) into {out}")
    return 0


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    sc = config.suite
    specs = make_benchmark_suite(sc.kind, sc.count, config.seed, sc.bias, sc.max_states)
    out = Path(config.paths.out)
    save_suite(specs, out, config.header())
    print(f"Wrote {len(specs)} {sc.kind} apps to {out} "
          f"(mean {mean_actions_per_state(specs):.1f} actions per state)")
    return 0


def cmd_gen_traces(args: argparse.Namespace, config: RunConfig) -> int:
    specs = load_suite(_require_path(args.suite, "suite"))
    out = Path(config.paths.out)
    flows = []
    for index, spec in enumerate(specs):
        corpus = generate_traces(spec, config.corpus.n_flows, config.corpus.flow_len,
                                 config.seed + index, emit_raw=args.raw)
        flows.extend(corpus.flows)
        if args.raw:
            write_raw_corpus(corpus, out / "raw", config.header())
    write_corpus(flows, out / "corpus", config.header())
    print(f"Generated {len(flows)} flows from {len(specs)} apps into {out}")
    return 0


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    flows = read_corpus(_require_path(args.corpus, "corpus"))
    out = Path(config.paths.out)
    result = train(flows, config)
    checkpoint_path = out / "model.ckpt"
    save_checkpoint(result.checkpoint, checkpoint_path)
    write_loss_csv(result.history, out / "loss.csv", config.header())
    split = {
        "header": config.header(),
        "train_apps": sorted({f.app_id for f in result.train_flows}),
        "heldout_apps": sorted({f.app_id for f in result.heldout_flows}),
    }
    (out / "split.json").write_text(json.dumps(split, indent=1, sort_keys=True) + "\n", encoding='utf-8')
    if config.debug_dumps and flows:
        samples = encode_flow(flows[0], config.dims, config.model.label_variance)
        for index, (tensor, _, _) in enumerate(samples[:DEBUG_DUMP_LIMIT]):
            dump_context(tensor, out / "debug", f"train_sample{index}")
    print(f"Trained {result.checkpoint.step} steps; checkpoint at {checkpoint_path}")
    return 0


def _model_path(config: RunConfig) -> str:
    if not config.paths.checkpoint:
        raise UsageError("This command needs --checkpoint", field="checkpoint")
    return str(_require_path(config.paths.checkpoint, "checkpoint"))


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    flows = read_corpus(_require_path(args.corpus, "corpus"))
    model = load_model(_model_path(config))
    out = Path(config.paths.out)
    report = evaluate(model, flows, config.model.label_variance, config.traces.text_placeholder)
    write_metrics_csv(report, out / "metrics.csv", config.header())
    write_rank_dump(report, out / "ranks.csv", out / "scores.csv", config.header())
    if config.debug_dumps and flows:
        for index, ctx in enumerate(flow_contexts(flows[0])[:DEBUG_DUMP_LIMIT]):
            tensor = encode_context(ctx, model.config.dims, config.model.label_variance)
            dump_context(tensor, out / "debug", f"eval_state{index}")
            dump_png(model.predict(tensor)[1], out / "debug" / f"eval_state{index}_heatmap.png")
    for name, value in report.metrics():
        print(f"{name},{value:.6f}")
    return 0


def _pick_app(specs: List[SimAppSpec], app_id: Optional[str]) -> SimAppSpec:
    if app_id is None:
        return specs[0]
    for spec in specs:
        if spec.app_id == app_id:
            return spec
    raise UsageError(f"App '{app_id}' not in suite", field="app", value=app_id)


def cmd_explore(args: argparse.Namespace, config: RunConfig) -> int:
    specs = load_suite(_require_path(args.suite, "suite"))
    if not specs:
        raise UsageError("Suite contains no apps", field="suite")
    spec = _pick_app(specs, args.app)
    policy_name = config.explore.policy
    model = load_model(_model_path(config)) if policy_name != "random" else None
    policy = ExplorationPolicy(policy_name, seed=config.seed, model=model, variance=config.model.label_variance)
    session = SimSession(spec, seed=config.seed)
    utg, log = run_exploration(session, policy, config.explore.budget, config.traces.text_placeholder)

    out = Path(config.paths.out)
    log.to_csv(out / "exploration.csv", config.header())
    (out / "utg.dot").write_text(f"// {config.header()}\n" + utg.to_dot(), encoding='utf-8')
    if config.debug_dumps:
        for node in list(utg.nodes.values())[:DEBUG_DUMP_LIMIT]:
            dump_png(render_skeleton(node.exemplar, config.dims), out / "debug" / f"state_{node.fingerprint}.png")

    explored = set()
    for fingerprint, element, kind in utg.explored_keys():
        name = spec.state_name(utg.nodes[fingerprint].exemplar)
        if name is not None:
            explored.add((name, element, kind))
    print(f"{spec.app_id}: {len(log.records)} steps, {utg.states_seen} states, "
          f"coverage {coverage(spec, explored):.3f}, first target at step {log.first_target_step}")
    if log.failure is not None:
        print(f"session failed: {log.failure}", file=sys.stderr)
    return 0


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> int:
    specs = load_suite(_require_path(args.suite, "suite"))
    cc = config.compare
    policies = list(cc.policies)
    checkpoint = _model_path(config) if any(p != "random" for p in policies) else None
    seeds = range(config.seed, config.seed + cc.seeds)
    tasks = build_tasks(specs, policies, seeds, cc.budget, checkpoint,
                        config.model.label_variance, config.traces.text_placeholder)
    logger.info(f"Running {len(tasks)} sessions on {config.workers} workers")
    results = run_sessions(tasks, config.workers)
    write_report(results, policies, cc.budget, Path(config.paths.out), config.header())
    for summary in summarize(results, policies, cc.budget):
        print(f"{summary.policy}: median steps to target {summary.median_steps_to_target}, "
              f"median coverage {summary.median_final_coverage:.3f}, failed {summary.failed}")
    return 0


COMMANDS = {
    "prep": cmd_prep,
    "synth": cmd_synth,
    "gen-traces": cmd_gen_traces,
    "train": cmd_train,
    "eval": cmd_eval,
    "explore": cmd_explore,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point.

    Returns:
        int: 0 on success, 1 usage error, 2 data error, 3 internal error
    """
    parser = create_argument_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e.message, file=sys.stderr)
        return e.exit_code

    if args.version:
        print(f"mimic-explorer {__version__}")
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return UsageError.exit_code

    setup_logging(args.debug, args.log_file)
    try:
        config = load_run_config(args)
        return COMMANDS[args.command](args, config)
    except MimicError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
