"""Command line entry point.

Exit codes: 0 success, 1 IO/store/seed-run failure, 2 invalid config or
data, 130 interrupted.
"""

import argparse
import logging
import signal
import sys
import threading
from contextlib import contextmanager
from typing import Optional, Sequence

from simulation.config import ExperimentConfig, parse_config
from simulation.errors import (
    ConfigError,
    CorpusError,
    FingerprintMismatchError,
    Interrupted,
    SimulationError,
    UnknownStrategyError,
    VocabularyError,
)
from simulation.synthetic import write_planted_corpus
from tracking.pipeline import run_pipeline
from tracking.report import DEFAULT_METRIC, write_report
from tracking.store import RunStore, resolve_store_root

logger = logging.getLogger("alsim")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_INTERRUPTED = 130

_INVALID_INPUT = (ConfigError, CorpusError, UnknownStrategyError, VocabularyError, FingerprintMismatchError)


@contextmanager
def interrupt_handler(stop_event: threading.Event):
    """First Ctrl-C stops seed runs at the next step boundary, the second aborts."""

    def handle(signum, frame):
        if stop_event.is_set():
            raise KeyboardInterrupt
        logger.warning("interrupt received, stopping after the current step")
        stop_event.set()

    if threading.current_thread() is not threading.main_thread():
        yield
        return
    previous = signal.signal(signal.SIGINT, handle)
    try:
        yield
    finally:
        signal.signal(signal.SIGINT, previous)


def _load_config(args) -> ExperimentConfig:
    return parse_config(args.config, args.set)


def _open_store(args, cfg: Optional[ExperimentConfig] = None) -> RunStore:
    configured = cfg.tracking.store_root if cfg is not None else None
    return RunStore(resolve_store_root(args.store, configured))


def cmd_convert(args) -> int:
    cfg = _load_config(args)
    result = run_pipeline(cfg, _open_store(args, cfg), resume=args.resume, convert_only=True)
    print(result.steps["convert"])
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    store = _open_store(args, cfg)
    stop_event = threading.Event()
    with interrupt_handler(stop_event):
        result = run_pipeline(cfg, store, resume=args.resume, stop_event=stop_event)
    logger.info("%d seed runs aggregated into %s", len(result.experiment.curves), result.steps["aggregate"])
    print(result.steps["aggregate"])
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_config(args) if args.config else None
    run_ids = [run_id.strip() for run_id in args.runs.split(",") if run_id.strip()]
    if not run_ids:
        raise ConfigError("--runs needs at least one run id")
    written = write_report(_open_store(args, cfg), run_ids, args.out, args.threshold, args.metric)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    print(write_planted_corpus(args.out, args.train, args.dev, args.test, args.seed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config leaf, e.g. experiment.step_size=1000 (repeatable)",
    )
    common.add_argument("--store", help="run store directory (beats the environment and the config)")
    common.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])

    parser = argparse.ArgumentParser(description="Active learning simulation harness")
    commands = parser.add_subparsers(dest="command", required=True)

    convert = commands.add_parser("convert", parents=[common], help="copy and convert the raw corpus")
    convert.add_argument("--resume", action="store_true", help="reopen failed conversion records")
    convert.set_defaults(handler=cmd_convert, needs_config=True)

    run = commands.add_parser("run", parents=[common], help="convert, run all seeds and aggregate")
    run.add_argument("--resume", action="store_true", help="continue failed or interrupted seed runs")
    run.set_defaults(handler=cmd_run, needs_config=True)

    report = commands.add_parser("report", parents=[common], help="export CSVs and a comparison plot")
    report.add_argument("--runs", required=True, help="comma-separated aggregate run ids")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--threshold", type=float, help="report where each mean curve first reaches this value")
    report.add_argument("--metric", default=DEFAULT_METRIC, help="metric to plot")
    report.set_defaults(handler=cmd_report, needs_config=False)

    synth = commands.add_parser("synthesize", parents=[common], help="write a planted-keyword corpus")
    synth.add_argument("--out", required=True, help="output directory for train/dev/test.jsonl")
    synth.add_argument("--train", type=int, default=2000)
    synth.add_argument("--dev", type=int, default=500)
    synth.add_argument("--test", type=int, default=500)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(handler=cmd_synthesize, needs_config=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.needs_config and not args.config:
        parser.error(f"{args.command} needs --config")

    try:
        return args.handler(args)
    except (Interrupted, KeyboardInterrupt) as e:
        logger.error("interrupted: %s", str(e) or "aborted")
        return EXIT_INTERRUPTED
    except _INVALID_INPUT as e:
        logger.error("%s", e)
        return EXIT_INVALID
    except (SimulationError, OSError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
