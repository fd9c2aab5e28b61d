"""
Command-line pipeline: simulate -> aggregate -> classify -> score.

Exit codes: 0 success, 1 usage error, 2 data error (bad input files,
configuration or scenario), 3 annealing failure.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .classify import DecisionLog
from .config import PipelineConfig, load_config
from .domain import read_report_log, read_situation_picture, read_tracks, save_report_log
from .errors import AnnealingError, NonConvergenceError
from .pipeline import aggregate_reports, classify_tracks
from .scengen import GroundTruth, generate_scenario, load_scenario, score
from .writers import SituationWriter, TrackWriter, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3


class PipelineArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    common = PipelineArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, metavar="N", help="override the seed")
    common.add_argument("--k-max", type=int, metavar="N", help="largest cluster count tried")
    common.add_argument("--threshold", type=float, metavar="X",
                        help="total weight of conflict accepted when choosing K")
    common.add_argument("--templates", metavar="PATH", help="unit templates JSON")
    common.add_argument("--tree", metavar="PATH", help="classification tree JSON")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = PipelineArgumentParser(prog="force-aggregator",
                                    description="Conflict-based force aggregation pipeline")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    simulate = commands.add_parser("simulate", parents=[common], help="generate a report log")
    simulate.add_argument("spec", help="scenario JSON")
    simulate.add_argument("out", help="report log to write (JSON lines)")
    simulate.add_argument("--truth", metavar="PATH", help="also write the ground truth JSON")
    simulate.set_defaults(func=cmd_simulate)

    aggregate = commands.add_parser("aggregate", parents=[common], help="cluster reports into tracks")
    aggregate.add_argument("log", help="report log (JSON lines or CSV)")
    aggregate.add_argument("out", help="tracks JSON to write")
    aggregate.add_argument("--trace", metavar="PATH", help="annealing convergence CSV")
    aggregate.set_defaults(func=cmd_aggregate)

    classify = commands.add_parser("classify", parents=[common], help="aggregate tracks into units")
    classify.add_argument("tracks", help="tracks JSON written by aggregate")
    classify.add_argument("out", help="situation picture JSON to write")
    classify.add_argument("--decision-log", metavar="PATH", help="write the solver's decisions")
    classify.add_argument("--company", action="store_true",
                          help="also aggregate units into companies (experimental)")
    classify.set_defaults(func=cmd_classify)

    score_cmd = commands.add_parser("score", parents=[common], help="grade a picture against names")
    score_cmd.add_argument("picture", help="situation picture JSON")
    score_cmd.add_argument("log", help="report log carrying ground-truth names")
    score_cmd.set_defaults(func=cmd_score)

    config = commands.add_parser("config", parents=[common], help="show the configuration")
    config.add_argument("--dump", action="store_true", required=True,
                        help="print the effective configuration as JSON")
    config.set_defaults(func=cmd_config)

    run = commands.add_parser("run", parents=[common], help="simulate, aggregate, classify and score")
    run.add_argument("spec", help="scenario JSON")
    run.add_argument("out_dir", help="directory for all outputs")
    run.add_argument("--trace", action="store_true", help="also write the convergence trace")
    run.add_argument("--company", action="store_true",
                     help="also aggregate units into companies (experimental)")
    run.set_defaults(func=cmd_run)
    return parser


def _configure_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s", force=True)


def _effective_config(args) -> PipelineConfig:
    config = load_config(args.config)
    return config.with_overrides(seed=args.seed, k_max=args.k_max, threshold=args.threshold,
                                 templates_path=args.templates, tree_path=args.tree)


def _simulate(args, config: PipelineConfig, out: Path, truth_path: Optional[Path]) -> None:
    spec = load_scenario(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    truth, reports = generate_scenario(spec, config.templates(), config.tree())
    save_report_log(reports, out)
    if truth_path is not None:
        write_json(truth.to_dict(), truth_path)
    logger.info("Wrote %d reports to %s", len(reports), out)


def cmd_simulate(args, config: PipelineConfig) -> int:
    _simulate(args, config, Path(args.out), Path(args.truth) if args.truth else None)
    return EXIT_OK


def cmd_aggregate(args, config: PipelineConfig) -> int:
    tree = config.tree()
    reports = read_report_log(args.log, tree)
    logger.info("Read %d reports from %s", len(reports), args.log)
    result = aggregate_reports(reports, config, tree)
    writer = TrackWriter(result)
    writer.write_tracks(args.out)
    if args.trace:
        writer.write_trace(args.trace)
    return EXIT_OK


def cmd_classify(args, config: PipelineConfig) -> int:
    tree = config.tree()
    tracks = read_tracks(args.tracks, tree) if Path(args.tracks).read_text(encoding="utf-8").strip() else []
    log = DecisionLog()
    picture = classify_tracks(tracks, config, tree=tree, company=args.company, decision_log=log)
    writer = SituationWriter(picture, log)
    writer.write_picture(args.out)
    if args.decision_log:
        writer.write_decision_log(args.decision_log)
    return EXIT_OK


def cmd_score(args, config: PipelineConfig) -> int:
    tree = config.tree()
    picture = read_situation_picture(args.picture, tree)
    truth = GroundTruth.from_reports(read_report_log(args.log, tree), tree)
    print(json.dumps(score(picture, truth).to_dict(), indent=2))
    return EXIT_OK


def cmd_config(args, config: PipelineConfig) -> int:
    print(json.dumps(config.to_dict(), indent=2))
    return EXIT_OK


def cmd_run(args, config: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tree = config.tree()
    _simulate(args, config, out_dir / "reports.jsonl", out_dir / "truth.json")

    reports = read_report_log(out_dir / "reports.jsonl", tree)
    result = aggregate_reports(reports, config, tree)
    track_writer = TrackWriter(result)
    track_writer.write_tracks(out_dir / "tracks.json")
    if args.trace:
        track_writer.write_trace(out_dir / "trace.csv")

    log = DecisionLog()
    picture = classify_tracks(result.tracks, config, tree=tree, company=args.company,
                              decision_log=log)
    situation_writer = SituationWriter(picture, log)
    situation_writer.write_picture(out_dir / "picture.json")
    situation_writer.write_decision_log(out_dir / "decisions.json")

    metrics = score(picture, GroundTruth.from_reports(reports, tree))
    write_json(metrics.to_dict(), out_dir / "score.json")
    logger.info("Purity %.3f, unit precision %.3f, unit recall %.3f",
                metrics.purity, metrics.unit_precision, metrics.unit_recall)
    return EXIT_OK


def main(argv: List[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    _configure_logging(args)
    try:
        config = _effective_config(args)
        return args.func(args, config)
    except (NonConvergenceError, AnnealingError) as exc:
        logger.error("%s", exc)
        return EXIT_NONCONVERGENCE
    except (ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
