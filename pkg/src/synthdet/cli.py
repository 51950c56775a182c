"""Command-line surface: one subcommand per pipeline stage plus `run`.

Exit codes: 0 success, 2 configuration error, 3 missing stage dependency,
4 backend failure, 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig, apply_env_overrides, load_config
from .errors import (BackendError, ConfigError, DependencyError, ShortfallError,
                     SynthdetError)
from .generation import Regime
from .pipeline import STAGES, Pipeline
from .reporting import read_runs, write_report_files

_COMMAND_STAGES = {stage.replace("_", "-"): stage for stage in STAGES}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthdet",
        description="Synthetic detection-training data pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file (yaml or json)")
    common.add_argument("--regime", choices=["r8", "r24"],
                        help="override the data regime")
    common.add_argument("--mock", action="store_true",
                        help="force every backend to the in-repo mocks")
    common.add_argument("--workers", type=int, help="parallel worker count")
    common.add_argument("--seed-set", help="comma-separated run seeds, e.g. 0,1,2")
    common.add_argument("--output-root", help="override the output directory")
    common.add_argument("--images-per-class", type=int,
                        help="override synthetic images per class")

    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common],
                         help="run several stages in order")
    run.add_argument("--stages",
                     help=f"comma-separated subset of: {', '.join(STAGES)}")
    for command in _COMMAND_STAGES:
        stage_parser = sub.add_parser(command, parents=[common],
                                      help=f"run the {command} stage")
        if command == "report":
            stage_parser.add_argument(
                "--runs-file",
                help="render reports from this recorded-metrics file instead "
                     "of the pipeline's own")
    return parser


def _resolve_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    config = apply_env_overrides(config)
    if args.regime:
        config = replace(config, regime=Regime(args.regime))
    if args.workers:
        config = replace(config, workers=args.workers)
    if args.seed_set:
        try:
            seeds = tuple(int(s) for s in args.seed_set.split(",") if s != "")
        except ValueError:
            raise ConfigError("seed_set", f"not a seed list: {args.seed_set!r}")
        config = replace(config, seeds=seeds)
    if args.output_root:
        config = replace(config, output_root=args.output_root)
    if args.images_per_class:
        config = replace(config, images_per_class=args.images_per_class)
    if args.mock:
        config = config.with_mock_backends()
    return config


def _stages_for(args) -> tuple[str, ...]:
    if args.command == "run":
        if args.stages:
            requested = tuple(s.strip().replace("-", "_")
                              for s in args.stages.split(",") if s.strip())
            unknown = [s for s in requested if s not in STAGES]
            if unknown:
                raise ConfigError("stages", f"unknown stage(s) {unknown}")
            return requested
        return STAGES
    return (_COMMAND_STAGES[args.command],)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)

        if args.command == "report" and getattr(args, "runs_file", None):
            runs = read_runs(args.runs_file)
            paths = write_report_files(runs, Path(config.output_root) / "reports")
            for name, path in sorted(paths.items()):
                print(f"[ ok ] report: {name} -> {path}")
            return 0

        pipeline = Pipeline(config)
        for result in pipeline.run(_stages_for(args)):
            status = "skip" if result.skipped else " ok "
            print(f"[{status}] {result.stage}: {len(result.artifacts)} artifacts")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except (BackendError, ShortfallError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 4
    except SynthdetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
