"""
Command-line entry point

    blitz-eval <command> --config run.json [--output-dir DIR] [-v] [--threads N]

Commands run the pipeline up to a stage (grid, ingest, panel, weights, fit,
effects, pipeline), generate synthetic inputs (simulate), or re-render the
tables of a previous run (report).

Exit codes: 0 success, 1 stage failure, 2 configuration or input error.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from blitz_eval.config import RunConfig, get_default_threads, load_run_config
from blitz_eval.exceptions import (
    BlitzEvalError,
    ConfigurationError,
    InputFileError,
    InvalidBoundaryError,
    StageError,
)
from blitz_eval.tools import effects as effects_tools
from blitz_eval.tools.estimator import FitResult
from blitz_eval.tools.pipeline import Pipeline, simulate_run, write_effects_outputs
from blitz_eval.tools.reporting import load_fit_dir, write_regression_table
from blitz_eval.utils.error_helper import format_error_response
from blitz_eval.utils.logger import get_logger, set_log_level
from blitz_eval.utils.manifest import RunManifest
from blitz_eval.version import __version__

logger = get_logger()

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_INPUT_ERROR = 2

STAGE_COMMANDS = {
    "grid": "grid",
    "ingest": "ingest",
    "panel": "panel",
    "weights": "weights",
    "fit": "fit",
    "effects": "effects",
    "pipeline": "effects",
}
INPUT_ERRORS = (ConfigurationError, InputFileError, InvalidBoundaryError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blitz-eval",
        description="Spatio-temporal evaluation of police blitz interventions",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="Run configuration (JSON)")
    common.add_argument("--output-dir", type=Path, help="Override paths.output_dir")
    common.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: BLITZ_EVAL_THREADS or 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "grid": "Build the hex grid and write cells.csv",
        "ingest": "Aggregate crimes and blitzes per cell-period",
        "panel": "Assemble and save the balanced panel",
        "weights": "Build weight matrices and catchment counts",
        "fit": "Fit one Poisson model per weight matrix",
        "effects": "Fit and compute the effects report",
        "pipeline": "Run every stage",
        "simulate": "Write synthetic inputs and truth from the sim block",
        "report": "Re-render the regression table and effects summary of a run",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _exit_code(error: BaseException) -> int:
    if isinstance(error, INPUT_ERRORS):
        return EXIT_INPUT_ERROR
    if isinstance(error, StageError) and isinstance(error.__cause__, INPUT_ERRORS):
        return EXIT_INPUT_ERROR
    if isinstance(error, StageError):
        return EXIT_STAGE_FAILURE
    return EXIT_INPUT_ERROR if isinstance(error, BlitzEvalError) else EXIT_STAGE_FAILURE


def _print(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, default=str))


def cmd_stage(config: RunConfig, command: str, threads: int) -> int:
    pipeline = Pipeline(config, threads=threads, command=command)
    manifest = pipeline.run(STAGE_COMMANDS[command])
    if command == "grid":
        summary = pipeline.grid().summary()
        print(f"{summary['n_cells']} cells, mean area {summary['mean_cell_area_km2']:.4f} km2")
    elif command in ("effects", "pipeline"):
        print(pipeline.effects().render_text(), end="")
    _print(manifest.get_summary())
    return EXIT_OK


def cmd_simulate(config: RunConfig, threads: int) -> int:
    manifest = simulate_run(config, threads=threads)
    _print(manifest.get_summary())
    return EXIT_OK


def cmd_report(config: RunConfig) -> int:
    output_dir = Path(config.paths.output_dir)
    fits = load_fit_dir(output_dir / "fits")
    manifest = RunManifest(output_dir, config.canonical_json(), command="report", filename="report_manifest.json")
    with manifest.stage("report", n_fits=len(fits)) as record:
        manifest.record_output(write_regression_table(fits, output_dir / "regression_table.csv"))
        label = config.effects.primary_weights if config.effects.primary_weights in fits else next(iter(fits))
        document = fits[label]
        context = document.get("context", {})
        report = effects_tools.build_effects_report(
            FitResult.from_dict(document).coefficient_map(),
            config.effects,
            avg_neighbors=context.get("avg_neighbors"),
            observed=context.get("observed"),
            weights_label=label,
        )
        manifest.record_outputs(write_effects_outputs(report, output_dir, document.get("run_hash", "")))
        record["counts"] = {"fits": sorted(fits), "primary": label}
    manifest.save()
    print(report.render_text(), end="")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        set_log_level(logging.DEBUG)

    try:
        threads = args.threads if args.threads is not None else get_default_threads()
        if threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {threads}")
        config = load_run_config(args.config)
        if args.output_dir is not None:
            config = config.with_output_dir(args.output_dir)

        if args.command == "simulate":
            return cmd_simulate(config, threads)
        if args.command == "report":
            return cmd_report(config)
        return cmd_stage(config, args.command, threads)
    except BlitzEvalError as e:
        code = _exit_code(e)
        response = format_error_response(e, {"command": args.command, "stage": getattr(e, "stage", None)})
        print(f"Error: {e.message}", file=sys.stderr)
        print(json.dumps(response, indent=2, default=str), file=sys.stderr)
        return code
    except Exception as e:
        logger.error(f"Unexpected failure in {args.command}", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
