# backend/scipnet/cli.py
"""
Command-line entry point: simulate, train, evaluate, sweep.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
Every run writes manifest.json into its output directory before any other
output and finalizes it with output digests when done.
"""

import argparse
import pathlib
import sys
import time
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional

import torch

from .config import apply_overrides, config_help, load_config, settings
from .errors import ScipNetError, UsageError, ValidationError
from .evaluation import evaluate, load_eval_records, run_sweep, write_evaluation, write_sweep
from .logger import get_logger
from .schemas import ResolvedConfig, RunManifest
from .simulator import build_eval_records, simulate_cohort
from .trajectory import load_trajectories, save_trajectories
from .training import ModelBundle, run_pipeline
from .utils import atomic_write_text, sha256_file, write_jsonl

logger = get_logger()

MANIFEST_FILE = "manifest.json"


class ScipArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str) -> None:
        raise UsageError(message)


# -------------------------------------------------
# PARSER
# -------------------------------------------------
def build_parser() -> ScipArgumentParser:
    parser = ScipArgumentParser(
        prog="scipnet",
        description="Stabilized continuous-time inverse propensity network for CAPO estimation.",
        epilog="Configuration keys and defaults:\n\n" + config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ScipArgumentParser)

    simulate = sub.add_parser("simulate", help="simulate training and test cohorts")
    simulate.add_argument("--config", default=None, help="INI configuration file")
    simulate.add_argument("--out", default=None, help="output directory (default: $SCIPNET_OUTPUT_DIR/simulate)")
    simulate.add_argument("--seed", type=int, default=None, help="overrides simulation.seed")
    simulate.add_argument("--gamma", type=float, default=None, help="overrides simulation.gamma")
    simulate.add_argument("--omega", type=float, default=None, help="overrides simulation.omega")

    train = sub.add_parser("train", help="run the staged training pipeline")
    train.add_argument("--data", required=True, help="training trajectories (JSON-lines)")
    train.add_argument("--config", default=None)
    train.add_argument("--variant", choices=["scip", "cip", "unweighted"], default=None)
    train.add_argument("--horizon", type=int, action="append", default=None, help="horizon in days; repeatable")
    train.add_argument("--seed", type=int, default=None, help="overrides training.seed")
    train.add_argument("--out", default=None)

    ev = sub.add_parser("evaluate", help="RMSE of a trained bundle on evaluation records")
    ev.add_argument("--model", required=True, help="bundle directory written by train")
    ev.add_argument("--data", required=True, help="test trajectories (JSON-lines)")
    ev.add_argument("--records", required=True, help="evaluation records (JSON-lines)")
    ev.add_argument("--config", default=None)
    ev.add_argument("--out", default=None)

    sweep = sub.add_parser("sweep", help="full factorial experiment")
    sweep.add_argument("--config", default=None)
    sweep.add_argument("--out", default=None)
    return parser


# -------------------------------------------------
# MANIFEST
# -------------------------------------------------
def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ManifestWriter:
    """
    Writes manifest.json when entered and finalizes it on exit.

    A run that raises leaves a manifest with status "failed".
    """

    def __init__(self, out_dir: pathlib.Path, command: str, config: ResolvedConfig, seed: Optional[int], inputs: List[str]):
        self.path = out_dir / MANIFEST_FILE
        self.started = time.monotonic()
        self.outputs: Dict[str, str] = {}
        self.manifest = RunManifest(
            command=command,
            config=config.model_dump(mode="json"),
            seed=seed,
            inputs={str(p): sha256_file(p) for p in inputs},
            started_at=_now(),
            artifact_version=settings.ARTIFACT_VERSION,
        )

    def _write(self) -> None:
        atomic_write_text(self.path, self.manifest.model_dump_json(indent=2))

    def __enter__(self) -> "ManifestWriter":
        self._write()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        self.manifest = self.manifest.model_copy(update={
            "outputs": self.outputs,
            "finished_at": _now(),
            "wall_clock_seconds": time.monotonic() - self.started,
            "status": "failed" if exc_type else "ok",
        })
        self._write()
        return False


def _require_file(path: str, flag: str) -> pathlib.Path:
    p = pathlib.Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}", key=flag)
    return p


def _out_dir(args: argparse.Namespace) -> pathlib.Path:
    if args.out is not None:
        return pathlib.Path(args.out)
    return settings.OUTPUT_DIR / args.command


# -------------------------------------------------
# SUBCOMMANDS
# -------------------------------------------------
def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    updates = {k: v for k, v in (("seed", args.seed), ("gamma", args.gamma), ("omega", args.omega)) if v is not None}
    config = apply_overrides(config, "simulation", updates)
    sim = config.simulation
    out = _out_dir(args)
    logger.separator("simulate")

    with ManifestWriter(out, "simulate", config, sim.seed, [args.config] if args.config else []) as manifest:
        train, _ = simulate_cohort(sim)
        test, truths = simulate_cohort(sim, config.evaluation.n_test_subjects, stream=1, id_offset=sim.n_subjects)
        records = build_eval_records(test, truths, sim, config.evaluation)

        for name, items in (("trajectories.jsonl", train), ("test_trajectories.jsonl", test)):
            path = out / name
            save_trajectories(path, items)
            manifest.outputs[str(path)] = sha256_file(path)
        path = write_jsonl(out / "eval_records.jsonl", records)
        manifest.outputs[str(path)] = sha256_file(path)
        for p, digest in manifest.outputs.items():
            logger.artifact_written(p, digest)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    updates = {}
    if args.variant is not None:
        updates["variant"] = args.variant
    if args.horizon:
        updates["horizons"] = args.horizon
    if args.seed is not None:
        updates["seed"] = args.seed
    config = apply_overrides(config, "training", updates)
    data = _require_file(args.data, "--data")
    out = _out_dir(args)
    logger.separator("train")

    inputs = [str(data)] + ([args.config] if args.config else [])
    with ManifestWriter(out, "train", config, config.training.seed, inputs) as manifest:
        _, outputs = run_pipeline(data, config.training, out)
        manifest.outputs.update(outputs)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model_dir = pathlib.Path(args.model)
    data = _require_file(args.data, "--data")
    records_path = _require_file(args.records, "--records")
    out = _out_dir(args)
    logger.separator("evaluate")
    bundle = ModelBundle.load(model_dir)

    inputs = [str(data), str(records_path), str(model_dir / "params.bin"), str(model_dir / "bundle.json")]
    with ManifestWriter(out, "evaluate", config, bundle.config.seed, inputs) as manifest:
        trajectories = load_trajectories(data)
        records = load_eval_records(records_path)
        records = [r for r in records if r.horizon in bundle.decoders]
        report = evaluate(bundle, trajectories, records)
        for horizon, value in sorted(report.rmse.items()):
            logger.info(f"h={horizon} rmse={value:.6f} pairs={report.n_pairs[horizon]}")
        manifest.outputs.update(
            write_evaluation(report, bundle, out, config.simulation.gamma, config.simulation.omega, bundle.config.seed)
        )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    logger.separator("sweep")

    with ManifestWriter(out, "sweep", config, None, [args.config] if args.config else []) as manifest:
        result = run_sweep(config)
        manifest.outputs.update(write_sweep(result, out))
        failed = int((result.report["status"] == "failed").sum())
        if failed:
            logger.warning(f"{failed} of {len(result.report)} sweep cells failed")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


# -------------------------------------------------
# MAIN
# -------------------------------------------------
def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and dispatch a subcommand.

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(parser.format_usage())
        logger.error(str(e))
        return e.exit_code
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        threads = settings.threads()
        if threads:
            torch.set_num_threads(threads)
        return COMMANDS[args.command](args)
    except ScipNetError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return 2
