"""
Command-line entry point.

    python -m app.cli <command> [options]

Commands: stats, sessionize, build, eval, train, sweep, synth, gradcheck,
serve. JSON results go to stdout, logs to stderr. Exit codes: 0 success,
2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import DegenerateAUCError, EngageError, InputError
from app.core.logging import setup_logging
from app.schemas.config import (
    EmitPolicy,
    EvalConfig,
    FeaturizerConfig,
    ForestConfig,
    ModelConfig,
    ModelVariant,
    SessionizerConfig,
    SynthConfig,
    WindowMode,
)
from app.schemas.manifest import RunManifest
from app.services.evaluation import evaluate_matrix, threshold_sweep
from app.services.featurizer import build_dataset, load_dataset, relabel, save_dataset
from app.services.ingest import (
    ValidatedLog,
    descriptive_stats,
    format_timestamp,
    parse_event_log,
    parse_zooniverse_export,
    validate_log,
)
from app.services.models import load_model, model_filename, run_gradient_check, save_model, train_model
from app.services.reporting import render_report, roc_document
from app.services.sessionizer import sessionize_log, summarize_sessions
from app.services.synth import write_synthetic_log


logger = logging.getLogger(__name__)


GRADCHECK_TOLERANCE = 1e-4
MANIFEST_FILE = "manifest.json"
EMIT_POLICIES = {"full": EmitPolicy.REQUIRE_FULL_WINDOW, "pad": EmitPolicy.PAD_SHORT_WINDOWS}


# ============================================================================
# Argument types
# ============================================================================

def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{value}'") from None
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def _positive_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'") from None
    if not number > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return number


def _unit_interval(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'") from None
    if not 0.0 <= number <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return number


def _int_list(value: str) -> list[int]:
    return [_positive_int(part) for part in value.split(",") if part.strip()]


def _variant(value: str) -> ModelVariant:
    try:
        return ModelVariant.parse(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _variant_list(value: str) -> list[ModelVariant]:
    return [_variant(part) for part in value.split(",") if part.strip()]


def _network_variant(value: str) -> ModelVariant:
    variant = _variant(value)
    if variant == ModelVariant.RANDOM_FOREST:
        raise argparse.ArgumentTypeError("gradient checks apply to lstm, dnn and lr only")
    return variant


# ============================================================================
# Helpers
# ============================================================================

def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    path: Path,
    subcommand: str,
    *,
    seed: int | None = None,
    config: dict[str, Any] | None = None,
    inputs: Sequence[Path] = (),
    outputs: Sequence[Path] = (),
) -> Path:
    manifest = RunManifest(
        subcommand=subcommand,
        tool_version=settings.app_version,
        seed=seed,
        config=config or {},
        inputs={str(p): sha256_file(p) for p in inputs},
        outputs=[p.name for p in outputs],
    )
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _print_json(payload: Any) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_log(path: Path, zooniverse: bool = False, allow_empty: bool = False) -> ValidatedLog:
    """Parse and validate a native or Zooniverse log file."""
    if not path.is_file():
        raise InputError(f"log file not found: {path}")
    if zooniverse:
        events = parse_zooniverse_export(str(path))
    else:
        with path.open("r", encoding="utf-8", newline="") as handle:
            events = parse_event_log(handle, allow_empty=allow_empty)
    return validate_log(events)


def _add_log_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log", "--dataset-log", dest="log", type=Path, required=True,
                        help="Annotation log CSV")
    parser.add_argument("--zooniverse", action="store_true",
                        help="Read a Zooniverse classification export instead of the native format")


def _add_dataset_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gap-min", type=_positive_float, default=30.0,
                        help="Session gap threshold in minutes (default: 30)")
    parser.add_argument("--emit-policy", choices=sorted(EMIT_POLICIES), default="full",
                        help="Skip (full) or zero-pad (pad) annotations with short history")


# ============================================================================
# Commands
# ============================================================================

def cmd_stats(args: argparse.Namespace) -> int:
    log = load_log(args.log, args.zooniverse)
    _print_json(descriptive_stats(log, args.top_k).model_dump(mode="json"))
    return 0


def cmd_sessionize(args: argparse.Namespace) -> int:
    config = SessionizerConfig.from_minutes(args.gap_min)
    log = load_log(args.log, args.zooniverse)
    sessions = sessionize_log(log, config)

    if args.out:
        rows = [
            (user_id, format_timestamp(event.timestamp), session.session_index, position)
            for user_id, user_sessions in sessions.items()
            for session in user_sessions
            for position, event in enumerate(session.events)
        ]
        frame = pd.DataFrame(rows, columns=["user_id", "timestamp", "session_index", "position"])
        args.out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out, index=False, lineterminator="\n")
        logger.info(f"Wrote session assignment of {len(rows)} events to {args.out}")

    if args.stats or not args.out:
        _print_json(summarize_sessions(sessions, config).model_dump(mode="json"))
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    log = load_log(args.log, args.zooniverse, allow_empty=True)
    if log.is_empty():
        logger.warning(f"{args.log} has no annotations; writing an empty dataset")

    sconfig = SessionizerConfig.from_minutes(args.gap_min)
    fconfig = FeaturizerConfig(M=args.M, gamma=args.gamma, emit_policy=EMIT_POLICIES[args.emit_policy])
    dataset = build_dataset(log, sconfig, fconfig)

    out: Path = args.out
    csv_path, config_path = save_dataset(dataset, out)
    write_manifest(
        out / MANIFEST_FILE,
        "build",
        config={"sessionizer": sconfig.model_dump(mode="json"), "featurizer": fconfig.model_dump(mode="json")},
        inputs=[args.log],
        outputs=[csv_path, config_path],
    )
    return 0


def _model_config(args: argparse.Namespace, variant: ModelVariant, M: int) -> ModelConfig:
    overrides: dict[str, Any] = {"variant": variant, "M": M, "seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.trees is not None:
        overrides["forest"] = ForestConfig(tree_count=args.trees)
    return ModelConfig(**overrides)


def cmd_eval(args: argparse.Namespace) -> int:
    config = EvalConfig(
        gammas=args.gammas,
        Ms=args.Ms,
        variants=args.models,
        window=WindowMode(args.window),
        emit_policy=EMIT_POLICIES[args.emit_policy],
        sessionizer=SessionizerConfig.from_minutes(args.gap_min),
        model=_model_config(args, args.models[0], args.Ms[0]),
        seed=args.seed,
    )
    log = load_log(args.log, args.zooniverse)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    cells = evaluate_matrix(
        log,
        config=config,
        jobs=args.jobs,
        save_dir=out / "models" if args.save_models else None,
    )

    outputs = []
    for M in config.Ms:
        path = out / f"report_M{M}.md"
        path.write_text(render_report([c for c in cells if c.M == M], "markdown"), encoding="utf-8")
        outputs.append(path)
    report_json = out / "report.json"
    report_json.write_text(render_report(cells, "json", config), encoding="utf-8")
    roc_json = out / "roc_points.json"
    roc_json.write_text(json.dumps(roc_document(cells), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs += [report_json, roc_json]

    write_manifest(
        out / MANIFEST_FILE,
        "eval",
        seed=config.seed,
        config=config.model_dump(mode="json"),
        inputs=[args.log],
        outputs=outputs,
    )

    degenerate = [c for c in cells if c.degenerate]
    for cell in degenerate:
        logger.warning(
            f"Degenerate cell {cell.variant.display_name} M={cell.M} gamma={cell.gamma} "
            f"(folds {cell.degenerate_folds})"
        )
    if degenerate and args.strict:
        raise DegenerateAUCError(f"{len(degenerate)} cell(s) have single-class test folds")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    log = load_log(args.log, args.zooniverse)
    sconfig = SessionizerConfig.from_minutes(args.gap_min)
    fconfig = FeaturizerConfig(M=args.M, gamma=args.gamma, emit_policy=EMIT_POLICIES[args.emit_policy])
    dataset = build_dataset(log, sconfig, fconfig)

    config = _model_config(args, args.variant, args.M)
    model = train_model(dataset, config)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    path = out / model_filename(args.variant, args.M, args.gamma, "all")
    save_model(model, path)
    write_manifest(
        out / MANIFEST_FILE,
        "train",
        seed=args.seed,
        config={"model": config.model_dump(mode="json"), "featurizer": fconfig.model_dump(mode="json")},
        inputs=[args.log],
        outputs=[path],
    )
    logger.info(f"Saved model to {path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    if args.gamma is not None:
        dataset = relabel(dataset, args.gamma)
    rows = threshold_sweep(model, dataset)
    _print_json([row.model_dump(mode="json") for row in rows])
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig(
        user_count=args.users,
        seed=args.seed,
        signal_strength=args.signal,
        force_single_session=args.single_session,
    )
    out: Path = args.out
    written = write_synthetic_log(config, out, emit_config=args.emit_config)
    write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "synth",
        seed=config.seed,
        config=config.model_dump(mode="json"),
        outputs=written,
    )
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seeds = list(range(args.seed, args.seed + args.repeat))
    errors = {seed: run_gradient_check(args.model, seed, h=args.h) for seed in seeds}
    worst = max(errors.values())
    passed = worst < GRADCHECK_TOLERANCE
    _print_json({
        "model": args.model.short_name,
        "h": args.h,
        "seeds": seeds,
        "max_relative_error": worst,
        "per_seed": {str(seed): error for seed, error in errors.items()},
        "tolerance": GRADCHECK_TOLERANCE,
        "passed": passed,
    })
    return 0 if passed else 3


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from app.main import create_app

    uvicorn.run(create_app(model_path=str(args.model)), host=args.host, port=args.port)
    return 0


# ============================================================================
# Parser
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    """Construct the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="engage",
        description="Predict volunteer engagement from annotation logs",
    )
    parser.add_argument("--log-level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        help="Override ENGAGE_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", metavar="command", required=True)

    stats = subparsers.add_parser("stats", help="Descriptive statistics of a log")
    _add_log_arguments(stats)
    stats.add_argument("--top-k", type=_positive_int, default=20, help="Top users for the share statistic")
    stats.set_defaults(handler=cmd_stats)

    sessionize = subparsers.add_parser("sessionize", help="Split a log into sessions")
    _add_log_arguments(sessionize)
    sessionize.add_argument("--gap-min", type=_positive_float, default=30.0)
    sessionize.add_argument("--stats", action="store_true", help="Print the session summary")
    sessionize.add_argument("--out", type=Path, help="Write the per-event session assignment CSV")
    sessionize.set_defaults(handler=cmd_sessionize)

    build = subparsers.add_parser("build", help="Build a supervised dataset")
    _add_log_arguments(build)
    build.add_argument("--M", type=_positive_int, default=5, help="Number of time deltas")
    build.add_argument("--gamma", type=_positive_int, required=True, help="Engagement threshold (>= 1)")
    _add_dataset_arguments(build)
    build.add_argument("--out", type=Path, required=True, help="Output directory")
    build.set_defaults(handler=cmd_build)

    evaluate = subparsers.add_parser("eval", help="Run the forward-chaining experiment grid")
    _add_log_arguments(evaluate)
    evaluate.add_argument("--gammas", type=_int_list, default=EvalConfig().gammas)
    evaluate.add_argument("--Ms", type=_int_list, default=EvalConfig().Ms)
    evaluate.add_argument("--models", type=_variant_list, default=list(ModelVariant),
                          help="Comma-separated: lstm, dnn, rf, lr")
    evaluate.add_argument("--window", choices=[w.value for w in WindowMode], default=WindowMode.EXPANDING.value)
    _add_dataset_arguments(evaluate)
    evaluate.add_argument("--seed", type=int, default=settings.default_seed)
    evaluate.add_argument("--epochs", type=_positive_int, default=None, help="Network epochs (default: 10)")
    evaluate.add_argument("--trees", type=_positive_int, default=None, help="Forest size (default: 50)")
    evaluate.add_argument("--jobs", type=_positive_int, default=settings.jobs, help="Parallel grid cells")
    evaluate.add_argument("--save-models", action="store_true", help="Save every fold model")
    evaluate.add_argument("--strict", action="store_true", help="Exit 3 if any cell is degenerate")
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.set_defaults(handler=cmd_eval)

    train = subparsers.add_parser("train", help="Train one model on a whole log")
    _add_log_arguments(train)
    train.add_argument("--variant", "--model", dest="variant", type=_variant, required=True)
    train.add_argument("--M", type=_positive_int, default=5)
    train.add_argument("--gamma", type=_positive_int, required=True)
    _add_dataset_arguments(train)
    train.add_argument("--seed", type=int, default=settings.default_seed)
    train.add_argument("--epochs", type=_positive_int, default=None)
    train.add_argument("--trees", type=_positive_int, default=None)
    train.add_argument("--out", type=Path, required=True)
    train.set_defaults(handler=cmd_train)

    sweep = subparsers.add_parser("sweep", help="Precision/recall/specificity across thresholds")
    sweep.add_argument("--model", type=Path, required=True, help="Model file")
    sweep.add_argument("--dataset", type=Path, required=True, help="Dataset directory from 'build'")
    sweep.add_argument("--gamma", type=_positive_int, default=None, help="Relabel the dataset first")
    sweep.set_defaults(handler=cmd_sweep)

    synth = subparsers.add_parser("synth", help="Generate a synthetic annotation log")
    synth.add_argument("--users", type=_positive_int, default=SynthConfig().user_count)
    synth.add_argument("--seed", type=int, default=SynthConfig().seed)
    synth.add_argument("--signal", type=_unit_interval, default=SynthConfig().signal_strength)
    synth.add_argument("--single-session", action="store_true", help="Put each user's annotations in one session")
    synth.add_argument("--emit-config", action=argparse.BooleanOptionalAction, default=True,
                       help="Write <out>.config.json next to the log")
    synth.add_argument("--out", type=Path, required=True)
    synth.set_defaults(handler=cmd_synth)

    gradcheck = subparsers.add_parser("gradcheck", help="Check analytic gradients against finite differences")
    gradcheck.add_argument("--model", type=_network_variant, required=True, help="lstm, dnn or lr")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--repeat", type=_positive_int, default=1, help="Check seeds seed..seed+repeat-1")
    gradcheck.add_argument("--h", type=_positive_float, default=1e-5)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    serve = subparsers.add_parser("serve", help="Serve a trained model over HTTP")
    serve.add_argument("--model", type=Path, default=settings.model_path, required=settings.model_path is None)
    serve.add_argument("--host", default=settings.host)
    serve.add_argument("--port", type=int, default=settings.port)
    serve.set_defaults(handler=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    setup_logging(args.log_level)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except EngageError as exc:
        logger.error(exc.message)
        return exc.exit_code
    except ValidationError as exc:
        logger.error(f"invalid configuration: {exc}")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
