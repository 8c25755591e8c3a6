"""Command line entry point: ``hmoe train | eval | gendata``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import artifacts
from .config import get_config
from .data import TOY_GRID_RANGE, Dataset, read_dataset, write_dataset
from .errors import ConfigurationError, EvaluationError, HMOEError, TrainingAbortedError
from .experiment import (
    ExperimentConfig,
    generate_dataset,
    parse_config,
    parse_override,
    prepare_data,
    rng_streams,
)
from .gating import assign_cluster
from .inference import MODES, evaluate, predict, predict_grid, predict_mix, score
from .main import init_runtime, shutdown_runtime
from .metrics import cluster_consistency, cluster_purity, min_embedding_distance, silhouette
from .model import HMOEModel, load_checkpoint_metadata
from .records import RunSummary
from .tracing import add_span_attribute, get_collector, is_tracing_enabled, observe
from .training import TrainingResult, run_training
from .version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3

TOY_GRID_POINTS = 301


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def clustering_report(model: HMOEModel, data: Dataset) -> dict[str, Any]:
    """Cluster quality of the MIX gate on ``data`` against its true domains."""
    prediction = predict_mix(model, data.x)
    clusters = prediction.clusters()
    v = model.encode(data.x).data
    report: dict[str, Any] = {
        "n_clusters": int(len(np.unique(clusters))),
        "purity": cluster_purity(clusters, data.d),
        "consistency": cluster_consistency(clusters, data.d).to_dict(),
    }
    try:
        report["silhouette"] = silhouette(v, clusters)
    except EvaluationError as e:
        logger.warning(f"Silhouette not defined: {e}")
        report["silhouette"] = None
    return report


def _split_metrics(model: HMOEModel, data: Dataset) -> dict[str, float]:
    out = {}
    for mode in MODES:
        for name, value in evaluate(model, data, mode).items():
            out[f"{mode.lower()}_{name}"] = value
    return out


def build_summary(
    config: ExperimentConfig, result: TrainingResult, splits: dict[str, Dataset | None]
) -> RunSummary:
    model = result.model
    return RunSummary(
        task=config.task,
        variant=config.variant,
        steps=config.steps,
        config=config.to_dict(),
        final_losses=result.final_components.to_dict() if result.final_components else {},
        metrics={
            name: _split_metrics(model, data)
            for name, data in splits.items()
            if data is not None and len(data)
        },
        clustering=clustering_report(model, splits["train"]),
        switch_step=result.switch_step,
        importance_ratio=result.last_importance.ratio if result.last_importance else None,
        min_embedding_distance=min_embedding_distance(model.embeddings.vectors.data),
    )


@observe(name="cmd_train")
def cmd_train(config: ExperimentConfig, out_dir: str | Path) -> RunSummary:
    """Train, evaluate and write every run artifact into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    float_format = get_config().csv_float_format
    add_span_attribute("hmoe.task", config.task)

    streams = rng_streams(config.seed)
    data = prepare_data(config, streams)
    result = run_training(config, data.train, data.val, streams=streams)
    model = result.model

    artifacts.write_metrics(result.history, out_dir / artifacts.METRICS_FILE, float_format)
    model.save(
        out_dir / artifacts.CHECKPOINT_FILE, metadata={"task": config.task, "seed": config.seed}
    )

    train = data.train
    mix = predict_mix(model, train.x)
    clusters = assign_cluster(mix.gate)
    artifacts.write_gate_values(
        train.ids, mix.gate.p.data, out_dir / artifacts.GATE_FILE, float_format
    )
    artifacts.write_encoder_outputs(
        train.ids,
        model.encode(train.x).data,
        clusters,
        train.d,
        out_dir / artifacts.ENCODER_FILE,
        float_format,
    )
    if config.task == "toy_regression":
        grid = np.linspace(*TOY_GRID_RANGE, TOY_GRID_POINTS)
        artifacts.write_toy_curve(
            predict_grid(model, grid), out_dir / artifacts.TOY_CURVE_FILE, float_format
        )

    summary = build_summary(
        config, result, {"train": data.train, "val": data.val, "test": data.test}
    )
    artifacts.write_summary(summary, out_dir / artifacts.SUMMARY_FILE)
    logger.info(f"✅ Run written to {out_dir}")
    return summary


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@observe(name="cmd_eval", capture_args=True, capture_result=True)
def cmd_eval(
    checkpoint: str | Path, data_path: str | Path, modes: Sequence[str], out_dir: str | Path
) -> dict[str, dict[str, float]]:
    """Score a checkpoint on a dataset CSV in each requested mode."""
    model = HMOEModel.load(checkpoint)
    metadata = load_checkpoint_metadata(checkpoint)
    for key, value in metadata.items():
        add_span_attribute(f"checkpoint.{key}", value)
    logger.info(f"📦 Loaded {model.task} checkpoint {checkpoint} {metadata}")
    n_classes = model.arch.output_dim if model.task == "classification" else None
    data = read_dataset(data_path, model.task, n_classes=n_classes)
    if data.input_dim != model.arch.input_dim:
        raise ConfigurationError(
            f"checkpoint expects {model.arch.input_dim} input features, "
            f"{data_path} has {data.input_dim}"
        )
    if model.task == "classification" and data.y.max() >= model.arch.output_dim:
        raise ConfigurationError(
            f"{data_path} has class ids beyond the checkpoint's {model.arch.output_dim} classes"
        )

    out_dir = Path(out_dir)
    float_format = get_config().csv_float_format
    results: dict[str, dict[str, float]] = {}
    for mode in modes:
        prediction = predict(model, data.x, mode)
        results[mode] = score(model, prediction, data)
        artifacts.write_predictions(
            data.ids,
            prediction,
            model.task,
            out_dir / artifacts.predictions_file(mode),
            float_format,
        )
    artifacts.write_json(results, out_dir / artifacts.EVAL_METRICS_FILE)
    return results


# ---------------------------------------------------------------------------
# gendata
# ---------------------------------------------------------------------------


@observe(name="cmd_gendata")
def cmd_gendata(config: ExperimentConfig, out_path: str | Path) -> Path:
    """Generate the configured task's dataset and write it as CSV."""
    data = generate_dataset(config, rng_streams(config.seed).data)
    return write_dataset(data, out_path, float_format=get_config().csv_float_format)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmoe", description="Hypernetwork mixture of experts with latent domain discovery"
    )
    parser.add_argument("--version", action="version", version=f"hmoe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
        p.add_argument("--no-tracing", action="store_true", help="Do not collect trace spans")

    train = sub.add_parser("train", help="Train a model and write run artifacts")
    train.add_argument("--config", type=str, default=None, help="Path to config YAML")
    train.add_argument("--task", choices=["toy_regression", "synthetic_dg"], default=None)
    train.add_argument("--variant", choices=["DL", "ND", "MU"], default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--steps", type=int, default=None)
    train.add_argument("--out", type=str, default=None, help="Output directory")
    train.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override any dotted config key, e.g. --set loss.lambda_kl=0",
    )
    common(train)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint on a dataset CSV")
    ev.add_argument("--checkpoint", type=str, required=True)
    ev.add_argument("--data", type=str, required=True, help="Dataset CSV (x_0.., y, d)")
    ev.add_argument("--mode", choices=["MIX", "OOD", "both"], default="both")
    ev.add_argument("--out", type=str, default=None, help="Output directory")
    common(ev)

    gen = sub.add_parser("gendata", help="Write a synthetic dataset CSV")
    gen.add_argument("--task", choices=["toy_regression", "synthetic_dg"], required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", type=str, default=None, help="Output CSV path")
    gen.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    common(gen)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, then --set overrides, then the dedicated flags."""
    overrides: dict[str, Any] = dict(parse_override(o) for o in args.overrides)
    for key in ("task", "variant", "seed", "steps"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None) is not None and args.command == "train":
        overrides["output_dir"] = args.out
    return parse_config(getattr(args, "config", None), overrides)


def _print_metrics(title: str, metrics: dict[str, dict[str, float]]) -> None:
    print(title)
    for group, values in metrics.items():
        for name, value in values.items():
            print(f"  {group:<8} {name:<16} {value:.6f}")


def _run(args: argparse.Namespace) -> Path | None:
    runtime = get_config()
    # spans of an earlier command in this process
    get_collector().drain()
    if args.command == "train":
        config = config_from_args(args)
        out_dir = Path(config.output_dir or runtime.output_dir)
        summary = cmd_train(config, out_dir)
        _print_metrics(f"Run {out_dir}", summary.metrics)
        return out_dir

    if args.command == "eval":
        out_dir = Path(args.out or runtime.output_dir)
        modes = list(MODES) if args.mode == "both" else [args.mode]
        results = cmd_eval(args.checkpoint, args.data, modes, out_dir)
        _print_metrics(f"Evaluation of {args.checkpoint}", results)
        return out_dir

    config = config_from_args(args)
    out_path = Path(args.out or Path(runtime.output_dir) / f"{config.task}.csv")
    cmd_gendata(config, out_path)
    print(out_path)
    return None


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        init_runtime(
            log_level=args.log_level, enable_tracing=False if args.no_tracing else None
        )
    except ConfigurationError as e:
        print(f"hmoe: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        out_dir = _run(args)
        if out_dir is not None and is_tracing_enabled():
            artifacts.write_spans(get_collector().drain(), out_dir / artifacts.SPANS_FILE)
        return EXIT_OK
    except TrainingAbortedError as e:
        logger.error(f"Training aborted: {e}")
        return EXIT_ABORTED
    except HMOEError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_UNEXPECTED
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED
    finally:
        shutdown_runtime()


if __name__ == "__main__":
    sys.exit(main())
