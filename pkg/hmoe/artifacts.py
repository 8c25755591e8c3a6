"""Run artifacts: CSV dumps, JSON summaries and the span log.

Every CSV has a header row and a fixed column order.
"""

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from .data import toy_target
from .inference import Prediction
from .records import METRIC_COLUMNS, RunSummary, StepRecord, TraceSpan

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "checkpoint.npz"
ENCODER_FILE = "encoder_outputs.csv"
GATE_FILE = "gate_values.csv"
TOY_CURVE_FILE = "toy_curve.csv"
SPANS_FILE = "trace_spans.jsonl"
EVAL_METRICS_FILE = "eval_metrics.json"


def predictions_file(mode: str) -> str:
    return f"predictions_{mode}.csv"


def _write_frame(frame: pd.DataFrame, path: Path, float_format: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format)
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return str(obj)


def write_json(data: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        json.dump(data, f, indent=2, default=_json_default)
        f.write("\n")
    return path


def write_metrics(history: Sequence[StepRecord], path: str | Path, float_format: str) -> Path:
    """One row per step; ``val_metric`` is blank on steps without validation."""
    frame = pd.DataFrame([r.to_dict() for r in history], columns=list(METRIC_COLUMNS))
    return _write_frame(frame, Path(path), float_format)


def write_summary(summary: RunSummary, path: str | Path) -> Path:
    return write_json(summary.to_dict(), path)


def write_gate_values(
    ids: np.ndarray, p: np.ndarray, path: str | Path, float_format: str
) -> Path:
    """``id, cluster, p_0..p_{K-1}``; cluster is the argmax gate."""
    frame = pd.DataFrame({"id": ids, "cluster": np.argmax(p, axis=1)})
    for k in range(p.shape[1]):
        frame[f"p_{k}"] = p[:, k]
    return _write_frame(frame, Path(path), float_format)


def write_encoder_outputs(
    ids: np.ndarray,
    v: np.ndarray,
    clusters: np.ndarray,
    true_domain: np.ndarray,
    path: str | Path,
    float_format: str,
) -> Path:
    """``id, v_0..v_{D-1}, cluster, true_domain``."""
    frame = pd.DataFrame({"id": ids})
    for j in range(v.shape[1]):
        frame[f"v_{j}"] = v[:, j]
    frame["cluster"] = clusters
    frame["true_domain"] = true_domain
    return _write_frame(frame, Path(path), float_format)


def write_predictions(
    ids: np.ndarray, prediction: Prediction, task: str, path: str | Path, float_format: str
) -> Path:
    """``id, mode, prediction[, p_0..p_{K-1}]``; gate columns only in MIX mode.

    Classification writes the argmax class, regression the first output.
    """
    if task == "classification":
        values = prediction.labels()
    else:
        values = prediction.values[:, 0]
    frame = pd.DataFrame({"id": ids, "mode": prediction.mode, "prediction": values})
    if prediction.gate is not None:
        p = prediction.gate.p.data
        for k in range(p.shape[1]):
            frame[f"p_{k}"] = p[:, k]
    return _write_frame(frame, Path(path), float_format)


def write_toy_curve(curve: dict[str, np.ndarray], path: str | Path, float_format: str) -> Path:
    """``x, mix, ood, truth`` on the evaluation grid."""
    frame = pd.DataFrame(
        {"x": curve["x"], "mix": curve["mix"], "ood": curve["ood"], "truth": toy_target(curve["x"])}
    )
    return _write_frame(frame, Path(path), float_format)


def write_spans(spans: Iterable[TraceSpan], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w") as f:
        for span in spans:
            f.write(json.dumps(span.to_dict(), default=_json_default) + "\n")
            count += 1
    logger.debug(f"Wrote {count} trace spans to {path}")
    return path
