"""Datasets: the toy regression set, synthetic multi-domain classification, splits and CSV IO."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

TOY_INTERVALS: tuple[tuple[float, float], ...] = ((0.0, 0.5), (1.0, 1.5), (2.0, 2.5))
TOY_COUNTS: tuple[int, ...] = (10, 20, 30)

# grid used for the toy inference curve; it extends past both ends of the data
TOY_GRID_RANGE = (-0.25, 2.75)

# synthetic class blobs: centres on a circle of this radius, isotropic noise
CLASS_RADIUS = 3.0
CLASS_STD = 0.5
DOMAIN_ROTATION_DEG = 60.0


def toy_target(x: np.ndarray) -> np.ndarray:
    return np.sin(4.0 * np.pi * np.asarray(x, dtype=np.float64))


@dataclass
class Dataset:
    """Examples ``x`` [N x in] with targets ``y`` and true domain ids ``d``.

    Classification targets are class indices; regression targets are reals.
    ``ids`` are stable example identifiers that survive splits.
    """

    x: np.ndarray
    y: np.ndarray
    d: np.ndarray
    task: str
    n_classes: int | None = None
    ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x.reshape(-1, 1)
        if self.task == "classification":
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.n_classes is None:
                self.n_classes = int(self.y.max()) + 1 if len(self.y) else 0
        elif self.task == "regression":
            self.y = np.asarray(self.y, dtype=np.float64)
        else:
            raise DataError(f"unknown task type '{self.task}'")
        self.d = np.asarray(self.d, dtype=np.int64)
        self.ids = (
            np.arange(len(self.x), dtype=np.int64)
            if self.ids is None
            else np.asarray(self.ids, dtype=np.int64)
        )
        if not len(self.x) == len(self.y) == len(self.d) == len(self.ids):
            raise DataError(
                f"dataset columns disagree in length: x={len(self.x)} y={len(self.y)} "
                f"d={len(self.d)} ids={len(self.ids)}"
            )

    def __len__(self) -> int:
        return len(self.x)

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        if self.task == "classification":
            return int(self.n_classes)
        return 1 if self.y.ndim == 1 else self.y.shape[1]

    @property
    def domains(self) -> np.ndarray:
        return np.unique(self.d)

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            x=self.x[idx],
            y=self.y[idx],
            d=self.d[idx],
            task=self.task,
            n_classes=self.n_classes,
            ids=self.ids[idx],
        )

    def require_nonempty(self, what: str = "dataset") -> None:
        if len(self) == 0:
            raise DataError(f"{what} is empty")


def gen_toy_regression(seed: int | np.random.Generator = 0) -> Dataset:
    """10, 20 and 30 points of y = sin(4 pi x) drawn uniformly on three disjoint intervals."""
    rng = np.random.default_rng(seed)
    xs, ds = [], []
    for interval_id, ((lo, hi), count) in enumerate(zip(TOY_INTERVALS, TOY_COUNTS)):
        xs.append(rng.uniform(lo, hi, size=count))
        ds.append(np.full(count, interval_id))
    x = np.concatenate(xs)
    return Dataset(x=x.reshape(-1, 1), y=toy_target(x), d=np.concatenate(ds), task="regression")


def _rotation(degrees: float) -> np.ndarray:
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def gen_synthetic_domains(
    M: int,
    C: int,
    n_per: int,
    separation: float,
    seed: int | np.random.Generator = 0,
    input_dim: int = 16,
) -> Dataset:
    """Gaussian class blobs seen through one affine transform per domain.

    Domain ``m`` rotates the blobs by 60*m degrees and translates them by
    ``separation`` along the direction 2*pi*m/M. Points are then lifted from 2-D to
    ``input_dim`` by a fixed random linear map. ``n_per`` is the count per
    (domain, class) pair, so the set holds M*C*n_per rows ordered by domain, then class.
    """
    if M < 1 or C < 1 or n_per < 1:
        raise DataError(f"M, C and n_per must be at least 1, got M={M} C={C} n_per={n_per}")
    if separation <= 0:
        raise DataError(f"separation must be positive, got {separation}")
    if input_dim < 2:
        raise DataError(f"input_dim must be at least 2, got {input_dim}")

    rng = np.random.default_rng(seed)
    lift = rng.standard_normal((2, input_dim)) / math.sqrt(2.0)
    angles = 2.0 * np.pi * np.arange(C) / C
    centres = CLASS_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    xs, ys, ds = [], [], []
    for m in range(M):
        rotation = _rotation(DOMAIN_ROTATION_DEG * m)
        direction = 2.0 * np.pi * m / M
        shift = separation * np.array([math.cos(direction), math.sin(direction)])
        for c in range(C):
            blob = centres[c] + CLASS_STD * rng.standard_normal((n_per, 2))
            xs.append(blob @ rotation.T + shift)
            ys.append(np.full(n_per, c))
            ds.append(np.full(n_per, m))

    x = np.concatenate(xs) @ lift
    return Dataset(
        x=x, y=np.concatenate(ys), d=np.concatenate(ds), task="classification", n_classes=C
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise DataError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")


def split_train_val(
    data: Dataset, spec: SplitSpec, rng: np.random.Generator | None = None
) -> tuple[Dataset, Dataset]:
    """Per-domain split; each domain keeps floor(fraction * n) examples for training."""
    data.require_nonempty()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    train_idx, val_idx = [], []
    for domain in data.domains:
        idx = np.flatnonzero(data.d == domain)
        perm = idx[rng.permutation(len(idx))]
        # tolerance keeps exact products such as 0.8 * 10 from rounding down
        n_train = int(math.floor(spec.train_fraction * len(idx) + 1e-9))
        train_idx.append(perm[:n_train])
        val_idx.append(perm[n_train:])
    train = np.sort(np.concatenate(train_idx))
    val = np.sort(np.concatenate(val_idx))
    logger.debug(f"Split {len(data)} examples into {len(train)} train / {len(val)} val")
    return data.subset(train), data.subset(val)


def holdout_domains(data: Dataset, test_domains: Sequence[int]) -> tuple[Dataset, Dataset]:
    """Separate the listed domains out as an unseen test set."""
    test_domains = sorted(set(int(m) for m in test_domains))
    unknown = set(test_domains) - set(data.domains.tolist())
    if unknown:
        raise DataError(f"held-out domains {sorted(unknown)} do not occur in the data")
    mask = np.isin(data.d, test_domains)
    if mask.all():
        raise DataError("holding out every domain leaves nothing to train on")
    return data.subset(np.flatnonzero(~mask)), data.subset(np.flatnonzero(mask))


def mask_domain_labels(d: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Keep floor(fraction * N) domain labels at random and set the rest to -1."""
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"domain label fraction must lie in [0, 1], got {fraction}")
    d = np.asarray(d, dtype=np.int64).copy()
    n_keep = int(math.floor(fraction * len(d) + 1e-9))
    if n_keep < len(d):
        d[rng.permutation(len(d))[n_keep:]] = -1
    return d


def domain_index(d: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel the labeled domains in ``d`` to 0..M_d-1, keeping -1; returns (labels, M_d)."""
    d = np.asarray(d, dtype=np.int64)
    labeled = np.unique(d[d >= 0])
    out = np.full_like(d, -1)
    for new, old in enumerate(labeled):
        out[d == old] = new
    return out, len(labeled)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def dataset_to_frame(data: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame(data.x, columns=[f"x_{i}" for i in range(data.input_dim)])
    frame["y"] = data.y
    frame["d"] = data.d
    return frame


def write_dataset(data: Dataset, path: str | Path, float_format: str = "%.17g") -> Path:
    """Write ``x_0..x_{n-1}, y, d`` with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset_to_frame(data).to_csv(path, index=False, float_format=float_format)
    logger.info(f"💾 Wrote {len(data)} rows to {path}")
    return path


def read_dataset(path: str | Path, task: str, n_classes: int | None = None) -> Dataset:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise DataError(f"dataset file not found: {path}") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataError(f"cannot parse dataset {path}: {e}") from e

    x_cols = [c for c in frame.columns if c.startswith("x_")]
    expected = [f"x_{i}" for i in range(len(x_cols))]
    if not x_cols or x_cols != expected or "y" not in frame.columns:
        raise DataError(f"{path}: expected columns x_0..x_(n-1), y[, d], got {list(frame.columns)}")
    if frame.empty:
        raise DataError(f"{path}: dataset is empty")
    if frame[x_cols + ["y"]].isna().any().any():
        raise DataError(f"{path}: dataset contains missing values")

    d = frame["d"].to_numpy() if "d" in frame.columns else np.zeros(len(frame), dtype=np.int64)
    y = frame["y"].to_numpy()
    if task == "classification" and not np.all(np.equal(np.mod(y, 1), 0)):
        raise DataError(f"{path}: classification targets must be integers")
    return Dataset(x=frame[x_cols].to_numpy(), y=y, d=d, task=task, n_classes=n_classes)
