"""Clustering and prediction metrics for latent domain discovery."""

import logging
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from sklearn.metrics import pairwise_distances, silhouette_score

from .errors import ContractError, EvaluationError

logger = logging.getLogger(__name__)


def _check_pair(a: np.ndarray, b: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if len(a) != len(b):
        raise ContractError(f"{what}: {len(a)} predictions for {len(b)} references")
    if len(a) == 0:
        raise ContractError(f"{what}: no examples")
    return a, b


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean Euclidean silhouette coefficient; points in singleton clusters score 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if len(points) != len(labels):
        raise ContractError(f"silhouette: {len(points)} points for {len(labels)} labels")
    n_clusters = len(np.unique(labels))
    if n_clusters < 2:
        raise EvaluationError(f"silhouette needs at least 2 clusters, got {n_clusters}")
    if n_clusters == len(labels):
        return 0.0
    return float(silhouette_score(points, labels, metric="euclidean"))


def cluster_purity(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of examples that share the majority true domain of their predicted cluster."""
    pred, truth = _check_pair(pred, truth, "cluster_purity")
    _, truth_codes = np.unique(truth, return_inverse=True)
    hits = 0
    for cluster in np.unique(pred):
        hits += int(np.bincount(truth_codes[pred == cluster]).max())
    return hits / len(pred)


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _check_pair(pred, truth, "accuracy")
    return float(np.mean(pred == truth))


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(len(pred), -1)
    truth = np.asarray(truth, dtype=np.float64).reshape(len(truth), -1)
    pred, truth = _check_pair(pred, truth, "mse")
    if pred.shape != truth.shape:
        raise ContractError(f"mse: shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean((pred - truth) ** 2))


@dataclass
class ClusterConsistency:
    """Majority expert of each true domain and how consistently the domain maps to it."""

    majority: dict[int, int]
    consistency: dict[int, float]
    distinct: bool

    @property
    def min_consistency(self) -> float:
        return min(self.consistency.values())

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["majority"] = {str(k): v for k, v in self.majority.items()}
        data["consistency"] = {str(k): v for k, v in self.consistency.items()}
        data["min_consistency"] = self.min_consistency
        return data


def cluster_consistency(pred: np.ndarray, truth: np.ndarray) -> ClusterConsistency:
    """Per true domain: the expert most of its examples go to, and that expert's share."""
    pred, truth = _check_pair(pred, truth, "cluster_consistency")
    majority: dict[int, int] = {}
    consistency: dict[int, float] = {}
    for domain in np.unique(truth):
        assigned = pred[truth == domain]
        counts = np.bincount(assigned)
        majority[int(domain)] = int(np.argmax(counts))
        consistency[int(domain)] = float(counts.max() / len(assigned))
    distinct = len(set(majority.values())) == len(majority)
    return ClusterConsistency(majority=majority, consistency=consistency, distinct=distinct)


def min_embedding_distance(vectors: np.ndarray) -> float:
    """Smallest pairwise Euclidean distance between embedding vectors; inf for K < 2."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) < 2:
        return float("inf")
    dist = pairwise_distances(vectors, metric="euclidean")
    return float(dist[np.triu_indices(len(vectors), k=1)].min())
