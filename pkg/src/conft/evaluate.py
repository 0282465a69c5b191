"""Nearest-mean cosine classification and accuracy aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, InsufficientSamplesError, MalformedTaskError
from .model import NORM_FLOOR, embed

Z95 = 1.96


def prototypes_from_representations(z, labels, n_classes):
    """Per-class mean of unit representations (not re-normalized)."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    protos = np.empty((n_classes, z.shape[1]))
    for c in range(n_classes):
        members = z[labels == c]
        if len(members) == 0:
            raise MalformedTaskError(f"class {c} has no support samples")
        protos[c] = members.mean(axis=0)
    return protos


def class_prototypes(model, support_x, support_y, n_classes=None):
    """Class weight vectors from un-augmented support representations."""
    support_y = np.asarray(support_y)
    if n_classes is None:
        n_classes = int(support_y.max()) + 1
    return prototypes_from_representations(embed(model, support_x), support_y, n_classes)


def degenerate_prototypes(prototypes):
    return np.linalg.norm(prototypes, axis=1) < NORM_FLOOR


def cosine_scores(z_query, prototypes):
    """Cosine similarity of each query row to each prototype; degenerate ones get -inf."""
    z = np.atleast_2d(np.asarray(z_query, dtype=np.float64))
    norms = np.linalg.norm(prototypes, axis=1)
    bad = norms < NORM_FLOOR
    if bad.all():
        raise EvaluationError("every class prototype is degenerate")
    qn = np.linalg.norm(z, axis=1, keepdims=True)
    scores = (z @ prototypes.T) / (qn * np.where(bad, 1.0, norms))
    scores[:, bad] = -np.inf
    return scores


def classify_representations(z_query, prototypes):
    # np.argmax picks the first maximum, i.e. the lowest class index on ties
    return np.argmax(cosine_scores(z_query, prototypes), axis=1)


def classify_query(model, prototypes, query_x):
    """Predicted class for one query vector (or a batch)."""
    query_x = np.asarray(query_x, dtype=np.float64)
    preds = classify_representations(embed(model, np.atleast_2d(query_x)), prototypes)
    return int(preds[0]) if query_x.ndim == 1 else preds


@dataclass
class EpisodeResult:
    task_id: int
    predictions: np.ndarray
    accuracy: float


@dataclass
class AggregateResult:
    mean: float
    half_width: float
    n_tasks: int


def evaluate_episode(model, task, task_id=0) -> EpisodeResult:
    protos = class_prototypes(model, task.support_x, task.support_y, task.ways)
    preds = classify_query(model, protos, task.query_x)
    acc = float(np.mean(preds == task.query_y))
    return EpisodeResult(task_id, preds, acc)


def aggregate(results) -> AggregateResult:
    """Mean accuracy with a normal-approximation 95% half-width (sample std, ddof=1)."""
    acc = np.array([r.accuracy if isinstance(r, EpisodeResult) else r for r in results], dtype=np.float64)
    if len(acc) < 2:
        raise InsufficientSamplesError(f"need at least 2 tasks to aggregate, got {len(acc)}")
    return AggregateResult(float(acc.mean()), float(Z95 * acc.std(ddof=1) / np.sqrt(len(acc))), len(acc))
