"""Cluster spread/separation diagnostics, relative-change trajectories, and PAD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegeneratePriorError
from .model import AdamState, adam_step, embed

SPLITS = ("support", "query")
METRICS = ("spread", "sep")


def _check_classes(labels, M, need_two=False):
    labels = np.asarray(labels, dtype=np.int64)
    present = np.unique(labels)
    if len(present) < M:
        missing = sorted(set(range(M)) - set(present.tolist()))
        raise ConfigurationError(f"class {missing[0] if missing else '?'} has no samples (M={M})")
    if need_two and len(present) < 2:
        raise ConfigurationError("cluster separation needs at least two classes")
    return labels


def cluster_spread(z, labels, M):
    """(1/M) * sum over classes of ordered within-class pairs of (1 - z_i . z_j)."""
    labels = _check_classes(labels, M)
    within, _ = kernels.cluster_sums(np.asarray(z, dtype=np.float64), labels)
    return within / M


def cluster_separation(z, labels, M):
    """(1/M) * sum over classes of ordered cross-class pairs of (1 - z_i . z_j)."""
    labels = _check_classes(labels, M, need_two=True)
    _, cross = kernels.cluster_sums(np.asarray(z, dtype=np.float64), labels)
    return cross / M


def cluster_stats(z, labels, M):
    labels = _check_classes(labels, M, need_two=True)
    within, cross = kernels.cluster_sums(np.asarray(z, dtype=np.float64), labels)
    return within / M, cross / M


@dataclass
class ClusterSnapshot:
    """Raw spread/separation of support and query sets at one epoch."""

    epoch: int
    support_spread: float
    support_sep: float
    query_spread: float
    query_sep: float


def snapshot(model, task, epoch) -> ClusterSnapshot:
    """Diagnostics under the current parameters; support is embedded un-augmented."""
    M = task.ways
    s_spread, s_sep = cluster_stats(embed(model, task.support_x), task.support_y, M)
    q_spread, q_sep = cluster_stats(embed(model, task.query_x), task.query_y, M)
    return ClusterSnapshot(epoch, s_spread, s_sep, q_spread, q_sep)


@dataclass
class ClusterStats:
    split: str
    epoch: int
    u_spread: float
    u_sep: float
    delta_spread: float
    delta_sep: float
    rel_spread: float
    rel_sep: float
    kappa: float


@dataclass
class Trajectory:
    """delta_rel series on a shared epoch grid, keyed ``"<split>/<metric>"``."""

    epochs: np.ndarray
    series: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.series[key]

    def final(self, key):
        return float(self.series[key][-1])


def relative_change_trajectory(snapshots):
    """ClusterStats per epoch and split, normalized by kappa = support separation at epoch 0.

    Returns ``(stats, trajectory)``.
    """
    snapshots = sorted(snapshots, key=lambda s: s.epoch)
    if not snapshots or snapshots[0].epoch != 0:
        raise ConfigurationError("trajectory needs a snapshot of the prior model at epoch 0")
    base = snapshots[0]
    kappa = base.support_sep
    if not kappa > 0:
        raise DegeneratePriorError("support separation of the prior model is zero")
    stats = []
    series = {f"{s}/{m}": [] for s in SPLITS for m in METRICS}
    for snap in snapshots:
        for split in SPLITS:
            spread = getattr(snap, f"{split}_spread")
            sep = getattr(snap, f"{split}_sep")
            d_spread = spread - getattr(base, f"{split}_spread")
            d_sep = sep - getattr(base, f"{split}_sep")
            stats.append(
                ClusterStats(split, snap.epoch, spread, sep, d_spread, d_sep,
                             d_spread / kappa, d_sep / kappa, kappa)
            )
            series[f"{split}/spread"].append(d_spread / kappa)
            series[f"{split}/sep"].append(d_sep / kappa)
    epochs = np.array([s.epoch for s in snapshots])
    return stats, Trajectory(epochs, {k: np.array(v) for k, v in series.items()})


def average_trajectories(trajectories) -> Trajectory:
    """Pointwise mean across tasks, accumulated in the given (task-id) order."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ConfigurationError("no trajectories to average")
    first = trajectories[0]
    total = {k: np.zeros_like(v, dtype=np.float64) for k, v in first.series.items()}
    for t in trajectories:
        if not np.array_equal(t.epochs, first.epochs) or t.series.keys() != first.series.keys():
            raise ConfigurationError("trajectories do not share an epoch grid")
        for k, v in t.series.items():
            total[k] += v
    n = len(trajectories)
    return Trajectory(first.epochs.copy(), {k: v / n for k, v in total.items()})


def pad_from_error(eps):
    """Proxy A-distance 2(1 - 2 eps), clamped to [0, 2]."""
    return float(min(2.0, max(0.0, 2.0 * (1.0 - 2.0 * eps))))


class _LogisticProbe:
    def __init__(self, d):
        self.w = np.zeros(d)
        self.b = np.zeros(1)

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def logits(self, X):
        return X @ self.w + self.b[0]


def proxy_a_distance(domain_a, domain_b, seed, steps=200, lr=0.05, min_samples=20):
    """Train a logistic domain probe on half the data, return PAD from held-out error.

    Both domains are subsampled to the same size so chance error is 0.5.
    """
    A = np.asarray(domain_a, dtype=np.float64)
    B = np.asarray(domain_b, dtype=np.float64)
    if len(A) < min_samples or len(B) < min_samples:
        raise ConfigurationError(f"each domain needs at least {min_samples} samples")
    if A.shape[1] != B.shape[1]:
        raise ConfigurationError("domains have different embedding dimensions")
    rng = np.random.default_rng(seed)
    n = min(len(A), len(B))
    A = A[rng.permutation(len(A))[:n]]
    B = B[rng.permutation(len(B))[:n]]
    half = n // 2
    X_tr = np.vstack([A[:half], B[:half]])
    y_tr = np.r_[np.zeros(half), np.ones(half)]
    X_te = np.vstack([A[half:], B[half:]])
    y_te = np.r_[np.zeros(n - half), np.ones(n - half)]
    mu, sd = X_tr.mean(axis=0), X_tr.std(axis=0)
    sd[sd == 0] = 1.0
    X_tr = (X_tr - mu) / sd
    X_te = (X_te - mu) / sd

    probe = _LogisticProbe(X_tr.shape[1])
    state = AdamState(lr=lr)
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-probe.logits(X_tr)))
        g = (p - y_tr) / len(y_tr)
        adam_step(probe, state, {"w": X_tr.T @ g, "b": np.array([g.sum()])})
    eps = float(np.mean((probe.logits(X_te) > 0) != (y_te > 0.5)))
    return pad_from_error(eps)
