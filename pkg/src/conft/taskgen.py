"""Embedding domains, episode sampling, and distractor pools."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DomainFormatError,
    EmptyDomainError,
    EpisodeError,
)

UNLABELLED = -1


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class EmbeddingDomain:
    features: np.ndarray  # (n, d_in)
    labels: np.ndarray  # (n,), -1 for unlabelled rows
    name: str = "domain"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (len(self.features),):
            raise ConfigurationError("features must be (n, d) with one label per row")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def classes(self):
        return np.unique(self.labels[self.labels != UNLABELLED])

    @property
    def labelled(self):
        return bool(len(self)) and not np.any(self.labels == UNLABELLED)

    def class_counts(self):
        cls, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(cls.tolist(), counts.tolist()))


def subspace_pair(d_in, k, angle_deg, rng):
    """Two orthonormal (d_in, k) bases whose principal angles all equal ``angle_deg``."""
    if 2 * k > d_in:
        raise ConfigurationError(f"need d_in >= 2k to rotate a {k}-dim subspace, got d_in={d_in}")
    rng = _rng(rng)
    Q, _ = np.linalg.qr(rng.standard_normal((d_in, 2 * k)))
    U, V = Q[:, :k], Q[:, k:]
    theta = np.deg2rad(angle_deg)
    return U, np.cos(theta) * U + np.sin(theta) * V


def generate_synthetic_domain(
    n_classes,
    per_class,
    d_in,
    prototype_scale,
    noise_sigma,
    seed,
    basis=None,
    class_offset=0,
    name="synthetic",
) -> EmbeddingDomain:
    """Gaussian mixture with class prototypes on a sphere of radius ``prototype_scale``.

    With ``basis`` (d_in, k) the prototypes lie in its column span.
    """
    if min(n_classes, per_class, d_in) <= 0 or prototype_scale <= 0 or noise_sigma < 0:
        raise ConfigurationError("domain sizes and prototype scale must be positive, noise non-negative")
    rng = _rng(seed)
    if basis is None:
        directions = rng.standard_normal((n_classes, d_in))
    else:
        basis = np.asarray(basis, dtype=np.float64)
        if basis.shape[0] != d_in:
            raise ConfigurationError("basis rows must equal d_in")
        directions = rng.standard_normal((n_classes, basis.shape[1])) @ basis.T
    prototypes = prototype_scale * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), per_class)
    features = prototypes[labels] + noise_sigma * rng.standard_normal((len(labels), d_in))
    return EmbeddingDomain(features, labels + class_offset, name)


@dataclass
class FewShotTask:
    support_x: np.ndarray
    support_y: np.ndarray  # local class ids 0..M-1, class-major order
    query_x: np.ndarray
    query_y: np.ndarray  # hidden at classification time, used for scoring
    classes: np.ndarray  # domain class id of each local class
    support_index: np.ndarray  # rows in the source domain
    query_index: np.ndarray
    shots: int
    queries: int

    @property
    def ways(self):
        return len(self.classes)


def sample_episode(domain: EmbeddingDomain, M, K, Q, seed) -> FewShotTask:
    """M-way K-shot episode with Q queries per class, all without replacement."""
    if min(M, K, Q) <= 0:
        raise ConfigurationError("M, K and Q must be positive")
    rng = _rng(seed)
    counts = domain.class_counts()
    counts.pop(UNLABELLED, None)
    eligible = sorted(c for c, n in counts.items() if n >= K + Q)
    if len(eligible) < M:
        short = sorted((c for c in counts if c not in eligible), key=lambda c: counts[c])
        detail = f"; class {short[0]} has only {counts[short[0]]} samples" if short else ""
        raise EpisodeError(
            f"need {M} classes with at least K+Q={K + Q} samples, found {len(eligible)}{detail}"
        )
    classes = rng.choice(np.asarray(eligible), size=M, replace=False)
    sup, qry = [], []
    for c in classes:
        members = np.flatnonzero(domain.labels == c)
        picked = rng.choice(members, size=K + Q, replace=False)
        sup.append(picked[:K])
        qry.append(picked[K:])
    sup_idx = np.concatenate(sup)
    qry_idx = np.concatenate(qry)
    local = np.arange(M)
    return FewShotTask(
        support_x=domain.features[sup_idx],
        support_y=np.repeat(local, K),
        query_x=domain.features[qry_idx],
        query_y=np.repeat(local, Q),
        classes=classes,
        support_index=sup_idx,
        query_index=qry_idx,
        shots=K,
        queries=Q,
    )


def save_domain(domain: EmbeddingDomain, path):
    """Write the plain-text format: header "n d", then one row per sample."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"{len(domain)} {domain.dim}\n")
        for x, y in zip(domain.features, domain.labels):
            fh.write(" ".join(repr(float(v)) for v in x))
            fh.write(f" {int(y)}\n")


def load_domain(path, name=None) -> EmbeddingDomain:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise EmptyDomainError(f"{path}: empty domain file")
    header = lines[0].split()
    try:
        n, d = int(header[0]), int(header[1])
        if len(header) != 2:
            raise ValueError
    except (ValueError, IndexError):
        raise DomainFormatError(f"{path}: header must be 'n d', got {lines[0]!r}", line=1) from None
    if n <= 0:
        raise EmptyDomainError(f"{path}: domain declares {n} samples")
    if d <= 0:
        raise DomainFormatError(f"{path}: dimension must be positive", line=1)
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(body) != n:
        raise DomainFormatError(f"{path}: header declares {n} rows, found {len(body)}")
    features = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    for row, (lineno, ln) in enumerate(body):
        parts = ln.split()
        if len(parts) != d + 1:
            raise DomainFormatError(
                f"{path}: row {row} has {len(parts)} fields, expected {d} features and a label",
                line=lineno,
            )
        try:
            features[row] = [float(v) for v in parts[:d]]
            labels[row] = int(parts[d])
        except ValueError as exc:
            raise DomainFormatError(f"{path}: row {row}: {exc}", line=lineno) from None
    return EmbeddingDomain(features, labels, name or path.stem)


@dataclass
class DistractorPool:
    features: np.ndarray
    labels: np.ndarray | None  # contiguous 0..C-1 when labelled
    class_ids: np.ndarray | None  # source class id for each contiguous label
    source_index: np.ndarray

    def __len__(self):
        return len(self.features)

    @property
    def labelled(self):
        return self.labels is not None

    @property
    def n_classes(self):
        return 0 if self.class_ids is None else len(self.class_ids)


def build_distractor_pool(
    base: EmbeddingDomain, exclude_classes=(), labelled=False, subset_size=None, seed=None
) -> DistractorPool:
    """Samples of ``base`` whose class is not excluded; labels kept only if ``labelled``.

    ``subset_size`` draws a random subset of that size (domain-size ablation).
    """
    keep = ~np.isin(base.labels, np.asarray(list(exclude_classes), dtype=np.int64))
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        raise ConfigurationError("distractor pool is empty after excluding task classes")
    if subset_size is not None:
        if not 0 < subset_size <= len(idx):
            raise ConfigurationError(f"subset size {subset_size} not in 1..{len(idx)}")
        idx = np.sort(_rng(seed).choice(idx, size=subset_size, replace=False))
    labels = class_ids = None
    if labelled:
        raw = base.labels[idx]
        if np.any(raw == UNLABELLED):
            raise ConfigurationError("labelled pool requested from a domain with unlabelled rows")
        class_ids, labels = np.unique(raw, return_inverse=True)
        labels = labels.astype(np.int64)
    return DistractorPool(base.features[idx], labels, class_ids, idx)
