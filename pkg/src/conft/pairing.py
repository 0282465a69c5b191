"""Anchor-positive / anchor-negative construction and distractor batching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, MalformedTaskError


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class PairPlan:
    """Directed anchor/positive entries over the support *view* index space.

    For K >= 2 there is one view per support sample. For 1-shot plans the view
    space has 2n rows: ``0..n-1`` are the samples and ``n..2n-1`` their
    augmented copies (virtual indices resolved at embedding time).
    """

    labels: np.ndarray  # class of every view row
    anchors: np.ndarray
    positives: np.ndarray
    negatives: list  # negatives[k] is N(anchors[k]) as an index array
    omitted: np.ndarray
    n_support: int  # |I_supp|, number of real support samples
    augmented: bool = False
    distractor_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_views(self):
        return len(self.labels)

    @property
    def positive_of(self):
        return dict(zip(self.anchors.tolist(), self.positives.tolist()))

    @property
    def negatives_of(self):
        return {int(a): n for a, n in zip(self.anchors, self.negatives)}

    def pairs(self):
        """Unordered pairs as sorted tuples, each listed once."""
        return sorted({tuple(sorted((int(a), int(p)))) for a, p in zip(self.anchors, self.positives)})

    def with_distractors(self, indices):
        self.distractor_indices = np.asarray(indices, dtype=np.int64)
        return self


def _class_groups(labels):
    labels = np.asarray(labels)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def pair_within_classes(labels, rng, omit_odd=True):
    """Randomly pair same-class indices, no index in more than one pair.

    Returns ``(pairs, omitted)``. With an odd class size one uniformly chosen
    member is left out.
    """
    rng = _rng(rng)
    pairs, omitted = [], []
    for _, members in sorted(_class_groups(labels).items()):
        members = rng.permutation(members)
        if len(members) % 2:
            if not omit_odd:
                raise MalformedTaskError("odd class size with omission disabled")
            omitted.append(int(members[-1]))
            members = members[:-1]
        pairs.extend((int(a), int(b)) for a, b in zip(members[0::2], members[1::2]))
    return pairs, np.array(sorted(omitted), dtype=np.int64)


def _directed(pairs):
    anchors = [a for a, b in pairs] + [b for a, b in pairs]
    positives = [b for a, b in pairs] + [a for a, b in pairs]
    order = np.argsort(anchors, kind="stable")
    return np.asarray(anchors, dtype=np.int64)[order], np.asarray(positives, dtype=np.int64)[order]


def _task_negatives(labels, anchors, excluded):
    keep = np.ones(len(labels), dtype=bool)
    keep[excluded] = False
    return [np.flatnonzero(keep & (labels != labels[a])) for a in anchors]


def build_pair_plan(support_labels, shots, rng_seed) -> PairPlan:
    """Stochastic pairing for K >= 2 shots.

    Odd K drops one sample per class for this call; the omitted samples are
    excluded both as anchors and from every N(i).
    """
    labels = np.asarray(support_labels, dtype=np.int64)
    shots = int(shots)
    if shots < 2:
        raise MalformedTaskError("build_pair_plan needs K >= 2; use build_augmented_pair_plan for 1-shot")
    for c, members in _class_groups(labels).items():
        if len(members) < 2:
            raise MalformedTaskError(f"class {c} has {len(members)} support sample(s), need at least 2")
        if len(members) != shots:
            raise MalformedTaskError(f"class {c} has {len(members)} support samples, expected K={shots}")
    pairs, omitted = pair_within_classes(labels, rng_seed)
    anchors, positives = _directed(pairs)
    return PairPlan(
        labels=labels,
        anchors=anchors,
        positives=positives,
        negatives=_task_negatives(labels, anchors, omitted),
        omitted=omitted,
        n_support=len(labels),
    )


def build_augmented_pair_plan(support_labels, augment_negatives=True) -> PairPlan:
    """1-shot plan: sample i is paired with its augmented copy at view n + i.

    With ``augment_negatives`` the other classes' copies join N(i) alongside
    the originals.
    """
    labels = np.asarray(support_labels, dtype=np.int64)
    n = len(labels)
    if n < 2:
        raise MalformedTaskError("a task needs at least two classes")
    if len(np.unique(labels)) != n:
        raise MalformedTaskError("1-shot plan expects exactly one support sample per class")
    view_labels = np.concatenate([labels, labels])
    pairs = [(i, n + i) for i in range(n)]
    anchors, positives = _directed(pairs)
    excluded = np.zeros(0, dtype=np.int64) if augment_negatives else np.arange(n, 2 * n)
    return PairPlan(
        labels=view_labels,
        anchors=anchors,
        positives=positives,
        negatives=_task_negatives(view_labels, anchors, excluded),
        omitted=np.zeros(0, dtype=np.int64),
        n_support=n,
        augmented=True,
    )


class GaussianAugmenter:
    """Additive isotropic Gaussian noise in feature space."""

    def __init__(self, sigma=0.1):
        if sigma < 0:
            raise ConfigurationError("augmentation sigma must be non-negative")
        self.sigma = float(sigma)

    def __call__(self, X, rng):
        X = np.asarray(X, dtype=np.float64)
        noise = rng.standard_normal(X.shape)
        return X + self.sigma * noise

    def __repr__(self):
        return f"GaussianAugmenter(sigma={self.sigma})"


def resolve_views(support_x, plan: PairPlan, augmenter, rng):
    """Input rows for every view of ``plan``; each view is augmented independently."""
    X = np.asarray(support_x, dtype=np.float64)
    rng = _rng(rng)
    if plan.augmented:
        return np.vstack([augmenter(X, rng), augmenter(X, rng)])
    return augmenter(X, rng)


class DistractorCursor:
    """Without-replacement traversal state over a pool of ``pool_size`` indices."""

    def __init__(self, pool_size, rng):
        if pool_size <= 0:
            raise ConfigurationError("distractor pool is empty")
        self.pool_size = int(pool_size)
        self.rng = _rng(rng)
        self.order = self.rng.permutation(self.pool_size)
        self.pos = 0
        self.reshuffles = 0

    def _reshuffle(self, avoid):
        order = self.rng.permutation(self.pool_size)
        if len(avoid):
            # keep indices already in the current batch out of its remainder
            clash = np.isin(order, avoid)
            order = np.concatenate([order[~clash], order[clash]])
        self.order = order
        self.pos = 0
        self.reshuffles += 1


def sample_distractor_batch(pool_size, batch_size, cursor: DistractorCursor):
    """Next ``batch_size`` pool indices; reshuffles when the traversal runs out.

    A batch that straddles the end of one permutation is completed from the
    next one, so every full traversal visits each index exactly once and no
    index repeats within a batch.
    """
    batch_size = int(batch_size)
    if batch_size > pool_size:
        raise ConfigurationError(f"distractor batch size {batch_size} exceeds pool size {pool_size}")
    if batch_size <= 0:
        raise ConfigurationError("distractor batch size must be positive")
    take = cursor.order[cursor.pos:cursor.pos + batch_size]
    cursor.pos += len(take)
    if len(take) < batch_size:
        cursor._reshuffle(take)
        rest = cursor.order[: batch_size - len(take)]
        cursor.pos = len(rest)
        take = np.concatenate([take, rest])
    elif cursor.pos == cursor.pool_size:
        cursor._reshuffle(np.zeros(0, dtype=np.int64))
    return np.asarray(take, dtype=np.int64), cursor
