"""Contrastive finetuning losses and their exact gradients w.r.t. representations.

All functions take unit-norm representations and return gradients with
respect to those representations; pulling them back through the projection
model is the caller's job (see ``model.backward``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    ConfigurationError,
    LabelDomainError,
    MalformedPlanError,
    UndefinedWeightingError,
)
from .model import normalize, normalize_backward
from .pairing import PairPlan, pair_within_classes


@dataclass
class LossConfig:
    temperature: float = 0.1
    weighting: bool = True
    lam: float = 1.0  # weight of the auxiliary cross-entropy term
    beta: float = 10.0  # cosine classifier multiplying factor
    # divide by |I_supp| instead of by the number of anchors in the plan
    normalize_by_support: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be positive")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")


@dataclass
class LossReport:
    loss: float
    terms: np.ndarray  # l_ip per directed anchor
    alphas: np.ndarray  # alpha used per anchor (1.0 when unweighted)
    grad_support: np.ndarray
    grad_distractors: np.ndarray
    conft: float = 0.0
    mtce: float = 0.0
    grad_head: dict = field(default_factory=dict)


def compute_alpha(n_task_negatives, n_distractors):
    """alpha = 2 |I_dt| / (|N(i)| + |I_dt|); task negatives get alpha, distractors 2 - alpha."""
    total = n_task_negatives + n_distractors
    if total <= 0:
        raise UndefinedWeightingError("alpha is undefined with no negatives of either kind")
    return 2.0 * n_distractors / total


def _negative_weights(plan, n_distractors, config):
    A = len(plan.anchors)
    W = np.zeros((A, plan.n_views + n_distractors))
    alphas = np.ones(A)
    for k, neg in enumerate(plan.negatives):
        w_task = w_dist = 1.0
        # with one group empty the balance degenerates to zeroing the other,
        # so weighting only applies when both kinds of negatives are present
        if config.weighting and len(neg) and n_distractors:
            alphas[k] = compute_alpha(len(neg), n_distractors)
            w_task, w_dist = alphas[k], 2.0 - alphas[k]
        W[k, neg] = w_task
        W[k, plan.n_views:] = w_dist
    return W, alphas


def _check_inputs(z_support, plan, z_distractors):
    if len(plan.anchors) == 0:
        raise MalformedPlanError("pair plan has no anchors")
    z_support = np.asarray(z_support, dtype=np.float64)
    if z_support.ndim != 2 or len(z_support) != plan.n_views:
        raise MalformedPlanError(
            f"plan covers {plan.n_views} support views, got representations of shape {z_support.shape}"
        )
    r = z_support.shape[1]
    if z_distractors is None:
        z_distractors = np.zeros((0, r))
    z_distractors = np.asarray(z_distractors, dtype=np.float64).reshape(-1, r)
    return z_support, z_distractors


def _scale(plan, n_anchors, config):
    return 1.0 / (plan.n_support if config.normalize_by_support else n_anchors)


def conft_loss(z_support, plan: PairPlan, z_distractors, config: LossConfig) -> LossReport:
    """Contrastive finetuning loss, optionally with alpha-weighted negatives."""
    z_support, z_distractors = _check_inputs(z_support, plan, z_distractors)
    W, alphas = _negative_weights(plan, len(z_distractors), config)
    Z = np.vstack([z_support, z_distractors])
    scale = _scale(plan, len(plan.anchors), config)
    log_l, grad = kernels.contrastive_terms(
        Z, plan.anchors, plan.positives, W, config.temperature, scale
    )
    loss = -float(np.sum(log_l)) * scale
    n = plan.n_views
    return LossReport(
        loss=loss,
        terms=np.exp(log_l),
        alphas=alphas,
        grad_support=grad[:n],
        grad_distractors=grad[n:],
        conft=loss,
    )


def standard_pairs_loss(z_support, plan, z_distractors, distractor_labels, config, rng) -> LossReport:
    """Symmetric ablation: labelled distractors also act as anchors and positives.

    Distractors are paired within their class exactly like task samples; a
    distractor anchor's negatives are every task view plus all distractors of
    other classes, unweighted. Task anchors are treated as in ``conft_loss``.
    """
    if distractor_labels is None:
        raise ConfigurationError("standard pair construction needs a labelled distractor pool")
    z_support, z_distractors = _check_inputs(z_support, plan, z_distractors)
    d_labels = np.asarray(distractor_labels, dtype=np.int64)
    m, n = len(z_distractors), plan.n_views
    W_task, alphas = _negative_weights(plan, m, config)

    d_pairs, _ = pair_within_classes(d_labels, rng)
    d_anchors = np.array([a for a, b in d_pairs] + [b for a, b in d_pairs], dtype=np.int64)
    d_pos = np.array([b for a, b in d_pairs] + [a for a, b in d_pairs], dtype=np.int64)
    task_rows = np.ones(n, dtype=bool)
    task_rows[plan.omitted] = False
    W_d = np.zeros((len(d_anchors), n + m))
    for k, a in enumerate(d_anchors):
        W_d[k, :n] = task_rows
        W_d[k, n:] = d_labels != d_labels[a]

    anchors = np.concatenate([plan.anchors, n + d_anchors])
    positives = np.concatenate([plan.positives, n + d_pos])
    W = np.vstack([W_task, W_d])
    Z = np.vstack([z_support, z_distractors])
    scale = 1.0 / len(anchors)
    log_l, grad = kernels.contrastive_terms(Z, anchors, positives, W, config.temperature, scale)
    loss = -float(np.sum(log_l)) * scale
    return LossReport(
        loss=loss,
        terms=np.exp(log_l),
        alphas=np.concatenate([alphas, np.ones(len(d_anchors))]),
        grad_support=grad[:n],
        grad_distractors=grad[n:],
        conft=loss,
    )


class CosineClassifierHead:
    """Cosine-similarity classifier over base-domain categories."""

    def __init__(self, weights, beta=10.0):
        self.weights = np.array(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigurationError("head weights must be a (classes, r) matrix")
        self.beta = float(beta)
        self.version = 0

    @classmethod
    def from_class_means(cls, z, labels, n_classes, beta=10.0):
        z = np.asarray(z, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        W = np.zeros((n_classes, z.shape[1]))
        for c in range(n_classes):
            members = z[labels == c]
            if len(members) == 0:
                raise LabelDomainError(f"no labelled samples for head class {c}")
            W[c] = members.mean(axis=0)
        return cls(normalize(W), beta)

    @property
    def n_classes(self):
        return self.weights.shape[0]

    def parameters(self):
        return {"head": self.weights}

    def copy(self):
        return CosineClassifierHead(self.weights.copy(), self.beta)


def mtce_loss(z, labels, head: CosineClassifierHead):
    """Mean softmax cross-entropy of ``beta * cos(z, w_c)`` logits.

    Returns ``(loss, grad_z, grad_head_weights)``.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(z) == 0:
        raise ConfigurationError("cross-entropy needs a non-empty labelled batch")
    if labels.shape != (len(z),):
        raise LabelDomainError("need exactly one label per representation")
    if labels.min() < 0 or labels.max() >= head.n_classes:
        bad = labels[(labels < 0) | (labels >= head.n_classes)][0]
        raise LabelDomainError(f"label {bad} outside head classes 0..{head.n_classes - 1}")
    W_hat = normalize(head.weights)
    logits = head.beta * (z @ W_hat.T)
    shift = logits.max(axis=1, keepdims=True)
    log_norm = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    rows = np.arange(len(z))
    loss = float(np.mean(log_norm - logits[rows, labels]))

    P = np.exp(logits - log_norm[:, None])
    P[rows, labels] -= 1.0
    P /= len(z)
    grad_z = head.beta * (P @ W_hat)
    grad_w = normalize_backward(head.weights, head.beta * (P.T @ z))
    return loss, grad_z, grad_w


def mt_conft_loss(z_support, plan, z_distractors, distractor_labels, head, config) -> LossReport:
    """Contrastive loss plus lambda times cross-entropy on the labelled distractor batch."""
    if distractor_labels is None:
        raise ConfigurationError("multitask loss requested on an unlabelled distractor pool")
    report = conft_loss(z_support, plan, z_distractors, config)
    ce, grad_z, grad_w = mtce_loss(z_distractors, distractor_labels, head)
    report.mtce = ce
    report.loss = report.conft + config.lam * ce
    report.grad_distractors = report.grad_distractors + config.lam * grad_z
    report.grad_head = {"head": config.lam * grad_w}
    return report
