"""Vectorized numpy implementation of the inner kernels.

Used when the compiled extension is unavailable, and as the cross-check for
it in the test suite.
"""

import numpy as np


def contrastive_terms(Z, anchors, positives, weights, gamma, scale):
    """Weighted InfoNCE terms for every directed anchor.

    Z         (N, r) unit representations (support views then distractors)
    anchors   (A,) row of each anchor in Z
    positives (A,) row of each anchor's positive
    weights   (A, N) multiplier on exp(z_a . z_j / gamma); 0 excludes j
    scale     factor applied to the gradient of sum_a -log l_a

    Returns ``(log_l, grad_Z)`` with ``log_l[a] = log l_{a, p(a)}``.
    """
    A = len(anchors)
    Za = Z[anchors]
    S = (Za @ Z.T) / gamma
    rows = np.arange(A)
    sp = S[rows, positives]
    active = weights > 0.0
    m = np.maximum(sp, np.max(np.where(active, S, -np.inf), axis=1))
    E = np.where(active, weights * np.exp(np.where(active, S - m[:, None], 0.0)), 0.0)
    ep = np.exp(sp - m)
    denom = ep + E.sum(axis=1)
    log_l = sp - m - np.log(denom)

    # d(-log l_a)/dS_aj = pi_aj for negatives, pi_ap - 1 for the positive
    G = E / denom[:, None]
    G[rows, positives] += ep / denom - 1.0
    G *= scale / gamma
    grad = G.T @ Za
    np.add.at(grad, anchors, G @ Z)
    return log_l, grad


def cluster_sums(Z, labels):
    """Ordered-pair sums of (1 - z_i . z_j): within-class (i != j) and cross-class."""
    D = 1.0 - Z @ Z.T
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    cross = labels[:, None] != labels[None, :]
    return float(D[same].sum()), float(D[cross].sum())
