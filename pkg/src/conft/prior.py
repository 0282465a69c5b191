"""Cross-entropy prior learning on a labelled base domain."""

import numpy as np

from .errors import ConfigurationError
from .losses import CosineClassifierHead, mtce_loss
from .model import AdamState, adam_step, backward, forward, init_model, normalize


def pretrain_prior(domain, layer_dims, steps=1500, batch_size=256, lr=1e-3, beta=10.0, seed=0):
    """Train ``init_model(layer_dims)`` with a cosine-classifier cross-entropy.

    Returns ``(model, head)``; the head's rows follow the sorted class ids of
    ``domain`` (the contiguous labels of a labelled distractor pool built from it).
    """
    if not domain.labelled:
        raise ConfigurationError("prior learning needs a fully labelled base domain")
    rng = np.random.default_rng(seed)
    class_ids, labels = np.unique(domain.labels, return_inverse=True)
    model = init_model(layer_dims, rng)
    head = CosineClassifierHead(rng.standard_normal((len(class_ids), model.r)), beta)
    m_state = AdamState.for_model(model, lr=lr)
    h_state = AdamState.for_model(head, lr=lr)
    n = len(labels)
    batch_size = min(batch_size, n)
    for _ in range(steps):
        idx = rng.choice(n, size=batch_size, replace=False)
        h, cache = forward(model, domain.features[idx])
        _, grad_z, grad_w = mtce_loss(normalize(h), labels[idx], head)
        adam_step(model, m_state, backward(model, cache, grad_z))
        adam_step(head, h_state, {"head": grad_w})
    return model, head
