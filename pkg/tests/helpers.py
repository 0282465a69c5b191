"""Random problem instances shared by the unit and acceptance tests."""

from dataclasses import dataclass

import numpy as np

from conft.losses import CosineClassifierHead, LossConfig, conft_loss, mt_conft_loss
from conft.model import backward, forward, init_model, normalize
from conft.pairing import build_augmented_pair_plan, build_pair_plan


def unit_rows(rng, n, r):
    x = rng.standard_normal((n, r))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_plan(rng, ways, shots, augment_negatives=True):
    labels = np.repeat(np.arange(ways), shots)
    if shots == 1:
        return build_augmented_pair_plan(labels, augment_negatives)
    return build_pair_plan(labels, shots, rng)


@dataclass
class GradInstance:
    model: object
    X: np.ndarray  # support views then distractors
    plan: object
    n_dt: int
    dt_labels: np.ndarray
    head: object
    config: LossConfig
    multitask: bool

    def _report(self):
        h, cache = forward(self.model, self.X)
        z = normalize(h)
        n = self.plan.n_views
        if self.multitask:
            rep = mt_conft_loss(z[:n], self.plan, z[n:], self.dt_labels, self.head, self.config)
        else:
            rep = conft_loss(z[:n], self.plan, z[n:], self.config)
        return rep, cache

    def loss(self):
        return self._report()[0].loss

    def params(self):
        p = dict(self.model.parameters())
        if self.multitask:
            p.update(self.head.parameters())
        return p

    def analytic(self):
        rep, cache = self._report()
        g = backward(self.model, cache, np.vstack([rep.grad_support, rep.grad_distractors]))
        if self.multitask:
            g.update(rep.grad_head)
        return g


def gradient_instance(seed, shots, weighting, multitask, ways=3, n_dt=5, n_base_classes=4,
                      dims=(6, 8, 4), temperature=0.5):
    rng = np.random.default_rng(seed)
    model = init_model(dims, rng)
    for b in model.biases:
        b += 0.1 * rng.standard_normal(b.shape)
    plan = random_plan(rng, ways, shots)
    X = rng.standard_normal((plan.n_views + n_dt, dims[0]))
    dt_labels = np.arange(n_dt) % n_base_classes
    head = CosineClassifierHead(rng.standard_normal((n_base_classes, dims[-1])), beta=2.0)
    cfg = LossConfig(temperature=temperature, weighting=weighting, lam=0.7, beta=2.0)
    return GradInstance(model, X, plan, n_dt, dt_labels, head, cfg, multitask)
