"""Distractor-aware contrastive finetuning of a prior projection model."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import snapshot
from .errors import (
    ConfigurationError,
    DegenerateRepresentationError,
    FinetuneDiverged,
    OptimizerAbort,
)
from .losses import CosineClassifierHead, LossConfig, conft_loss, mt_conft_loss, standard_pairs_loss
from .model import AdamState, adam_step, backward, embed, forward, normalize
from .pairing import (
    DistractorCursor,
    GaussianAugmenter,
    build_augmented_pair_plan,
    build_pair_plan,
    resolve_views,
    sample_distractor_batch,
)

EPOCH_GRID = (50, 100, 200, 300, 400, 500)
LR_GRID = (5e-4, 5e-3)
TEMPERATURE_GRID = (0.05, 0.1, 0.5)
BATCH_GRID = (64, 128)

# named RNG streams; ablation arms sharing a seed see the same pairing and
# augmentation draws because each stream is derived independently
STREAM_IDS = {"init": 0, "pairing": 1, "augment": 2, "distractor": 3, "episode": 4, "standard": 5, "pad": 6}


def stream(seed, name, *extra):
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAM_IDS[name], *map(int, extra)]))


@dataclass
class FinetuneConfig:
    epochs: int = 100
    lr: float = 5e-4
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 128
    sigma: float = 0.1
    seed: int = 0
    multitask: bool = False
    pairing: str = "asymmetric"  # or "standard"
    snapshot_stride: int = 0  # 0 disables cluster diagnostics
    augment_negatives: bool = True
    grid_mode: bool = False

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigurationError("epochs must be positive")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        if self.pairing not in ("asymmetric", "standard"):
            raise ConfigurationError(f"unknown pairing mode {self.pairing!r}")
        if self.snapshot_stride < 0:
            raise ConfigurationError("snapshot stride must be non-negative")
        if self.grid_mode:
            checks = [
                ("epochs", self.epochs, EPOCH_GRID),
                ("lr", self.lr, LR_GRID),
                ("temperature", self.loss.temperature, TEMPERATURE_GRID),
                ("batch_size", self.batch_size, BATCH_GRID),
            ]
            for name, value, grid in checks:
                if value not in grid:
                    raise ConfigurationError(f"{name}={value} is outside the grid {grid}")


@dataclass
class FinetuneTrace:
    losses: np.ndarray
    snapshots: list
    model: object  # theta_tau
    head: CosineClassifierHead | None = None
    first_plan: object = None
    distractor_counts: np.ndarray | None = None


def finetune(prior_model, task, pool, config: FinetuneConfig, head=None) -> FinetuneTrace:
    """Run ``config.epochs`` finetuning epochs on ``task``; the prior is not modified.

    Each epoch draws one distractor batch (when ``pool`` is non-empty), freshly
    augments the support set, builds a pair plan, and takes one Adam step.
    """
    use_dt = pool is not None and len(pool) > 0
    if (config.multitask or config.pairing == "standard") and not (use_dt and pool.labelled):
        raise ConfigurationError("multitask and standard pairing need a labelled distractor pool")
    model = prior_model.copy()
    seed = config.seed
    pair_rng = stream(seed, "pairing")
    aug_rng = stream(seed, "augment")
    std_rng = stream(seed, "standard")
    augmenter = GaussianAugmenter(config.sigma)
    state = AdamState.for_model(model, lr=config.lr)

    cursor = counts = None
    if use_dt:
        if config.batch_size > len(pool):
            raise ConfigurationError(f"batch size {config.batch_size} exceeds pool size {len(pool)}")
        cursor = DistractorCursor(len(pool), stream(seed, "distractor"))
        counts = np.zeros(len(pool), dtype=np.int64)

    head_state = None
    if config.multitask:
        if head is None:
            head = CosineClassifierHead.from_class_means(
                embed(model, pool.features), pool.labels, pool.n_classes, config.loss.beta
            )
        else:
            head = head.copy()
            head.beta = config.loss.beta
        head_state = AdamState.for_model(head, lr=config.lr)

    snaps = [snapshot(model, task, 0)] if config.snapshot_stride else []
    losses = np.empty(config.epochs)
    first_plan = None
    for epoch in range(1, config.epochs + 1):
        try:
            if use_dt:
                idx, cursor = sample_distractor_batch(len(pool), config.batch_size, cursor)
                counts[idx] += 1
            else:
                idx = np.zeros(0, dtype=np.int64)
            if task.shots >= 2:
                plan = build_pair_plan(task.support_y, task.shots, pair_rng)
            else:
                plan = build_augmented_pair_plan(task.support_y, config.augment_negatives)
            plan.with_distractors(idx)
            if first_plan is None:
                first_plan = plan
            X = resolve_views(task.support_x, plan, augmenter, aug_rng)
            if use_dt:
                X = np.vstack([X, pool.features[idx]])
            h, cache = forward(model, X)
            z = normalize(h)
            z_sup, z_dt = z[: plan.n_views], z[plan.n_views:]
            dt_labels = pool.labels[idx] if use_dt and pool.labelled else None
            if config.multitask:
                report = mt_conft_loss(z_sup, plan, z_dt, dt_labels, head, config.loss)
            elif config.pairing == "standard":
                report = standard_pairs_loss(z_sup, plan, z_dt, dt_labels, config.loss, std_rng)
            else:
                report = conft_loss(z_sup, plan, z_dt, config.loss)
            if not np.isfinite(report.loss):
                raise FinetuneDiverged(epoch, f"non-finite loss {report.loss} at epoch {epoch}")
            grads = backward(model, cache, np.vstack([report.grad_support, report.grad_distractors]))
            adam_step(model, state, grads)
            if head_state is not None:
                adam_step(head, head_state, report.grad_head)
        except (DegenerateRepresentationError, OptimizerAbort) as exc:
            raise FinetuneDiverged(epoch, f"finetuning diverged at epoch {epoch}: {exc}") from exc
        losses[epoch - 1] = report.loss
        if config.snapshot_stride and (epoch % config.snapshot_stride == 0 or epoch == config.epochs):
            snaps.append(snapshot(model, task, epoch))
    return FinetuneTrace(losses, snaps, model, head, first_plan, counts)


def finetune_without_distractors(prior_model, task, config: FinetuneConfig) -> FinetuneTrace:
    """Ablation arm with I_dt empty every epoch and weighting disabled."""
    cfg = replace(config, loss=replace(config.loss, weighting=False), multitask=False, pairing="asymmetric")
    return finetune(prior_model, task, None, cfg)
