"""Experiment runner: ablation arms over paired episodes, result and trajectory files."""

from __future__ import annotations

import json
import multiprocessing as mp
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .diagnostics import average_trajectories, relative_change_trajectory, snapshot
from .errors import ConfigurationError, ConftError
from .evaluate import aggregate, evaluate_episode
from .finetune import FinetuneConfig, finetune, finetune_without_distractors, stream
from .losses import LossConfig
from .prior import pretrain_prior
from .taskgen import (
    EmbeddingDomain,
    build_distractor_pool,
    generate_synthetic_domain,
    load_domain,
    sample_episode,
    subspace_pair,
)

ARMS = ("no-finetune", "conft", "conft-unweighted", "conft-no-distractors", "mt-conft", "standard-pairs")


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _parse_arms(text):
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(a.strip() for a in str(text).split(",") if a.strip())


@dataclass
class ExperimentConfig:
    """Every knob of a run; ``config.echo`` is this object serialized."""

    seed: int = 0
    threads: int = 1
    arms: tuple = ARMS
    out: str = "runs/latest"
    # episode shape
    ways: int = 5
    shots: int = 5
    queries: int = 15
    tasks: int = 100
    # finetuning
    # benchmark defaults below were tuned once and frozen: the no-distractor
    # arm stays well below saturation and the support trajectories stay monotone
    epochs: int = 200
    lr: float = 5e-4
    temperature: float = 0.25
    batch_size: int = 128
    sigma: float = 0.1
    lam: float = 1.0
    beta: float = 10.0
    normalize_by_support: bool = False
    augment_negatives: bool = True
    snapshot_stride: int = 1
    grid_mode: bool = False
    # domains: files take precedence over the synthetic generator
    base_file: str = ""
    novel_file: str = ""
    domain_seed: int = 7
    d_in: int = 32
    subspace_dim: int = 8
    domain_gap_deg: float = 80.0
    base_classes: int = 64
    base_per_class: int = 60
    base_scale: float = 3.0
    base_noise: float = 1.0
    novel_classes: int = 20
    novel_per_class: int = 40
    novel_scale: float = 3.0
    novel_noise: float = 1.0
    pool_size: int = 0  # 0 keeps the whole base domain
    # prior model
    layer_dims: tuple = (64, 32)  # hidden..., r (input width comes from the domain)
    prior_steps: int = 1500
    prior_batch: int = 256
    prior_lr: float = 1e-3

    def __post_init__(self):
        self.arms = _parse_arms(self.arms)
        self.layer_dims = _parse_ints(self.layer_dims)
        unknown = [a for a in self.arms if a not in ARMS]
        if unknown:
            raise ConfigurationError(f"unknown arm {unknown[0]!r}; choose from {', '.join(ARMS)}")
        if not self.arms:
            raise ConfigurationError("at least one arm is required")
        if self.tasks < 2:
            raise ConfigurationError("tasks must be at least 2")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls) if not f.name.startswith("_")]

    @classmethod
    def from_mapping(cls, values, base=None):
        """Build from string key/values, converting each to the field's type."""
        base = base or cls()
        defaults = {f.name: getattr(base, f.name) for f in fields(cls) if not f.name.startswith("_")}
        updates = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in defaults:
                raise ConfigurationError(f"unknown config key {key!r}")
            current = defaults[key]
            try:
                if isinstance(current, bool):
                    updates[key] = _parse_bool(raw)
                elif isinstance(current, int):
                    updates[key] = int(raw)
                elif isinstance(current, float):
                    updates[key] = float(raw)
                elif key == "arms":
                    updates[key] = _parse_arms(raw)
                elif key == "layer_dims":
                    updates[key] = _parse_ints(raw)
                else:
                    updates[key] = str(raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {exc}") from None
        return replace(base, **updates)

    def echo(self):
        lines = []
        for name in self.field_names():
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name}={value}")
        return "\n".join(lines) + "\n"


def read_config_file(path):
    """Flat ``key = value`` text; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_domains(cfg: ExperimentConfig):
    """(base, novel) domains: loaded from files, or the synthetic cross-domain pair."""
    if cfg.base_file or cfg.novel_file:
        if not (cfg.base_file and cfg.novel_file):
            raise ConfigurationError("base_file and novel_file must be given together")
        return load_domain(cfg.base_file, "base"), load_domain(cfg.novel_file, "novel")
    rng = np.random.default_rng(cfg.domain_seed)
    U_base, U_novel = subspace_pair(cfg.d_in, cfg.subspace_dim, cfg.domain_gap_deg, rng)
    base = generate_synthetic_domain(
        cfg.base_classes, cfg.base_per_class, cfg.d_in, cfg.base_scale, cfg.base_noise,
        rng, basis=U_base, name="base",
    )
    novel = generate_synthetic_domain(
        cfg.novel_classes, cfg.novel_per_class, cfg.d_in, cfg.novel_scale, cfg.novel_noise,
        rng, basis=U_novel, class_offset=cfg.base_classes, name="novel",
    )
    return base, novel


def finetune_config(cfg: ExperimentConfig, arm, seed):
    loss = LossConfig(
        temperature=cfg.temperature,
        weighting=arm != "conft-unweighted",
        lam=cfg.lam,
        beta=cfg.beta,
        normalize_by_support=cfg.normalize_by_support,
    )
    return FinetuneConfig(
        epochs=cfg.epochs,
        lr=cfg.lr,
        loss=loss,
        batch_size=cfg.batch_size,
        sigma=cfg.sigma,
        seed=seed,
        multitask=arm == "mt-conft",
        pairing="standard" if arm == "standard-pairs" else "asymmetric",
        snapshot_stride=cfg.snapshot_stride,
        augment_negatives=cfg.augment_negatives,
        grid_mode=cfg.grid_mode,
    )


@dataclass
class Context:
    cfg: ExperimentConfig
    novel: EmbeddingDomain
    prior: object
    head: object
    pool_unlabelled: object
    pool_labelled: object


def prepare(cfg: ExperimentConfig) -> Context:
    base, novel = build_domains(cfg)
    if base.dim != novel.dim:
        raise ConfigurationError(f"base dim {base.dim} != novel dim {novel.dim}")
    overlap = set(base.classes.tolist()) & set(novel.classes.tolist())
    subset = cfg.pool_size or None
    pool_seed = stream(cfg.seed, "distractor", 0)
    pool_u = build_distractor_pool(base, overlap, labelled=False, subset_size=subset, seed=pool_seed)
    needs_labels = {"mt-conft", "standard-pairs"} & set(cfg.arms)
    pool_l = None
    prior = head = None
    layer_dims = (novel.dim,) + tuple(cfg.layer_dims)
    if base.labelled:
        prior, head = pretrain_prior(
            base, layer_dims, steps=cfg.prior_steps, batch_size=cfg.prior_batch,
            lr=cfg.prior_lr, beta=cfg.beta, seed=int(stream(cfg.seed, "init").integers(2**31)),
        )
        if needs_labels:
            pool_l = build_distractor_pool(base, overlap, labelled=True, subset_size=subset,
                                           seed=stream(cfg.seed, "distractor", 0))
            if overlap or subset:
                # head rows follow all base classes; keep only those present in the pool
                class_ids = np.unique(base.labels)
                head = type(head)(head.weights[np.searchsorted(class_ids, pool_l.class_ids)], head.beta)
    else:
        if needs_labels:
            raise ConfigurationError(f"arms {sorted(needs_labels)} need a labelled base domain")
        from .model import init_model

        prior = init_model(layer_dims, stream(cfg.seed, "init"))
    return Context(cfg, novel, prior, head, pool_u, pool_l)


class ExperimentError(ConftError):
    def __init__(self, arm, task_id, cause):
        self.arm, self.task_id, self.cause = arm, task_id, cause
        super().__init__(f"arm {arm}, task {task_id}: {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return (type(self), (self.arm, self.task_id, self.cause))


def task_seed(master, task_id):
    return int(np.random.SeedSequence([int(master), 101, int(task_id)]).generate_state(1)[0])


def run_task(ctx: Context, task_id):
    """All arms on one episode; returns {arm: (accuracy, trajectory or None)}."""
    cfg = ctx.cfg
    task = sample_episode(ctx.novel, cfg.ways, cfg.shots, cfg.queries, stream(cfg.seed, "episode", task_id))
    seed = task_seed(cfg.seed, task_id)
    out = {}
    for arm in cfg.arms:
        try:
            if arm == "no-finetune":
                res = evaluate_episode(ctx.prior, task, task_id)
                traj = None
                if cfg.snapshot_stride:
                    traj = relative_change_trajectory([snapshot(ctx.prior, task, 0)])[1]
                out[arm] = (res.accuracy, traj)
                continue
            fcfg = finetune_config(cfg, arm, seed)
            if arm == "conft-no-distractors":
                trace = finetune_without_distractors(ctx.prior, task, fcfg)
            elif arm in ("mt-conft", "standard-pairs"):
                trace = finetune(ctx.prior, task, ctx.pool_labelled, fcfg, head=ctx.head)
            else:
                trace = finetune(ctx.prior, task, ctx.pool_unlabelled, fcfg)
            res = evaluate_episode(trace.model, task, task_id)
            traj = relative_change_trajectory(trace.snapshots)[1] if trace.snapshots else None
            out[arm] = (res.accuracy, traj)
        except ConftError as exc:
            raise ExperimentError(arm, task_id, exc) from exc
    return out


_CTX = None


def _init_worker(ctx):
    global _CTX
    _CTX = ctx
    threadpool_limits(1)


def _worker(task_id):
    return task_id, run_task(_CTX, task_id)


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    aggregates: dict
    trajectories: dict
    accuracies: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Sample ``cfg.tasks`` episodes, run every arm on each, aggregate in task order."""
    with threadpool_limits(1):
        ctx = prepare(cfg)
        per_task = [None] * cfg.tasks
        if cfg.threads == 1:
            for t in range(cfg.tasks):
                per_task[t] = run_task(ctx, t)
                if progress:
                    progress(t + 1, cfg.tasks)
        else:
            mpctx = mp.get_context("fork")
            with mpctx.Pool(cfg.threads, initializer=_init_worker, initargs=(ctx,)) as pool:
                for done, (t, res) in enumerate(pool.imap_unordered(_worker, range(cfg.tasks)), 1):
                    per_task[t] = res
                    if progress:
                        progress(done, cfg.tasks)
    accuracies, aggregates, trajectories = {}, {}, {}
    for arm in cfg.arms:
        accuracies[arm] = np.array([per_task[t][arm][0] for t in range(cfg.tasks)])
        aggregates[arm] = aggregate(accuracies[arm])
        trajs = [per_task[t][arm][1] for t in range(cfg.tasks)]
        if all(tr is not None for tr in trajs):
            trajectories[arm] = average_trajectories(trajs)
    return ExperimentResult(cfg, aggregates, trajectories, accuracies)


def emit_results(result: ExperimentResult, out_dir):
    """Write results.csv, results.json, trajectory_<arm>.csv and config.echo."""
    cfg = result.cfg
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = ["arm,M,K,Q,T,mean_acc,ci95"]
        records = []
        for arm in cfg.arms:
            agg = result.aggregates[arm]
            rows.append(format_result_row(arm, cfg.ways, cfg.shots, cfg.queries, agg))
            records.append({
                "arm": arm, "M": cfg.ways, "K": cfg.shots, "Q": cfg.queries, "T": agg.n_tasks,
                "mean_acc": round(agg.mean, 6), "ci95": round(agg.half_width, 6),
            })
        (out / "results.csv").write_text("\n".join(rows) + "\n")
        (out / "results.json").write_text(json.dumps(records, indent=2) + "\n")
        for arm, traj in result.trajectories.items():
            lines = ["epoch,split,metric,delta_rel"]
            for i, epoch in enumerate(traj.epochs):
                for key in sorted(traj.series):
                    split, metric = key.split("/")
                    lines.append(f"{int(epoch)},{split},{metric},{traj.series[key][i]:.6f}")
            (out / f"trajectory_{arm}.csv").write_text("\n".join(lines) + "\n")
        (out / "config.echo").write_text(cfg.echo())
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return out


def format_result_row(arm, M, K, Q, agg):
    return f"{arm},{M},{K},{Q},{agg.n_tasks},{agg.mean:.6f},{agg.half_width:.6f}"
