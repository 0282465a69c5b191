import numpy as np
import pytest

from conft.errors import ConfigurationError, FinetuneDiverged
from conft.finetune import FinetuneConfig, finetune, finetune_without_distractors, stream
from conft.losses import LossConfig
from conft.model import ProjectionModel, init_model
from conft.taskgen import build_distractor_pool, generate_synthetic_domain, sample_episode


@pytest.fixture(scope="module")
def setup():
    novel = generate_synthetic_domain(10, 30, 8, 3.0, 1.0, 0)
    base = generate_synthetic_domain(12, 20, 8, 3.0, 1.0, 1, class_offset=100)
    prior = init_model((8, 16, 6), 2)
    return novel, base, prior


def cfg(**kw):
    kw.setdefault("loss", LossConfig(temperature=0.2))
    kw.setdefault("batch_size", 16)
    return FinetuneConfig(**kw)


def task(novel, K=5, seed=0):
    return sample_episode(novel, 5, K, 5, seed)


def same_params(a, b):
    return all(p.tobytes() == q.tobytes() for p, q in zip(a.parameters().values(), b.parameters().values()))


def test_zero_lr_keeps_prior(setup):
    novel, base, prior = setup
    tr = finetune(prior, task(novel), build_distractor_pool(base), cfg(epochs=5, lr=0.0))
    assert same_params(tr.model, prior)


def test_zero_lr_zero_noise_constant_trace(setup):
    novel, _, prior = setup
    tr = finetune_without_distractors(prior, task(novel, K=2), cfg(epochs=6, lr=0.0, sigma=0.0))
    assert np.all(tr.losses == tr.losses[0])


def test_single_epoch(setup):
    novel, base, prior = setup
    tr = finetune(prior, task(novel), build_distractor_pool(base), cfg(epochs=1))
    assert len(tr.losses) == 1
    assert not same_params(tr.model, prior)


def test_loss_descends(setup):
    novel, base, prior = setup
    tr = finetune(prior, task(novel), build_distractor_pool(base), cfg(epochs=200, lr=5e-3, sigma=0.0))
    assert len(tr.losses) == 200
    assert tr.losses[-1] < tr.losses[0]


def test_prior_not_mutated(setup):
    novel, base, prior = setup
    before = prior.copy()
    finetune(prior, task(novel), build_distractor_pool(base), cfg(epochs=3, lr=5e-3))
    assert same_params(before, prior)


def test_deterministic(setup):
    novel, base, prior = setup
    pool = build_distractor_pool(base)
    a = finetune(prior, task(novel), pool, cfg(epochs=10, seed=4, snapshot_stride=2))
    b = finetune(prior, task(novel), pool, cfg(epochs=10, seed=4, snapshot_stride=2))
    assert same_params(a.model, b.model)
    assert a.losses.tobytes() == b.losses.tobytes()
    assert a.snapshots == b.snapshots


def test_without_distractors_is_empty_pool_unweighted(setup):
    novel, _, prior = setup
    c = cfg(epochs=8, seed=3)
    a = finetune_without_distractors(prior, task(novel), c)
    b = finetune(prior, task(novel), None, cfg(epochs=8, seed=3, loss=LossConfig(temperature=0.2, weighting=False)))
    assert same_params(a.model, b.model)
    assert a.distractor_counts is None


def test_two_shot_smoke(setup):
    novel, _, prior = setup
    tr = finetune_without_distractors(prior, task(novel, K=2), cfg(epochs=20))
    assert np.all(np.isfinite(tr.losses))


def test_one_shot_runs(setup):
    novel, base, prior = setup
    tr = finetune(prior, task(novel, K=1), build_distractor_pool(base), cfg(epochs=5))
    assert tr.first_plan.augmented and np.all(np.isfinite(tr.losses))


def test_arms_share_first_plan(setup):
    novel, base, prior = setup
    t = task(novel)
    a = finetune(prior, t, build_distractor_pool(base), cfg(epochs=2, seed=9))
    b = finetune_without_distractors(prior, t, cfg(epochs=2, seed=9))
    np.testing.assert_array_equal(a.first_plan.anchors, b.first_plan.anchors)
    np.testing.assert_array_equal(a.first_plan.positives, b.first_plan.positives)
    np.testing.assert_array_equal(a.first_plan.omitted, b.first_plan.omitted)


@pytest.mark.parametrize("epochs,batch", [(7, 16), (15, 64), (30, 50)])
def test_distractor_usage_balanced(setup, epochs, batch):
    novel, base, prior = setup
    pool = build_distractor_pool(base)
    tr = finetune(prior, task(novel), pool, cfg(epochs=epochs, batch_size=batch))
    total = epochs * batch
    assert tr.distractor_counts.sum() == total
    assert tr.distractor_counts.min() >= total // len(pool)
    assert tr.distractor_counts.max() <= -(-total // len(pool))


def test_snapshots_on_stride(setup):
    novel, base, prior = setup
    tr = finetune(prior, task(novel), build_distractor_pool(base), cfg(epochs=7, snapshot_stride=3))
    assert [s.epoch for s in tr.snapshots] == [0, 3, 6, 7]


def test_divergence_carries_epoch(setup):
    novel, base, _ = setup
    dead = ProjectionModel([np.zeros((8, 4))], [np.zeros(4)])
    with pytest.raises(FinetuneDiverged) as info:
        finetune(dead, task(novel), build_distractor_pool(base), cfg(epochs=3))
    assert info.value.epoch == 1


def test_multitask_needs_labels(setup):
    novel, base, prior = setup
    with pytest.raises(ConfigurationError):
        finetune(prior, task(novel), build_distractor_pool(base), cfg(epochs=2, multitask=True))
    tr = finetune(prior, task(novel), build_distractor_pool(base, labelled=True), cfg(epochs=3, multitask=True))
    assert tr.head is not None and np.all(np.isfinite(tr.losses))


def test_standard_pairs_runs(setup):
    novel, base, prior = setup
    tr = finetune(prior, task(novel), build_distractor_pool(base, labelled=True),
                  cfg(epochs=3, pairing="standard"))
    assert np.all(np.isfinite(tr.losses))


def test_grid_mode():
    FinetuneConfig(epochs=200, lr=5e-3, loss=LossConfig(temperature=0.05), batch_size=64, grid_mode=True)
    with pytest.raises(ConfigurationError):
        FinetuneConfig(epochs=150, grid_mode=True)
    with pytest.raises(ConfigurationError):
        FinetuneConfig(epochs=0)


def test_streams_are_independent():
    a = stream(0, "pairing").integers(1 << 30, size=4)
    b = stream(0, "augment").integers(1 << 30, size=4)
    c = stream(0, "pairing").integers(1 << 30, size=4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, c)
