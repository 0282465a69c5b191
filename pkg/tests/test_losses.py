import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conft.errors import ConfigurationError, LabelDomainError, MalformedPlanError, UndefinedWeightingError
from conft.losses import (
    CosineClassifierHead,
    LossConfig,
    compute_alpha,
    conft_loss,
    mt_conft_loss,
    mtce_loss,
    standard_pairs_loss,
)
from conft.pairing import PairPlan, build_pair_plan

from helpers import random_plan, unit_rows
from oracles import brute_force_conft, brute_force_mtce


def single_anchor_plan(n_neg):
    """Anchor 0, positive 1, negatives 2..n_neg+1."""
    labels = np.array([0, 0] + [1] * n_neg)
    return PairPlan(labels, np.array([0]), np.array([1]), [np.arange(2, 2 + n_neg)],
                    np.zeros(0, dtype=np.int64), n_support=2 + n_neg)


def test_alpha_values():
    assert compute_alpha(7, 7) == 1.0
    assert compute_alpha(20, 128) == 256 / 148
    assert compute_alpha(3, 0) == 0.0
    with pytest.raises(UndefinedWeightingError):
        compute_alpha(0, 0)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(0, 500), d=st.integers(0, 500))
def test_alpha_range(n, d):
    if n + d == 0:
        return
    a = compute_alpha(n, d)
    assert 0 <= a <= 2
    if n and d:
        assert 0 < a < 2


def test_uniform_similarity():
    # all dot products equal: every exponential is the same
    n = 3
    z = np.tile([1.0, 0.0], (2 + n, 1))
    zd = np.tile([1.0, 0.0], (n, 1))
    rep = conft_loss(z, single_anchor_plan(n), zd, LossConfig(temperature=0.3, weighting=True))
    np.testing.assert_allclose(rep.terms, 1 / (1 + 2 * n), rtol=1e-14)
    np.testing.assert_allclose(rep.loss, math.log(1 + 2 * n), rtol=1e-14)


def test_scalar_margin_no_distractors():
    # positive at +1, one task negative at -1, no distractors: weighting falls back to 1
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    rep = conft_loss(z, single_anchor_plan(1), None, LossConfig(temperature=0.1))
    expect = math.log1p(math.exp(-20))  # -log(e^10 / (e^10 + e^-10))
    np.testing.assert_allclose(rep.loss, expect, rtol=0, atol=1e-15)
    assert abs(rep.loss - 2.06e-9) < 1e-11


def test_scalar_margin_two_negatives():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    rep = conft_loss(z, single_anchor_plan(2), None, LossConfig(temperature=0.1, weighting=False))
    assert abs(rep.loss - 4.12e-9) < 1e-11


@pytest.mark.parametrize("seed", range(60))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ways, shots = int(rng.integers(2, 4)), int(rng.integers(1, 5))
    n_dt = int(rng.integers(0, 9))
    plan = random_plan(rng, ways, shots)
    zs, zd = unit_rows(rng, plan.n_views, 5), unit_rows(rng, n_dt, 5)
    gamma = float(rng.choice([0.05, 0.1, 0.5]))
    for weighting in (True, False):
        rep = conft_loss(zs, plan, zd, LossConfig(temperature=gamma, weighting=weighting))
        ref = brute_force_conft(zs, plan.anchors, plan.positives, plan.negatives, zd, gamma, weighting)
        assert abs(rep.loss - ref) <= 1e-10 * max(1.0, abs(ref))


def test_normalize_by_support_flag():
    rng = np.random.default_rng(0)
    plan = build_pair_plan(np.repeat(np.arange(3), 3), 3, rng)
    zs, zd = unit_rows(rng, 9, 4), unit_rows(rng, 5, 4)
    by_anchor = conft_loss(zs, plan, zd, LossConfig())
    by_support = conft_loss(zs, plan, zd, LossConfig(normalize_by_support=True))
    np.testing.assert_allclose(by_support.loss * 9, by_anchor.loss * len(plan.anchors), rtol=1e-13)


@pytest.mark.parametrize("seed", range(100))
def test_equal_sizes_reduce_to_unweighted(seed):
    rng = np.random.default_rng(seed)
    plan = build_pair_plan(np.repeat(np.arange(3), 2), 2, rng)  # |N(i)| = 4
    zs, zd = unit_rows(rng, 6, 4), unit_rows(rng, 4, 4)
    a = conft_loss(zs, plan, zd, LossConfig(temperature=0.2, weighting=True))
    b = conft_loss(zs, plan, zd, LossConfig(temperature=0.2, weighting=False))
    np.testing.assert_array_equal(a.alphas, 1.0)
    assert abs(a.loss - b.loss) <= 1e-12


def test_alpha_per_anchor_with_omission():
    plan = build_pair_plan(np.repeat(np.arange(5), 5), 5, 0)
    rng = np.random.default_rng(1)
    rep = conft_loss(unit_rows(rng, 25, 6), plan, unit_rows(rng, 128, 6), LossConfig())
    np.testing.assert_allclose(rep.alphas, 2 * 128 / (16 + 128))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), gamma=st.sampled_from([0.01, 0.05, 0.1, 1.0]))
def test_terms_bounded_and_finite(seed, gamma):
    rng = np.random.default_rng(seed)
    plan = random_plan(rng, 3, int(rng.integers(1, 6)))
    rep = conft_loss(unit_rows(rng, plan.n_views, 4), plan, unit_rows(rng, 6, 4),
                     LossConfig(temperature=gamma))
    assert np.isfinite(rep.loss) and rep.loss >= 0
    assert np.all((rep.terms > 0) & (rep.terms <= 1))
    assert np.all(np.isfinite(rep.grad_support)) and np.all(np.isfinite(rep.grad_distractors))


def test_stable_at_low_temperature():
    z = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    rep = conft_loss(z, single_anchor_plan(1), None, LossConfig(temperature=0.01))
    assert np.isfinite(rep.loss) and rep.loss > 190  # about 2/0.01


def test_monotone_in_similarities():
    base = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    plan = single_anchor_plan(1)
    cfg = LossConfig(temperature=0.5)
    d_near, d_far = np.array([[0.8, 0.6]]), np.array([[0.6, 0.8]])
    assert conft_loss(base, plan, d_near, cfg).loss > conft_loss(base, plan, d_far, cfg).loss
    closer = base.copy()
    closer[1] = [0.8, 0.6]
    assert conft_loss(closer, plan, d_far, cfg).loss < conft_loss(base, plan, d_far, cfg).loss


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    plan = build_pair_plan(np.repeat(np.arange(3), 4), 4, rng)
    zs, zd = unit_rows(rng, 12, 5), unit_rows(rng, 7, 5)
    cfg = LossConfig(temperature=0.1)
    ref = conft_loss(zs, plan, zd, cfg).loss
    assert abs(conft_loss(zs, plan, zd[rng.permutation(7)], cfg).loss - ref) <= 1e-12
    shuffled = PairPlan(plan.labels, plan.anchors, plan.positives,
                        [rng.permutation(n) for n in plan.negatives], plan.omitted, plan.n_support)
    assert abs(conft_loss(zs, shuffled, zd, cfg).loss - ref) <= 1e-12


def test_empty_plan_rejected():
    plan = PairPlan(np.array([0, 1]), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), [],
                    np.zeros(0, dtype=np.int64), 2)
    with pytest.raises(MalformedPlanError):
        conft_loss(np.eye(2), plan, None, LossConfig())


def test_config_validation():
    for bad in ({"temperature": 0}, {"lam": -1}, {"beta": 0}):
        with pytest.raises(ConfigurationError):
            LossConfig(**bad)


def test_mtce_aligned_two_classes():
    head = CosineClassifierHead(np.eye(2), beta=10)
    loss, _, _ = mtce_loss(np.array([[1.0, 0.0]]), np.array([0]), head)
    np.testing.assert_allclose(loss, math.log1p(math.exp(-10)), rtol=1e-9)  # -log(e^10 / (e^10 + e^0))
    assert abs(loss - 4.54e-5) < 1e-7


def test_mtce_uniform_logits():
    head = CosineClassifierHead(np.ones((6, 3)), beta=10)
    z = unit_rows(np.random.default_rng(0), 4, 3)
    loss, _, _ = mtce_loss(z, np.array([0, 1, 2, 5]), head)
    np.testing.assert_allclose(loss, math.log(6), rtol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_mtce_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((5, 4))
    z, y = unit_rows(rng, 7, 4), rng.integers(0, 5, 7)
    loss, _, _ = mtce_loss(z, y, CosineClassifierHead(W, 3.0))
    np.testing.assert_allclose(loss, brute_force_mtce(z, y, W, 3.0), rtol=1e-12)


def test_mtce_label_errors():
    head = CosineClassifierHead(np.eye(3))
    with pytest.raises(LabelDomainError):
        mtce_loss(np.eye(3), np.array([0, 1, 3]), head)
    with pytest.raises(LabelDomainError):
        mtce_loss(np.eye(3), np.array([0, -1, 2]), head)


def mt_instance(seed):
    rng = np.random.default_rng(seed)
    plan = build_pair_plan(np.repeat(np.arange(3), 2), 2, rng)
    return (unit_rows(rng, 6, 4), plan, unit_rows(rng, 8, 4), rng.integers(0, 4, 8),
            CosineClassifierHead(rng.standard_normal((4, 4))))


@pytest.mark.parametrize("seed", range(5))
def test_mt_lambda_zero_is_conft(seed):
    zs, plan, zd, y, head = mt_instance(seed)
    cfg = LossConfig(lam=0.0)
    mt = mt_conft_loss(zs, plan, zd, y, head, cfg)
    base = conft_loss(zs, plan, zd, cfg)
    assert abs(mt.loss - base.loss) <= 1e-12
    np.testing.assert_allclose(mt.grad_distractors, base.grad_distractors, rtol=0, atol=1e-12)
    np.testing.assert_allclose(mt.grad_head["head"], 0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_mt_additive(seed):
    zs, plan, zd, y, head = mt_instance(seed)
    cfg = LossConfig(lam=1.0)
    mt = mt_conft_loss(zs, plan, zd, y, head, cfg)
    ce, _, _ = mtce_loss(zd, y, head)
    assert abs(mt.loss - (conft_loss(zs, plan, zd, cfg).loss + ce)) <= 1e-12
    assert mt.mtce == ce


def test_mt_needs_labels():
    zs, plan, zd, _, head = mt_instance(0)
    with pytest.raises(ConfigurationError):
        mt_conft_loss(zs, plan, zd, None, head, LossConfig())


def test_head_from_class_means():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    head = CosineClassifierHead.from_class_means(z, np.array([0, 1, 0]), 2)
    np.testing.assert_allclose(head.weights, np.eye(2))
    with pytest.raises(LabelDomainError):
        CosineClassifierHead.from_class_means(z, np.array([0, 0, 0]), 2)


def test_standard_pairs_uses_distractor_anchors():
    rng = np.random.default_rng(0)
    plan = build_pair_plan(np.repeat(np.arange(2), 2), 2, rng)
    zs, zd = unit_rows(rng, 4, 3), unit_rows(rng, 6, 3)
    y = np.array([0, 0, 1, 1, 2, 2])
    rep = standard_pairs_loss(zs, plan, zd, y, LossConfig(temperature=0.5), np.random.default_rng(1))
    assert len(rep.terms) == len(plan.anchors) + 6
    assert np.any(rep.grad_distractors != 0)
    with pytest.raises(ConfigurationError):
        standard_pairs_loss(zs, plan, zd, None, LossConfig(), rng)
