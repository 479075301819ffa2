import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _helpers import random_posterior
from betavcl.bnn import HyperParams, NetworkArchitecture, forward_mean, init_prior, train_task
from betavcl.data import SyntheticTaskSpec, TaskDataset, gen_synthetic_task
from betavcl.inference import (
    UNCERTAINTY_COLUMNS,
    PredictiveDistribution,
    UntrainedHeadWarning,
    classify,
    gate_summary,
    mutual_information,
    predictive_entropy,
    predictive_posterior,
    read_uncertainty_csv,
    sample_probs,
    uncertainty_report,
    write_uncertainty_csv,
)
from betavcl.numerics import RandomStream, softmax


def pd(rows):
    return PredictiveDistribution.from_samples(np.atleast_2d(np.asarray(rows, dtype=float)))


def test_classify():
    assert classify(pd([0.1, 0.7, 0.2])) == 1
    assert classify(pd([0.5, 0.5])) == 0
    assert classify(pd([0, 0, 1.0])) == 2


def test_entropy_examples():
    assert predictive_entropy(pd([0.25] * 4)) == pytest.approx(math.log(4), abs=1e-12)
    assert predictive_entropy(pd([0, 1.0, 0])) == 0.0
    assert predictive_entropy(pd([0.5, 0.5, 0, 0])) == pytest.approx(math.log(2), abs=1e-15)


def test_mutual_information_examples():
    assert mutual_information(pd([[0.2, 0.8]] * 5)) == pytest.approx(0.0, abs=1e-15)
    assert mutual_information(pd([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(math.log(2), abs=1e-15)


@given(st.integers(1, 30), st.integers(2, 8), st.integers(0, 10_000))
def test_mutual_information_direct_oracle(S, C, seed):
    rows = np.random.default_rng(seed).dirichlet(np.ones(C), size=S)
    mean = [sum(rows[s, c] for s in range(S)) / S for c in range(C)]
    h = -sum(m * math.log(m) for m in mean if m > 0)
    exp_h = sum(-sum(p * math.log(p) for p in row if p > 0) for row in rows) / S
    pred = pd(rows)
    assert predictive_entropy(pred) == pytest.approx(h, abs=1e-12)
    assert mutual_information(pred) == pytest.approx(h - exp_h, abs=1e-12)
    assert -1e-12 <= mutual_information(pred) <= predictive_entropy(pred) + 1e-12


def _trained(seed=0, C=3, sep=6.0, scale=1.0):
    ds = gen_synthetic_task(SyntheticTaskSpec(C, 60, 4, cluster_separation=sep, cluster_scale=scale, seed=seed))
    arch = NetworkArchitecture(4, (16,), (C,))
    hyper = HyperParams(epochs=40, batch_size=64, s_train=2, learning_rate=0.01, init_log_sigma=-3.0)
    return train_task(init_prior(arch), ds.features, ds.labels, 0, hyper, seed=seed), ds


def test_zero_variance_single_sample_is_softmax_forward():
    arch = NetworkArchitecture(4, (8,), (3,))
    post = random_posterior(arch, 1)
    for b in post.blocks():
        b.log_sigma[:] = -np.inf
    x = np.random.default_rng(0).normal(size=4)
    pred = predictive_posterior(post, 0, x, 1, RandomStream(0))
    np.testing.assert_allclose(pred.mean_probs, softmax(forward_mean(post, 0, x[None])[0]), atol=1e-12)


def test_mean_probs_self_consistent_across_sample_sizes():
    post, ds = _trained()
    x = ds.features[:5]
    big = sample_probs(post, 0, x, 10_000, RandomStream(1))
    small = sample_probs(post, 0, x, 100, RandomStream(2))
    se = big.std(axis=1) / math.sqrt(100)
    diff = np.abs(small.mean(axis=1) - big.mean(axis=1))
    assert np.all(diff <= 3 * se + 1e-9)


def test_sample_probs_independent_of_batch_composition():
    post, ds = _trained()
    whole = sample_probs(post, 0, ds.features[:7], 20, RandomStream(3))
    again = sample_probs(post, 0, ds.features[:7], 20, RandomStream(3))
    np.testing.assert_array_equal(whole, again)
    assert whole.shape == (7, 20, 3)


def test_untrained_head_warns():
    arch = NetworkArchitecture(4, (8,), (2,))
    with pytest.warns(UntrainedHeadWarning):
        sample_probs(init_prior(arch), 0, np.zeros((1, 4)), 2, RandomStream(0))
    with pytest.raises(ValueError):
        sample_probs(init_prior(arch), 0, np.zeros((1, 4)), 0, RandomStream(0))


def test_report_on_separable_task():
    post, ds = _trained(C=2, sep=10.0, scale=0.5)
    recs = uncertainty_report(post, 0, ds, 50, RandomStream(4))
    assert len(recs) == ds.n_samples
    correct = [r.entropy for r in recs if r.correct]
    assert np.mean(correct) < 0.2 * math.log(2)
    for r in recs:
        assert -1e-9 <= r.entropy <= math.log(2) + 1e-9
        assert -1e-12 <= r.mutual_information <= r.entropy + 1e-12


def test_report_with_adversarial_labels():
    post, ds = _trained(C=2, sep=10.0, scale=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        clean = uncertainty_report(post, 0, ds, 20, RandomStream(4))
    flipped = TaskDataset(ds.name, ds.features, [1 - r.predicted for r in clean], 2)
    recs = uncertainty_report(post, 0, flipped, 20, RandomStream(4))
    assert not any(r.correct for r in recs)
    assert len(recs) == ds.n_samples


def test_gate_thresholds():
    post, ds = _trained()
    recs = uncertainty_report(post, 0, ds, 20, RandomStream(5))
    everyone = gate_summary(recs, max_entropy=math.inf, max_mi=math.inf)
    assert everyone["n_accepted"] == len(recs)
    nobody = gate_summary(recs, max_entropy=0.0)
    assert nobody["n_accepted"] == 0 and nobody["accuracy_accepted"] is None


def test_csv_round_trip(tmp_path):
    post, ds = _trained()
    recs = uncertainty_report(post, 0, ds, 10, RandomStream(6), task="T")
    write_uncertainty_csv(recs, tmp_path / "u.csv")
    header = (tmp_path / "u.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == UNCERTAINTY_COLUMNS
    assert read_uncertainty_csv(tmp_path / "u.csv") == recs
