import csv

import numpy as np
import pytest
from scipy.stats import chisquare

from semantic_control import DomainError, GibbsSampler, NoisyConditionalLM, TabularJointLM
from semantic_control.gibbs import (
    continuation_histogram,
    convergence_trace,
    initialize_sequence,
    write_trace_csv,
)
from semantic_control.oracle import tv_distance


def pooled(sampler, lm, prefix, seed, n_chains):
    rng = np.random.default_rng(seed)
    run = sampler.run_chain if sampler.n_workers == 1 else sampler.run_hogwild
    return [s for _ in range(n_chains) for s in run(lm, prefix, rng.spawn(1)[0])]


def marginal_tv(samples, lm_scores, prefix_len):
    samples = np.asarray(samples)
    worst = 0.0
    for j in range(prefix_len, samples.shape[1]):
        emp = np.bincount(samples[:, j], minlength=lm_scores.shape[1]) / len(samples)
        exact = np.exp(lm_scores[j]) / np.exp(lm_scores[j]).sum()
        worst = max(worst, tv_distance(emp, exact))
    return worst


def test_init_no_lookahead(lm):
    out = initialize_sequence(lm, [1, 2, 3, 4, 5], 0, "uniform", np.random.default_rng(0))
    np.testing.assert_array_equal(out, [1, 2, 3, 4, 5])


def test_init_length_mismatch(lm):
    with pytest.raises(DomainError):
        initialize_sequence(lm, [1, 2], 2, "uniform", np.random.default_rng(0))


def test_init_uniform_frequencies(lm):
    a = initialize_sequence(lm, [0], 4, "uniform", np.random.default_rng(3))
    b = initialize_sequence(lm, [0], 4, "uniform", np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    rng = np.random.default_rng(4)
    draws = np.array([initialize_sequence(lm, [0], 4, "uniform", rng)[1:] for _ in range(10_000)])
    for j in range(4):
        assert chisquare(np.bincount(draws[:, j], minlength=6)).pvalue > 0.01


def test_init_crude_ar_on_uniform_joint():
    lm = TabularJointLM.uniform(6, 4)
    rng = np.random.default_rng(5)
    draws = np.array([initialize_sequence(lm, [2], 3, "crude-ar", rng)[1:] for _ in range(6000)])
    for j in range(3):
        assert chisquare(np.bincount(draws[:, j], minlength=6)).pvalue > 0.01


def test_factorized_marginals():
    scores = np.random.default_rng(5).normal(0.0, 1.5, size=(4, 4))
    lm = TabularJointLM.factorized(scores)
    sampler = GibbsSampler(n_iter=40, thinning=2, init="uniform")
    samples = pooled(sampler, lm, [1], 0, 500)[:5000]
    assert len(samples) == 5000
    assert marginal_tv(samples, scores, 1) < 0.02


def test_uniform_joint_continuations():
    lm = TabularJointLM.uniform(4, 4)
    sampler = GibbsSampler(n_iter=20, thinning=5, init="uniform")
    samples = pooled(sampler, lm, [3], 1, 2500)
    counts = continuation_histogram(samples, 1, 4) * len(samples)
    assert len(samples) == 5000
    assert chisquare(counts).pvalue > 0.01


def test_toy_a_pooled_convergence(lm):
    # 216 continuations need ~2e4 kept states for the histogram noise to sit well under 0.05
    prefix = [0, 1]
    sampler = GibbsSampler(n_iter=2000, thinning=5)
    samples = pooled(sampler, lm, prefix, 7, 100)
    emp = continuation_histogram(samples, 2, 6)
    assert tv_distance(emp, lm.continuation_dist(prefix).ravel()) < 0.05


def test_hogwild_factorized_is_exact():
    scores = np.random.default_rng(8).normal(0.0, 1.5, size=(4, 4))
    lm = TabularJointLM.factorized(scores)
    sampler = GibbsSampler(n_iter=40, thinning=2, n_workers=2, block_size=2, init="uniform")
    samples = pooled(sampler, lm, [0], 2, 1000)
    assert marginal_tv(samples, scores, 1) < 0.02


@pytest.mark.parametrize("block_size, mode", [(1, "sequential"), (2, "sequential"), (3, "joint")])
def test_hogwild_single_worker_is_run_chain(lm, block_size, mode):
    sampler = GibbsSampler(n_iter=60, thinning=5, block_size=block_size, block_mode=mode)
    a = sampler.run_chain(lm, [4], np.random.default_rng(11))
    b = sampler.run_hogwild(lm, [4], np.random.default_rng(11))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_hogwild_four_workers_bounded(lm):
    prefix = [1, 2]
    exact = lm.continuation_dist(prefix).ravel()
    one = pooled(GibbsSampler(n_iter=200, thinning=5, n_workers=1), lm, prefix, 3, 100)
    four = pooled(GibbsSampler(n_iter=200, thinning=5, n_workers=4), lm, prefix, 3, 100)
    assert len(one) == len(four)
    tv1 = tv_distance(continuation_histogram(one, 2, 6), exact)
    tv4 = tv_distance(continuation_histogram(four, 2, 6), exact)
    print(f"hogwild TV: W=1 {tv1:.4f}  W=4 {tv4:.4f}")
    assert tv4 <= 3 * tv1


@pytest.mark.parametrize("workers", [1, 3])
def test_prefix_immutable(lm, workers):
    sampler = GibbsSampler(n_iter=30, thinning=3, block_size=2, n_workers=workers)
    for s in sampler.sample(lm, [5, 0], np.random.default_rng(0)):
        np.testing.assert_array_equal(s[:2], [5, 0])
        assert s.min() >= 0 and s.max() < 6


def test_determinism(lm):
    sampler = GibbsSampler()
    a = sampler.sample(lm, [2], 99)
    b = sampler.sample(lm, [2], 99)
    np.testing.assert_array_equal(np.array(a), np.array(b))


def test_default_config_sample_count(lm):
    # 20 updates, burn-in 10, thinning 5 keeps updates 15 and 20 of each chain
    assert len(GibbsSampler().sample(lm, [0], 0)) == 4


def test_nothing_kept_returns_final_state(lm):
    out = GibbsSampler(n_iter=3, thinning=3, burn_in=3).run_chain(lm, [0], 0)
    assert len(out) == 1


def test_sample_fills_requested_count(lm):
    assert len(GibbsSampler().sample(lm, [0], 0, n_samples=7)) == 7


def test_convergence_with_iterations(lm):
    prefix = [0, 4]
    exact = lm.continuation_dist(prefix).ravel()
    tvs = []
    for n_iter in (100, 500, 2000, 5000):
        samples = pooled(GibbsSampler(n_iter=n_iter, thinning=5, init="uniform"), lm, prefix, 21, 40)
        tvs.append(tv_distance(continuation_histogram(samples, 2, 6), exact))
    assert all(b <= a + 0.02 for a, b in zip(tvs, tvs[1:])), tvs
    assert tvs[-1] < 0.05


@pytest.mark.parametrize(
    "params",
    [dict(n_iter=0), dict(thinning=30), dict(block_size=0), dict(init="greedy"), dict(block_mode="parallel")],
)
def test_invalid_config(params):
    with pytest.raises(DomainError):
        GibbsSampler(**params).validate()


def test_block_larger_than_lookahead():
    with pytest.raises(DomainError):
        GibbsSampler(block_size=4).validate(lookahead=3)


def test_joint_block_covering_lookahead_is_exact():
    # one joint block over the whole continuation draws straight from the exact conditional
    lm = TabularJointLM(vocab_size=3, horizon=4, random_state=3).fit()
    sampler = GibbsSampler(n_iter=10, thinning=1, burn_in=0, block_size=3, block_mode="joint")
    samples = pooled(sampler, lm, [1], 6, 400)
    exact = lm.continuation_dist([1]).ravel()
    assert tv_distance(continuation_histogram(samples, 1, 3), exact) < 0.05


def test_noisy_conditionals(lm):
    noisy = NoisyConditionalLM(lm, noise_scale=0.5, random_state=1)
    seq = [1, 2, 3, 4, 5]
    p = noisy.masked_conditional(seq, 3)
    np.testing.assert_allclose(p.sum(), 1.0)
    np.testing.assert_array_equal(p, noisy.masked_conditional(seq, 3))
    assert tv_distance(p, lm.masked_conditional(seq, 3)) > 0
    np.testing.assert_allclose(NoisyConditionalLM(lm, 0.0).masked_conditional(seq, 3), lm.masked_conditional(seq, 3))


def test_noise_degrades_accuracy(lm):
    prefix = [0, 1]
    exact = lm.continuation_dist(prefix).ravel()
    sampler = GibbsSampler(n_iter=400, thinning=5)
    clean = pooled(sampler, lm, prefix, 4, 40)
    noisy = pooled(sampler, NoisyConditionalLM(lm, 1.5), prefix, 4, 40)
    assert tv_distance(continuation_histogram(noisy, 2, 6), exact) > tv_distance(
        continuation_histogram(clean, 2, 6), exact)


def test_trace_csv(lm, tmp_path):
    trace = convergence_trace(lm, [1, 2], GibbsSampler(n_iter=30, thinning=5), random_state=0, n_chains=20)
    assert [t for t, _ in trace] == list(range(1, 31))
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "tv"]
    assert len(rows) == 31
    assert all(0 <= float(r[1]) <= 1 for r in rows[1:])
