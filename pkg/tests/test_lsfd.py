import numpy as np
import pytest

from cfmimo.channel import sample_channel
from cfmimo.combining import lmmse_combiner
from cfmimo.estimation import (
    assign_pilots,
    compute_estimation_statistics,
    estimate_channels,
    synthesize_pilot_observation,
)
from cfmimo.lsfd import (
    LsfdAccumulator,
    LsfdStatistics,
    accumulate_lsfd,
    lsfd_sinr,
    lsfd_sinr_optimal,
    optimal_weights,
)
from cfmimo.rng import PURPOSE_CHANNEL, PURPOSE_PILOT_NOISE, keyed_stream
from cfmimo.scenario import generate_setup

from conftest import make_table, unit_config


def _stats_from_run(cfg, model, n_blocks, seed=0, setup=0):
    _, table = generate_setup(cfg, setup)
    assign = assign_pilots(cfg.K, cfg.tau_p)
    est = compute_estimation_statistics(table, assign, cfg)
    acc = LsfdAccumulator(cfg.M, cfg.K)
    real = sample_channel(table, model, keyed_stream(seed, setup, 0, PURPOSE_CHANNEL), batch=n_blocks)
    obs = synthesize_pilot_observation(
        real, assign, cfg, keyed_stream(seed, setup, 0, PURPOSE_PILOT_NOISE)
    )
    block = estimate_channels(obs, real.theta, est, assign, cfg)
    acc.update(lmmse_combiner(block, est, cfg).per_ap, real.h)
    return acc.finalize()


def test_deterministic_channel_statistics_are_exact():
    los = np.array([[[1.0 + 1.0j]], [[2.0 - 0.5j]]])  # M=2, K=1, N=1
    table = make_table(np.zeros((2, 1, 1, 1)), los)
    cfg = unit_config(M=2, K=1, N=1)
    real = sample_channel(table, "rician_fixed", keyed_stream(0, 0, 0, PURPOSE_CHANNEL))
    V = np.full((2, 1, 1), 0.5 + 0j)
    acc = LsfdAccumulator(2, 1)
    acc.update(V, real.h)
    stats = acc.finalize()
    expected_d = 0.5 * los[:, 0, 0]
    np.testing.assert_allclose(stats.mean_d[0], expected_d, rtol=1e-15)
    np.testing.assert_allclose(
        stats.theta[0, 0], np.outer(expected_d, expected_d.conj()), rtol=1e-15
    )
    np.testing.assert_allclose(stats.combiner_norm2[0], 0.25, rtol=1e-15)


def test_single_ap_theta_is_scalar_second_moment():
    cfg = unit_config(M=1, K=2, N=2, p_ul_mW=200.0)
    _, table = generate_setup(cfg, 0)
    real = sample_channel(table, "rayleigh", keyed_stream(1, 0, 0, PURPOSE_CHANNEL), batch=500)
    V = np.broadcast_to(
        np.array([[[1.0 + 0j, 0.5j], [0.3, -0.2j]]]), (500, 1, 2, 2)
    ).swapaxes(-1, -2)
    acc = LsfdAccumulator(1, 2)
    acc.update(np.ascontiguousarray(V), real.h)
    stats = acc.finalize()
    v0 = V[0, 0, :, 0]
    inner = np.einsum("n,bln->bl", v0.conj(), real.h[:, 0])
    for l in range(2):
        expected = np.mean(np.abs(inner[:, l]) ** 2)
        assert stats.theta[0, l][0, 0].real == pytest.approx(expected, rel=1e-12)


def test_merge_equals_sequential_accumulation():
    cfg = unit_config(M=2, K=3, N=2, p_ul_mW=200.0)
    _, table = generate_setup(cfg, 0)
    real = sample_channel(table, "rician_ps", keyed_stream(2, 0, 0, PURPOSE_CHANNEL), batch=40)
    V = np.random.default_rng(0).standard_normal((40, 2, 2, 3)) * (1 + 0j)
    whole = LsfdAccumulator(2, 3)
    whole.update(V[:25], real.h[:25])
    whole.update(V[25:], real.h[25:])
    left = LsfdAccumulator(2, 3)
    left.update(V[:25], real.h[:25])
    right = LsfdAccumulator(2, 3)
    right.update(V[25:], real.h[25:])
    left.merge(right)
    s1, s2 = whole.finalize(), left.finalize()
    assert np.array_equal(s1.mean_d, s2.mean_d)
    assert np.array_equal(s1.theta, s2.theta)
    assert s1.n_samples == s2.n_samples


def test_accumulate_lsfd_stream_wrapper():
    cfg = unit_config(M=2, K=2, N=1, p_ul_mW=200.0)
    _, table = generate_setup(cfg, 0)
    assign = assign_pilots(cfg.K, cfg.tau_p)
    est = compute_estimation_statistics(table, assign, cfg)

    def blocks():
        for b in range(5):
            real = sample_channel(table, "rayleigh", keyed_stream(3, 0, b, PURPOSE_CHANNEL))
            obs = synthesize_pilot_observation(
                real, assign, cfg, keyed_stream(3, 0, b, PURPOSE_PILOT_NOISE)
            )
            yield real, estimate_channels(obs, real.theta, est, assign, cfg)

    stats = accumulate_lsfd(blocks(), lambda e: lmmse_combiner(e, est, cfg).per_ap, cfg)
    assert stats.n_samples == 5
    assert stats.mean_d.shape == (2, 2)


def test_doubling_samples_halves_mean_variance():
    # variance-ratio over 50 repetitions must land in [1.6, 2.4]; a fixed
    # combiner keeps the per-link entries independent so the per-entry
    # ratios average out the chi-squared noise of the variance estimates
    cfg = unit_config(M=3, K=3, N=2, p_ul_mW=200.0)
    _, table = generate_setup(cfg, 0)
    V = np.ones((cfg.M, cfg.N, cfg.K), dtype=complex)

    def mean_d(seed, n_blocks):
        real = sample_channel(
            table, "rayleigh", keyed_stream(seed, 0, 0, PURPOSE_CHANNEL), batch=n_blocks
        )
        acc = LsfdAccumulator(cfg.M, cfg.K)
        acc.update(np.broadcast_to(V, (n_blocks,) + V.shape), real.h)
        return acc.finalize().mean_d

    small = np.array([mean_d(1000 + r, 50) for r in range(50)])
    large = np.array([mean_d(6000 + r, 100) for r in range(50)])
    var_small = np.var(small.real, axis=0) + np.var(small.imag, axis=0)
    var_large = np.var(large.real, axis=0) + np.var(large.imag, axis=0)
    assert 1.6 <= np.mean(var_small / var_large) <= 2.4


def test_optimal_weights_symmetric_for_identical_aps():
    theta = np.zeros((1, 1, 2, 2), dtype=complex)
    theta[0, 0] = np.array([[2.0, 0.3], [0.3, 2.0]])
    stats = LsfdStatistics(
        mean_d=np.array([[1.0 + 0.5j, 1.0 + 0.5j]]),
        theta=theta,
        combiner_norm2=np.array([[0.7, 0.7]]),
        n_samples=1000,
    )
    cfg = unit_config(M=2, K=1, N=1)
    weights, flags = optimal_weights(stats, cfg)
    assert not flags
    assert abs(weights[0, 0] - weights[0, 1]) <= 1e-9 * abs(weights[0, 0])


def test_optimality_against_random_weights():
    cfg = unit_config(M=4, K=3, N=2, p_ul_mW=200.0)
    stats = _stats_from_run(cfg, "rician_fixed", n_blocks=300)
    weights, _ = optimal_weights(stats, cfg)
    rng = np.random.default_rng(7)
    for k in range(cfg.K):
        best = lsfd_sinr(stats, weights, cfg, k)
        for _ in range(40):
            a = rng.standard_normal(cfg.M) + 1j * rng.standard_normal(cfg.M)
            trial = weights.copy()
            trial[k] = a / np.linalg.norm(a)
            assert best >= lsfd_sinr(stats, trial, cfg, k)


def test_sinr_scale_invariance_and_zero_rejection():
    cfg = unit_config(M=3, K=2, N=1, p_ul_mW=200.0)
    stats = _stats_from_run(cfg, "rayleigh", n_blocks=200)
    weights, _ = optimal_weights(stats, cfg)
    base = lsfd_sinr(stats, weights, cfg, 0)
    scaled = weights.copy()
    scaled[0] = 3.0 * scaled[0]
    assert lsfd_sinr(stats, scaled, cfg, 0) == pytest.approx(base, rel=1e-10)
    zero = weights.copy()
    zero[1] = 0.0
    with pytest.raises(ValueError):
        lsfd_sinr(stats, zero, cfg, 1)


def test_quotient_matches_closed_form_at_optimum():
    cfg = unit_config(M=4, K=3, N=2, p_ul_mW=200.0)
    for model in ("rician_ps", "rician_fixed", "rayleigh"):
        stats = _stats_from_run(cfg, model, n_blocks=300)
        weights, _ = optimal_weights(stats, cfg)
        for k in range(cfg.K):
            quotient = lsfd_sinr(stats, weights, cfg, k)
            closed = lsfd_sinr_optimal(stats, weights, cfg, k)
            assert quotient == pytest.approx(closed, rel=1e-8)


def test_optimal_weights_regularized_fallback_flagged():
    # Theta == d d^H with zero combiner norms makes the bracket exactly singular
    d = np.array([1.0 + 0j, 2.0])
    stats = LsfdStatistics(
        mean_d=d[None, :],
        theta=np.outer(d, d.conj())[None, None, :, :],
        combiner_norm2=np.zeros((1, 2)),
        n_samples=100,
    )
    cfg = unit_config(M=2, K=1, N=1)
    weights, flags = optimal_weights(stats, cfg)
    assert "regularized-solve" in flags
    assert np.all(np.isfinite(weights))


def test_sinr_vanishes_with_transmit_power():
    cfg = unit_config(M=3, K=2, N=1, p_ul_mW=200.0)
    stats = _stats_from_run(cfg, "rician_fixed", n_blocks=200)
    weights, _ = optimal_weights(stats, cfg)
    values = []
    for p in (200.0, 1e-3, 1e-6):
        cfg_p = unit_config(M=3, K=2, N=1, p_ul_mW=p)
        values.append(lsfd_sinr(stats, weights, cfg_p, 0))
    assert values[0] > values[1] > values[2] > 0.0
    assert values[2] < 1e-6 * values[0]
