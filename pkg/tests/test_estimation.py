import numpy as np
import pytest
from scipy.linalg import block_diag

from cfmimo.channel import sample_channel
from cfmimo.estimation import (
    assign_pilots,
    compute_estimation_statistics,
    estimate_channels,
    estimation_error,
    stacked_estimates,
    synthesize_pilot_observation,
)
from cfmimo.rng import PURPOSE_CHANNEL, PURPOSE_PILOT_NOISE, keyed_stream
from cfmimo.scenario import generate_setup

from conftest import make_table, unit_config


class _ZeroNoise:
    """Stub rng for the noise-free observation test hook."""

    def standard_normal(self, shape):
        return np.zeros(shape)


def test_assign_pilots_single_pilot_all_share():
    a = assign_pilots(4, 1)
    assert np.array_equal(a.pilot_of, [0, 0, 0, 0])
    for k in range(4):
        assert np.array_equal(a.copilot(k), [0, 1, 2, 3])


def test_assign_pilots_orthogonal():
    a = assign_pilots(4, 4)
    for k in range(4):
        assert np.array_equal(a.copilot(k), [k])


def test_assign_pilots_round_robin_modular():
    a = assign_pilots(5, 2)
    assert np.array_equal(a.groups[0], [0, 2, 4])
    assert np.array_equal(a.groups[1], [1, 3])
    # membership symmetric: l in P_k iff k in P_l
    for k in range(5):
        for l in a.copilot(k):
            assert k in a.copilot(int(l))


def test_assign_pilots_random_policy_needs_rng():
    with pytest.raises(ValueError):
        assign_pilots(4, 2, policy="random")
    a = assign_pilots(20, 3, policy="random", rng=np.random.default_rng(0))
    assert set(np.unique(a.pilot_of)) <= {0, 1, 2}


def test_scalar_statistics_worked_example():
    # N=1, tau_p=1, p=1, beta=1, sigma^2=1: Psi=2, Rhat=0.5, C=0.5, W=1.5
    table = make_table(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1)))
    cfg = unit_config(M=1, K=1, N=1)
    est = compute_estimation_statistics(table, assign_pilots(1, 1), cfg)
    assert est.psi[0, 0, 0, 0] == 2.0
    assert est.rhat[0, 0, 0, 0] == 0.5
    assert est.error_cov[0, 0, 0, 0] == 0.5
    assert est.w[0, 0, 0] == 1.5


def test_noiseless_orthogonal_estimation_is_near_exact():
    # orthogonal pilots and sigma^2 = 1e-12 on unit-scale links: C nearly vanishes
    rng = np.random.default_rng(0)
    A = rng.standard_normal((2, 3, 2, 2)) + 1j * rng.standard_normal((2, 3, 2, 2))
    R = A @ np.conj(np.swapaxes(A, -1, -2)) + 0.5 * np.eye(2)
    table = make_table(R, np.zeros((2, 3, 2)))
    cfg = unit_config(M=2, K=3, N=2, tau_p=3, noise_dBm=-120.0)
    est = compute_estimation_statistics(table, assign_pilots(cfg.K, cfg.tau_p), cfg)
    tr_c = np.trace(est.error_cov, axis1=-2, axis2=-1).real
    tr_r = np.trace(table.correlation, axis1=-2, axis2=-1).real
    assert np.all(tr_c <= 1e-6 * tr_r)


def test_error_covariance_complements_rhat(small_setup):
    cfg, table, assign, est = small_setup
    # the decomposition is definitional: C is computed as R - Rhat
    assert np.array_equal(est.error_cov, table.correlation - est.rhat)
    np.testing.assert_allclose(est.rhat + est.error_cov, table.correlation, rtol=1e-12)


def test_psi_shared_within_copilot_group(small_setup):
    cfg, table, assign, est = small_setup
    for group in assign.groups:
        for k in group[1:]:
            assert np.array_equal(est.psi[:, group[0]], est.psi[:, k])


def test_w_inverse_cached_consistently(small_setup):
    cfg, table, assign, est = small_setup
    eye = np.eye(cfg.N)
    prod = np.einsum("mab,mbc->mac", est.w, est.w_inv)
    np.testing.assert_allclose(prod, np.broadcast_to(eye, prod.shape), atol=1e-9)


def test_noise_free_observation_hook():
    cfg = unit_config(M=2, K=1, N=2, p_ul_mW=4.0, channel_model="rician_fixed")
    _, table = generate_setup(cfg, 0)
    real = sample_channel(table, "rician_fixed", keyed_stream(1, 0, 0, PURPOSE_CHANNEL))
    assign = assign_pilots(1, 1)
    obs = synthesize_pilot_observation(real, assign, cfg, _ZeroNoise())
    np.testing.assert_array_equal(obs.y[:, 0, :], 2.0 * 1 * real.h[:, 0, :])


def test_copilot_ues_share_observation():
    cfg = unit_config(M=2, K=4, N=2, tau_p=2, p_ul_mW=200.0)
    _, table = generate_setup(cfg, 0)
    assign = assign_pilots(4, 2)
    real = sample_channel(table, "rician_ps", keyed_stream(5, 0, 0, PURPOSE_CHANNEL))
    obs = synthesize_pilot_observation(
        real, assign, cfg, keyed_stream(5, 0, 0, PURPOSE_PILOT_NOISE)
    )
    y0, _ = obs.for_ue(1, 0)
    y2, _ = obs.for_ue(1, 2)
    assert np.array_equal(y0, y2)  # UEs 0 and 2 share pilot 0


def test_observation_mean_is_ybar():
    cfg = unit_config(M=1, K=1, N=1, channel_model="rician_fixed", p_ul_mW=200.0)
    _, table = generate_setup(cfg, 0)
    assign = assign_pilots(1, 1)
    n = 100_000
    real = sample_channel(table, "rician_fixed", keyed_stream(2, 0, 0, PURPOSE_CHANNEL), batch=n)
    obs = synthesize_pilot_observation(
        real, assign, cfg, keyed_stream(2, 0, 0, PURPOSE_PILOT_NOISE)
    )
    diff = (obs.y - obs.ybar)[:, 0, 0, 0]
    std_err = diff.std() / np.sqrt(n)
    assert abs(diff.mean()) <= 5 * std_err


def test_estimate_exact_for_deterministic_channel():
    los = np.array([[[0.3 - 0.7j, 1.1j]]])
    table = make_table(np.zeros((1, 1, 2, 2)), los)
    cfg = unit_config(M=1, K=1, N=2)
    assign = assign_pilots(1, 1)
    est = compute_estimation_statistics(table, assign, cfg)
    real = sample_channel(table, "rician_fixed", keyed_stream(0, 0, 0, PURPOSE_CHANNEL))
    obs = synthesize_pilot_observation(
        real, assign, cfg, keyed_stream(0, 0, 0, PURPOSE_PILOT_NOISE)
    )
    block = estimate_channels(obs, real.theta, est, assign, cfg)
    assert np.array_equal(block.hhat, los)


def test_estimate_and_error_covariances_scalar_case():
    # 1e5 scalar draws: Cov(hhat - mean) ~ Rhat, Cov(error) ~ C, and they decorrelate
    cfg = unit_config(M=1, K=1, N=1, p_ul_mW=2.0, channel_model="rician_ps")
    table = make_table(np.full((1, 1, 1, 1), 0.8), np.full((1, 1, 1), np.sqrt(0.4)))
    assign = assign_pilots(1, 1)
    est = compute_estimation_statistics(table, assign, cfg)
    n = 100_000
    real = sample_channel(table, "rician_ps", keyed_stream(9, 0, 0, PURPOSE_CHANNEL), batch=n)
    obs = synthesize_pilot_observation(
        real, assign, cfg, keyed_stream(9, 0, 0, PURPOSE_PILOT_NOISE)
    )
    block = estimate_channels(obs, real.theta, est, assign, cfg)
    centered = (block.hhat - real.los_rotated)[:, 0, 0, 0]
    err = estimation_error(real, block)[:, 0, 0, 0]

    var_hat = (np.abs(centered) ** 2).mean()
    se = (np.abs(centered) ** 2).std() / np.sqrt(n)
    assert abs(var_hat - est.rhat[0, 0, 0, 0].real) <= 5 * se

    var_err = (np.abs(err) ** 2).mean()
    se = (np.abs(err) ** 2).std() / np.sqrt(n)
    assert abs(var_err - est.error_cov[0, 0, 0, 0].real) <= 5 * se

    cross = centered * err.conj()
    se = cross.std() / np.sqrt(n)
    assert abs(cross.mean()) <= 5 * se


def test_stacked_estimates_match_centralized_oracle():
    # Eq-style centralized estimator on the stacked observation, built from
    # block-diagonal statistics, agrees with stacking the per-AP estimates.
    cfg = unit_config(M=4, K=3, N=2, tau_p=3, p_ul_mW=100.0, channel_model="rician_ps")
    _, table = generate_setup(cfg, 0)
    assign = assign_pilots(cfg.K, cfg.tau_p)
    est = compute_estimation_statistics(table, assign, cfg)
    real = sample_channel(table, "rician_ps", keyed_stream(4, 0, 0, PURPOSE_CHANNEL))
    obs = synthesize_pilot_observation(
        real, assign, cfg, keyed_stream(4, 0, 0, PURPOSE_PILOT_NOISE)
    )
    block = estimate_channels(obs, real.theta, est, assign, cfg)
    stacked = stacked_estimates(block)

    p = cfg.ue_powers_mW
    for k in range(cfg.K):
        R_k = block_diag(*[table.correlation[m, k] for m in range(cfg.M)])
        psi_k = block_diag(*[est.psi[m, k] for m in range(cfg.M)])
        t = int(assign.pilot_of[k])
        ydiff = np.concatenate([obs.y[m, t] - obs.ybar[m, t] for m in range(cfg.M)])
        los_rot = np.concatenate(
            [table.los[m, k] * np.exp(1j * real.theta[m, k]) for m in range(cfg.M)]
        )
        oracle = los_rot + np.sqrt(p[k]) * (R_k @ np.linalg.solve(psi_k, ydiff))
        np.testing.assert_allclose(stacked[:, k], oracle, rtol=1e-12, atol=1e-30)
