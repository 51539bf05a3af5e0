"""Receive combining: centralized MMSE, local MMSE, and GSLI-MMSE.

The centralized combiner exists in two algebraically identical forms: the
direct regularized solve in the stacked MN-dimensional domain, and the
matrix-inversion-lemma form whose only per-block inverse is K x K. The
lemma form splits per AP into a local Gram term plus the other APs' Gram
matrices ``Xi_m = Hhat_m^H W_m^-1 Hhat_m``; GSLI-MMSE replaces the sum of
the other APs' realized Gram matrices with its closed-form expectation,
which depends only on per-setup statistics.

All functions accept a leading batch axis on the estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SimulationConfig
from .estimation import ChannelEstimateBlock, EstimationStatistics, PilotAssignment
from .scenario import LinkStatisticsTable


class CombiningError(RuntimeError):
    """A combining solve failed on inputs that should be well-posed."""


@dataclass
class CombinerSet:
    """Combining vectors of one block (or batch): per-AP and optionally stacked.

    ``per_ap`` has shape (..., M, N, K) with v_mk in ``per_ap[..., m, :, k]``;
    ``stacked`` is the (..., M*N, K) concatenation when the scheme defines it.
    """

    scheme: str
    per_ap: np.ndarray
    stacked: np.ndarray | None = None
    flags: frozenset = field(default_factory=frozenset)


def _per_ap_matrix(estimates: ChannelEstimateBlock) -> np.ndarray:
    """Local estimate matrices Hhat_m, shape (..., M, N, K)."""
    return np.swapaxes(estimates.hhat, -1, -2)


def _stack(per_ap: np.ndarray) -> np.ndarray:
    shape = per_ap.shape
    return per_ap.reshape(shape[:-3] + (shape[-3] * shape[-2], shape[-1]))


def cmmse_combiner(
    estimates: ChannelEstimateBlock, est_stats: EstimationStatistics, config: SimulationConfig
) -> CombinerSet:
    """Centralized MMSE combining via the direct MN-dimensional solve."""
    p = config.ue_powers_mW
    Hm = _per_ap_matrix(estimates)
    Hs = _stack(Hm)
    A = np.einsum("...ik,k,...jk->...ij", Hs, p, Hs.conj()) + est_stats.w_stacked
    try:
        X = np.linalg.solve(A, Hs)
    except np.linalg.LinAlgError as err:
        raise CombiningError(f"centralized MMSE solve failed (non-finite inputs?): {err}") from None
    stacked = X * p
    M, N = est_stats.M, est_stats.N
    per_ap = stacked.reshape(stacked.shape[:-2] + (M, N, stacked.shape[-1]))
    return CombinerSet(scheme="cmmse", per_ap=per_ap, stacked=stacked)


def cmmse_via_lemma(
    estimates: ChannelEstimateBlock, est_stats: EstimationStatistics, config: SimulationConfig
) -> CombinerSet:
    """Centralized MMSE via the inversion lemma; only a K x K solve per block.

    Uses the cached block inverses of W, so per AP the work is one N x K
    product; the lemma makes this equal (to rounding) to the direct solve.
    """
    p = config.ue_powers_mW
    Hm = _per_ap_matrix(estimates)
    T = np.einsum("mab,...mbk->...mak", est_stats.w_inv, Hm)
    gram = np.einsum("...mak,...mal->...mkl", Hm.conj(), T)
    inner = gram.sum(axis=-3) + np.diag(1.0 / p)
    try:
        X = np.linalg.solve(inner, np.eye(est_stats.K, dtype=complex))
    except np.linalg.LinAlgError as err:
        raise CombiningError(f"K x K MMSE solve failed: {err}") from None
    per_ap = np.einsum("...mak,...kl->...mal", T, X)
    return CombinerSet(scheme="cmmse", per_ap=per_ap, stacked=_stack(per_ap))


def lmmse_combiner(
    estimates: ChannelEstimateBlock,
    est_stats: EstimationStatistics,
    config: SimulationConfig,
    m: int | None = None,
) -> CombinerSet:
    """Local MMSE combining from each AP's own estimates and statistics.

    With ``m`` given, only that AP's (..., N, K) combiners are returned.
    """
    p = config.ue_powers_mW
    Hm = _per_ap_matrix(estimates)
    w = est_stats.w
    if m is not None:
        Hm = Hm[..., m, :, :]
        w = w[m]
    A = np.einsum("...ak,k,...bk->...ab", Hm, p, Hm.conj()) + w
    try:
        X = np.linalg.solve(A, Hm)
    except np.linalg.LinAlgError as err:
        raise CombiningError(f"local MMSE solve failed: {err}") from None
    return CombinerSet(scheme="lmmse", per_ap=X * p)


def realized_gram(
    estimates: ChannelEstimateBlock, est_stats: EstimationStatistics
) -> np.ndarray:
    """Instantaneous per-AP Gram matrices Hhat_m^H W_m^-1 Hhat_m, (..., M, K, K)."""
    Hm = _per_ap_matrix(estimates)
    T = np.einsum("mab,...mbk->...mak", est_stats.w_inv, Hm)
    return np.einsum("...mak,...mal->...mkl", Hm.conj(), T)


def _expected_gram_all(
    model: str,
    est_stats: EstimationStatistics,
    link_stats: LinkStatisticsTable,
    assignment: PilotAssignment,
    config: SimulationConfig,
) -> np.ndarray:
    """Closed-form E{Gram} for every AP, shape (M, K, K).

    Entry (k, l) of AP m is E{hhat_mk^H W_m^-1 hhat_ml}. Co-pilot pairs
    contribute the estimation cross-covariance trace; LoS products contribute
    for all pairs without phase-shifts, only on the diagonal with random
    phase-shifts, and never under Rayleigh fading.
    """
    p = config.ue_powers_mW
    tau_p = assignment.tau_p
    R = link_stats.correlation
    # Q_k = Psi_k^-1 R_k W^-1 cached per (m, k); the (k, l) trace is tr(R_l Q_k)
    Q = np.einsum("mkab,mkbc,mcd->mkad", est_stats.psi_inv, R, est_stats.w_inv)
    trace_term = np.einsum("mlab,mkba->mkl", R, Q)
    sqrt_p = np.sqrt(p)
    trace_term = trace_term * (tau_p * sqrt_p[None, :, None] * sqrt_p[None, None, :])
    copilot = assignment.pilot_of[:, None] == assignment.pilot_of[None, :]
    gram = np.where(copilot[None, :, :], trace_term, 0.0 + 0.0j)
    if model == "rician_fixed":
        los_term = np.einsum("mka,mab,mlb->mkl", link_stats.los.conj(), est_stats.w_inv, link_stats.los)
        gram = gram + los_term
    elif model == "rician_ps":
        los_diag = np.einsum("mka,mab,mkb->mk", link_stats.los.conj(), est_stats.w_inv, link_stats.los)
        idx = np.arange(est_stats.K)
        gram[:, idx, idx] += los_diag
    elif model != "rayleigh":
        raise ValueError(f"unknown channel model {model!r}")
    return gram


@dataclass
class ExpectedGramTable:
    """Per-AP expected Gram matrices and their leave-one-out partial sums."""

    per_ap: np.ndarray  # (M, K, K)
    total: np.ndarray  # (K, K)

    def leave_one_out(self, m: int) -> np.ndarray:
        return self.total - self.per_ap[m]

    def leave_one_out_all(self) -> np.ndarray:
        return self.total[None, :, :] - self.per_ap


def expected_gram(
    model: str,
    est_stats: EstimationStatistics,
    link_stats: LinkStatisticsTable,
    assignment: PilotAssignment,
    config: SimulationConfig,
    ap: int,
) -> np.ndarray:
    """Closed-form E{Hhat_m^H W_m^-1 Hhat_m} for one AP, shape (K, K)."""
    return _expected_gram_all(model, est_stats, link_stats, assignment, config)[ap]


def expected_gram_table(
    model: str,
    est_stats: EstimationStatistics,
    link_stats: LinkStatisticsTable,
    assignment: PilotAssignment,
    config: SimulationConfig,
) -> ExpectedGramTable:
    per_ap = _expected_gram_all(model, est_stats, link_stats, assignment, config)
    return ExpectedGramTable(per_ap=per_ap, total=per_ap.sum(axis=0))


def gsli_combiner(
    estimates: ChannelEstimateBlock,
    est_stats: EstimationStatistics,
    other_ap_gram: np.ndarray,
    config: SimulationConfig,
    m: int | None = None,
) -> CombinerSet:
    """GSLI-MMSE combining: local instantaneous Gram plus other APs' statistics.

    ``other_ap_gram`` is the leave-one-out sum of expected Gram matrices,
    shape (M, K, K), or (K, K) when a single AP ``m`` is requested. A failed
    K x K solve is retried once with +1e-12 I regularization and flagged.
    """
    p = config.ue_powers_mW
    K = est_stats.K
    Hm = _per_ap_matrix(estimates)
    w_inv = est_stats.w_inv
    if m is not None:
        Hm = Hm[..., m, :, :]
        w_inv = w_inv[m]
        sub = "ab,...bk->...ak"
    else:
        sub = "mab,...mbk->...mak"
    T = np.einsum(sub, w_inv, Hm)
    gram = np.einsum("...ak,...al->...kl", Hm.conj(), T)
    inner = gram + other_ap_gram + np.diag(1.0 / p)
    eye = np.eye(K, dtype=complex)
    flags = frozenset()
    try:
        X = np.linalg.solve(inner, eye)
    except np.linalg.LinAlgError:
        flags = frozenset({"regularized-solve"})
        try:
            X = np.linalg.solve(inner + 1e-12 * eye, eye)
        except np.linalg.LinAlgError as err:
            raise CombiningError(f"GSLI K x K solve failed after regularization: {err}") from None
    per_ap = np.einsum("...ak,...kl->...al", T, X)
    return CombinerSet(scheme="gsli", per_ap=per_ap, flags=flags)
