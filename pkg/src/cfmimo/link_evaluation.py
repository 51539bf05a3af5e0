"""Uplink centralized SINR, downlink duality precoding, and downlink SINR.

Both link directions use the use-and-forget style bound: only the mean
effective channel is treated as known, everything else counts as
interference. Expectations are sample means over coherence blocks. Downlink
precoders are the uplink combiners scaled to per-UE power budgets; the scale
factors come from a warm-up pass so they are statistics, not functions of
the evaluation samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .combining import CombinerSet
from .config import SimulationConfig


def _batched(arr: np.ndarray, core_ndim: int) -> np.ndarray:
    if arr.ndim == core_ndim:
        return arr[None]
    return arr.reshape((-1,) + arr.shape[-core_ndim:])


@dataclass
class UatfStatistics:
    """Moments entering the centralized uplink SINR."""

    mean_signal: np.ndarray  # (K,) complex, E{v_k^H h_k}
    second_moments: np.ndarray  # (K, K) real, [k, l] = E{|v_k^H h_l|^2}
    mean_norm2: np.ndarray  # (K,) real, E{||v_k||^2}
    n_samples: int


class UatfAccumulator:
    """Mergeable sums for :class:`UatfStatistics` (stacked-domain combiners)."""

    def __init__(self, K: int):
        self.K = K
        self._signal = np.zeros(K, dtype=complex)
        self._second = np.zeros((K, K))
        self._norm2 = np.zeros(K)
        self._n = 0

    def update(self, stacked_combiners: np.ndarray, stacked_channels: np.ndarray) -> None:
        V = _batched(stacked_combiners, 2)
        H = _batched(stacked_channels, 2)
        G = np.einsum("bik,bil->bkl", V.conj(), H)  # G[k, l] = v_k^H h_l
        self._signal += np.einsum("bkk->k", G)
        self._second += np.einsum("bkl,bkl->kl", G, G.conj()).real
        self._norm2 += np.einsum("bik,bik->k", V, V.conj()).real
        self._n += V.shape[0]

    def merge(self, other: "UatfAccumulator") -> None:
        self._signal += other._signal
        self._second += other._second
        self._norm2 += other._norm2
        self._n += other._n

    def finalize(self) -> UatfStatistics:
        if self._n < 1:
            raise ValueError("no samples accumulated")
        n = self._n
        return UatfStatistics(
            mean_signal=self._signal / n,
            second_moments=self._second / n,
            mean_norm2=self._norm2 / n,
            n_samples=n,
        )


def uatf_sinr_centralized(
    stats: UatfStatistics, config: SimulationConfig, k: int, flags: set | None = None
) -> float:
    """Centralized uplink SINR of UE k from accumulated moments.

    Monte Carlo noise can push the denominator non-positive at low sample
    counts; it is then floored at 1e-30 and flagged rather than aborted.
    """
    p = config.ue_powers_mW
    num = p[k] * abs(stats.mean_signal[k]) ** 2
    den = (
        float(p @ stats.second_moments[k])
        - num
        + config.noise_mW * stats.mean_norm2[k]
    )
    if den <= 0:
        if flags is not None:
            flags.add("degenerate-denominator")
        den = 1e-30
    return float(num / den)


def se_from_sinr(sinr: float, payload_symbols: int, block_symbols: int) -> float:
    """Spectral efficiency in bit/s/Hz with the given prelog fraction."""
    return float(payload_symbols / block_symbols * np.log2(1.0 + sinr))


def precoder_from_combiner(combiners: CombinerSet) -> CombinerSet:
    """Duality precoding: the unnormalized precoder is the combiner itself."""
    return CombinerSet(
        scheme=combiners.scheme,
        per_ap=combiners.per_ap,
        stacked=combiners.stacked,
        flags=combiners.flags,
    )


def allocate_dl_power(
    config: SimulationConfig, policy: str = "equal", beta: np.ndarray | None = None
) -> np.ndarray:
    """Per-(AP, UE) downlink power allocation summing to the per-AP budget.

    'equal' splits the budget uniformly; 'proportional' splits it by the
    pathloss gains ``beta`` (required for that policy).
    """
    M, K = config.M, config.K
    p_m = float(config.p_dl_total_mW)
    if policy == "equal":
        return np.full((M, K), p_m / K)
    if policy == "proportional":
        if beta is None:
            raise ValueError("proportional power allocation requires beta")
        return p_m * beta / beta.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown downlink power policy {policy!r}")


class PrecoderNormAccumulator:
    """Mean squared norm of unnormalized precoders per (AP, UE)."""

    def __init__(self, M: int, K: int):
        self._norm2 = np.zeros((M, K))
        self._n = 0

    def update(self, per_ap_precoders: np.ndarray) -> None:
        V = _batched(per_ap_precoders, 3)
        self._norm2 += np.einsum("bmnk,bmnk->mk", V, V.conj()).real
        self._n += V.shape[0]

    def merge(self, other: "PrecoderNormAccumulator") -> None:
        self._norm2 += other._norm2
        self._n += other._n

    def finalize(self) -> np.ndarray:
        if self._n < 1:
            raise ValueError("no samples accumulated")
        return self._norm2 / self._n


def power_factors(mean_norm2: np.ndarray, p_alloc: np.ndarray):
    """Scale factors mu = sqrt(p_mk / E{||gbar||^2}) and the unserved mask.

    A zero warm-up norm (precoder never excited) yields mu = 0; a UE with
    zero factors at every AP is marked unserved.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(mean_norm2 > 0, np.sqrt(p_alloc / np.where(mean_norm2 > 0, mean_norm2, 1.0)), 0.0)
    unserved = ~np.any(mu > 0, axis=0)
    return mu, unserved


def transmitted_power_per_ap(mu: np.ndarray, mean_norm2: np.ndarray) -> np.ndarray:
    """Per-AP expected transmit power sum_k mu_mk^2 E{||gbar_mk||^2}."""
    return np.einsum("mk,mk->m", mu**2, mean_norm2)


class DownlinkAccumulator:
    """Moments of the downlink received composite signals."""

    def __init__(self, K: int):
        self.K = K
        self._signal = np.zeros(K, dtype=complex)
        self._second = np.zeros((K, K))  # [l, k] = E{|sum_m g_ml^H h_mk|^2}
        self._n = 0

    def update(self, per_ap_precoders: np.ndarray, h: np.ndarray) -> None:
        G = _batched(per_ap_precoders, 3)
        hb = _batched(h, 3)
        # S[b, l, k] = sum_m g_ml^H h_mk
        S = np.einsum("bmnl,bmkn->blk", G.conj(), hb)
        self._signal += np.einsum("bkk->k", S)
        self._second += np.einsum("blk,blk->lk", S, S.conj()).real
        self._n += G.shape[0]

    def merge(self, other: "DownlinkAccumulator") -> None:
        self._signal += other._signal
        self._second += other._second
        self._n += other._n


@dataclass
class PrecoderStatistics:
    """Normalization state and received-signal moments for one precoding scheme."""

    gbar_mean_norm2: np.ndarray  # (M, K), warm-up estimate of E{||gbar||^2}
    mu: np.ndarray  # (M, K)
    p_alloc: np.ndarray  # (M, K)
    mean_signal: np.ndarray  # (K,) complex
    second_moments: np.ndarray  # (K, K) real, [l, k]
    n_samples: int
    unserved: np.ndarray  # (K,) bool


def finalize_downlink(
    acc: DownlinkAccumulator,
    gbar_mean_norm2: np.ndarray,
    mu: np.ndarray,
    p_alloc: np.ndarray,
    unserved: np.ndarray,
) -> PrecoderStatistics:
    if acc._n < 1:
        raise ValueError("no samples accumulated")
    return PrecoderStatistics(
        gbar_mean_norm2=gbar_mean_norm2,
        mu=mu,
        p_alloc=p_alloc,
        mean_signal=acc._signal / acc._n,
        second_moments=acc._second / acc._n,
        n_samples=acc._n,
        unserved=unserved,
    )


def downlink_sinr(
    stats: PrecoderStatistics, config: SimulationConfig, k: int, flags: set | None = None
) -> float:
    """Downlink SINR of UE k under the use-and-forget style bound."""
    if stats.unserved[k]:
        if flags is not None:
            flags.add("unserved")
        return 0.0
    num = abs(stats.mean_signal[k]) ** 2
    den = float(stats.second_moments[:, k].sum()) - num + config.noise_mW
    if den <= 0:
        if flags is not None:
            flags.add("degenerate-denominator")
        den = 1e-30
    return float(num / den)
