"""Large-scale fading decoding: fusion statistics, optimal weights, and SINR.

The CPU fuses per-AP soft estimates with weights based on long-term
statistics: the mean effective channel per AP, the cross-AP second-moment
matrices, and the mean combiner norms. These expectations have no closed
form for the schemes simulated here, so they are estimated by sample means
over coherence blocks. Accumulators are mergeable (sum plus count), so block
ranges can be processed independently and merged in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .config import SimulationConfig


@dataclass
class LsfdStatistics:
    """Monte Carlo fusion statistics per UE.

    ``mean_d[k]`` is the mean per-AP effective channel (M,), ``theta[k, l]``
    the M x M second-moment matrix of UE l's signal through UE k's combiners,
    ``combiner_norm2[k]`` the mean squared combiner norms (M,).
    """

    mean_d: np.ndarray  # (K, M) complex
    theta: np.ndarray  # (K, K, M, M) complex
    combiner_norm2: np.ndarray  # (K, M) real
    n_samples: int


def _batched(arr: np.ndarray, core_ndim: int) -> np.ndarray:
    """Collapse any leading axes into one batch axis."""
    if arr.ndim == core_ndim:
        return arr[None]
    return arr.reshape((-1,) + arr.shape[-core_ndim:])


class LsfdAccumulator:
    """Mergeable sums for :class:`LsfdStatistics`."""

    def __init__(self, M: int, K: int):
        self.M, self.K = M, K
        self._d = np.zeros((K, M), dtype=complex)
        self._theta = np.zeros((K, K, M, M), dtype=complex)
        self._norm2 = np.zeros((K, M))
        self._n = 0

    def update(self, per_ap_combiners: np.ndarray, h: np.ndarray) -> None:
        """Add one block or a batch: combiners (..., M, N, K), channels (..., M, K, N)."""
        V = _batched(per_ap_combiners, 3)
        hb = _batched(h, 3)
        # T[b, m, k, l] = v_mk^H h_ml
        T = np.einsum("bmnk,bmln->bmkl", V.conj(), hb)
        self._d += np.einsum("bmkk->km", T)
        self._theta += np.einsum("bnkl,bmkl->klnm", T, T.conj())
        self._norm2 += np.einsum("bmnk,bmnk->km", V, V.conj()).real
        self._n += V.shape[0]

    def merge(self, other: "LsfdAccumulator") -> None:
        self._d += other._d
        self._theta += other._theta
        self._norm2 += other._norm2
        self._n += other._n

    def finalize(self) -> LsfdStatistics:
        if self._n < 1:
            raise ValueError("no samples accumulated")
        n = self._n
        theta = self._theta / n
        # remove O(1/sqrt(n)) asymmetry noise before the weight solve
        theta = 0.5 * (theta + np.conj(np.swapaxes(theta, -1, -2)))
        return LsfdStatistics(
            mean_d=self._d / n,
            theta=theta,
            combiner_norm2=self._norm2 / n,
            n_samples=n,
        )


def accumulate_lsfd(blocks, combiner_fn, config: SimulationConfig) -> LsfdStatistics:
    """Accumulate fusion statistics over a stream of blocks.

    ``blocks`` yields (realization, estimates) pairs; ``combiner_fn`` maps an
    estimate block to per-AP combiners (..., M, N, K).
    """
    acc = None
    for realization, estimates in blocks:
        V = combiner_fn(estimates)
        if acc is None:
            acc = LsfdAccumulator(M=V.shape[-3], K=V.shape[-1])
        acc.update(V, realization.h)
    if acc is None:
        raise ValueError("empty block stream")
    return acc.finalize()


def _weight_matrix(stats: LsfdStatistics, config: SimulationConfig, k: int) -> np.ndarray:
    p = config.ue_powers_mW
    d = stats.mean_d[k]
    B = np.einsum("l,lnm->nm", p, stats.theta[k])
    B = B - p[k] * np.outer(d, d.conj())
    B = B + config.noise_mW * np.diag(stats.combiner_norm2[k])
    return 0.5 * (B + B.conj().T)


def optimal_weights(stats: LsfdStatistics, config: SimulationConfig):
    """SINR-maximizing fusion weights per UE; returns (weights (K, M), flags).

    A singular system falls back to +1e-12*trace/M identity regularization
    and is flagged 'regularized-solve'.
    """
    K, M = stats.mean_d.shape
    weights = np.zeros((K, M), dtype=complex)
    flags: set[str] = set()
    for k in range(K):
        B = _weight_matrix(stats, config, k)
        d = stats.mean_d[k]
        try:
            weights[k] = scipy.linalg.solve(B, d, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            flags.add("regularized-solve")
            trace = np.trace(B).real
            reg = 1e-12 * (trace / M if trace > 0 else 1.0)
            weights[k] = np.linalg.solve(B + reg * np.eye(M), d)
    return weights, flags


def lsfd_sinr(
    stats: LsfdStatistics,
    weights: np.ndarray,
    config: SimulationConfig,
    k: int,
    flags: set | None = None,
) -> float:
    """Effective fused SINR of UE k for the given weights (quotient form).

    Zero weights are rejected; a non-positive denominator (possible only
    through Monte Carlo noise) reports SINR 0 with a degenerate-input flag.
    """
    a = np.asarray(weights)[k]
    if not np.any(a):
        raise ValueError(f"weights for UE {k} are all zero")
    d = stats.mean_d[k]
    p = config.ue_powers_mW
    num = p[k] * abs(np.vdot(a, d)) ** 2
    B = _weight_matrix(stats, config, k)
    den = np.real(np.vdot(a, B @ a))
    if den <= 0:
        if flags is not None:
            flags.add("degenerate-denominator")
        return 0.0
    return float(num / den)


def lsfd_sinr_optimal(
    stats: LsfdStatistics, weights: np.ndarray, config: SimulationConfig, k: int
) -> float:
    """Closed-form SINR at the optimal weights, p_k * Re(E{d}^H a*)."""
    a = np.asarray(weights)[k]
    return float(config.ue_powers_mW[k] * np.real(np.vdot(stats.mean_d[k], a)))
