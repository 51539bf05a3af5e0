"""Pilot allocation, pilot observations, and phase-aware MMSE channel estimation.

Pilot sequences are never materialized: co-pilot UEs share one despread
observation per AP, ``y = sum_{l in P} sqrt(p_l) * tau_p * h_l + n`` with
``n ~ CN(0, tau_p * sigma^2 I)``, which is a sufficient statistic. The
estimator knows the LoS phase-shifts (tracked-phase premise), so the MMSE
estimate is ``hhat = hbar e^{j theta} + sqrt(p) R Psi^-1 (y - ybar)``.

Per-setup statistics (Psi, the estimate covariance, the error covariance C,
and the per-AP interference-plus-noise matrix W with its inverse) are
computed once per setup and shared read-only across blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SimulationConfig
from .rng import complex_normal
from .scenario import LinkStatisticsTable


class EstimationError(RuntimeError):
    """A per-setup statistics solve failed; the message names the indices."""


@dataclass(frozen=True)
class PilotAssignment:
    """Pilot index per UE plus the derived co-pilot sets."""

    pilot_of: np.ndarray  # (K,) ints in [0, tau_p)
    groups: tuple  # groups[t] = array of UEs using pilot t
    tau_p: int

    def copilot(self, k: int) -> np.ndarray:
        """UEs sharing UE k's pilot (always contains k)."""
        return self.groups[int(self.pilot_of[k])]


def assign_pilots(K: int, tau_p: int, policy: str = "round_robin", rng=None) -> PilotAssignment:
    if tau_p < 1:
        raise ValueError(f"tau_p must be >= 1, got {tau_p}")
    if policy == "round_robin":
        pilot_of = np.arange(K) % tau_p
    elif policy == "random":
        if rng is None:
            raise ValueError("random pilot policy requires an rng")
        pilot_of = rng.integers(0, tau_p, size=K)
    else:
        raise ValueError(f"unknown pilot policy {policy!r}")
    groups = tuple(np.flatnonzero(pilot_of == t) for t in range(tau_p))
    return PilotAssignment(pilot_of=pilot_of, groups=groups, tau_p=tau_p)


@dataclass
class EstimationStatistics:
    """Per-setup estimation statistics; arrays indexed (m, k) or (m).

    ``psi`` is the per-(AP, UE) despread pilot covariance over tau_p,
    ``rhat`` the conditional estimate covariance, ``error_cov`` the error
    covariance C = R - rhat, ``w`` the per-AP interference-plus-noise matrix
    with cached inverse, ``gain`` the cached estimator gain sqrt(p) R Psi^-1,
    and ``los`` the deterministic LoS vectors (the conditional estimate mean
    up to the phase rotation).
    """

    psi: np.ndarray  # (M, K, N, N)
    psi_inv: np.ndarray  # (M, K, N, N)
    rhat: np.ndarray  # (M, K, N, N)
    error_cov: np.ndarray  # (M, K, N, N)
    w: np.ndarray  # (M, N, N)
    w_inv: np.ndarray  # (M, N, N)
    gain: np.ndarray  # (M, K, N, N)
    los: np.ndarray  # (M, K, N)
    _w_stacked: np.ndarray | None = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.w.shape[0]

    @property
    def N(self) -> int:
        return self.w.shape[1]

    @property
    def K(self) -> int:
        return self.psi.shape[1]

    @property
    def w_stacked(self) -> np.ndarray:
        """Block-diagonal (M*N, M*N) view of the per-AP W matrices."""
        if self._w_stacked is None:
            M, N = self.M, self.N
            full = np.zeros((M * N, M * N), dtype=complex)
            for m in range(M):
                full[m * N : (m + 1) * N, m * N : (m + 1) * N] = self.w[m]
            self._w_stacked = full
        return self._w_stacked


def _inv_with_context(matrices: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.inv(matrices)
    except np.linalg.LinAlgError:
        flat = matrices.reshape((-1,) + matrices.shape[-2:])
        for idx in range(flat.shape[0]):
            try:
                np.linalg.inv(flat[idx])
            except np.linalg.LinAlgError:
                where = np.unravel_index(idx, matrices.shape[:-2])
                raise EstimationError(f"singular {what} at index {where}") from None
        raise EstimationError(f"inversion of {what} failed") from None


def compute_estimation_statistics(
    link_stats: LinkStatisticsTable, assignment: PilotAssignment, config: SimulationConfig
) -> EstimationStatistics:
    M, K, N = link_stats.M, link_stats.K, link_stats.N
    R = link_stats.correlation
    p = config.ue_powers_mW
    tau_p = assignment.tau_p
    sigma2 = config.noise_mW
    eye = np.eye(N)

    # Psi depends on the pilot group only; computed per (m, group), mapped to (m, k).
    psi = np.empty((M, K, N, N), dtype=complex)
    psi_inv = np.empty_like(psi)
    for group in assignment.groups:
        if group.size == 0:
            continue
        psi_g = tau_p * np.einsum("l,mlab->mab", p[group], R[:, group]) + sigma2 * eye
        psi_inv_g = _inv_with_context(psi_g, "pilot covariance Psi")
        psi[:, group] = psi_g[:, None]
        psi_inv[:, group] = psi_inv_g[:, None]

    rhat = (p * tau_p)[None, :, None, None] * np.einsum(
        "mkab,mkbc,mkcd->mkad", R, psi_inv, R
    )
    error_cov = R - rhat
    w = np.einsum("k,mkab->mab", p, error_cov) + sigma2 * eye
    w_inv = _inv_with_context(w, "interference-plus-noise matrix W")
    gain = np.sqrt(p)[None, :, None, None] * np.einsum("mkab,mkbc->mkac", R, psi_inv)
    return EstimationStatistics(
        psi=psi,
        psi_inv=psi_inv,
        rhat=rhat,
        error_cov=error_cov,
        w=w,
        w_inv=w_inv,
        gain=gain,
        los=link_stats.los,
    )


@dataclass
class PilotObservation:
    """Despread pilot observations per (AP, pilot index).

    ``y`` and ``ybar`` have shape (..., M, tau_p, N); co-pilot UEs at the
    same AP read the same slice, matching the shared physical observation.
    """

    y: np.ndarray
    ybar: np.ndarray
    assignment: PilotAssignment

    def for_ue(self, m: int, k: int):
        t = int(self.assignment.pilot_of[k])
        return self.y[..., m, t, :], self.ybar[..., m, t, :]


def synthesize_pilot_observation(
    realization, assignment: PilotAssignment, config: SimulationConfig, rng
) -> PilotObservation:
    """Build despread observations with one noise draw per (AP, pilot).

    The observation mean ``ybar`` reuses the phase-rotated LoS terms retained
    in the realization, so it is the exact conditional mean. Passing an rng
    whose ``standard_normal`` returns zeros gives the noise-free observation
    (test hook).
    """
    h = realization.h
    M, tau_p, N = h.shape[-3], assignment.tau_p, h.shape[-1]
    batch = h.shape[:-3]
    scale = np.sqrt(config.ue_powers_mW) * tau_p  # sqrt(p_l) * tau_p per UE

    y = np.zeros(batch + (M, tau_p, N), dtype=complex)
    ybar = np.zeros_like(y)
    hs = h * scale[:, None]
    los_s = realization.los_rotated * scale[:, None]
    for t, group in enumerate(assignment.groups):
        if group.size:
            y[..., t, :] = hs[..., group, :].sum(axis=-2)
            ybar[..., t, :] = los_s[..., group, :].sum(axis=-2)
    noise = complex_normal(rng, batch + (M, tau_p, N)) * np.sqrt(tau_p * config.noise_mW)
    y += noise
    return PilotObservation(y=y, ybar=ybar, assignment=assignment)


@dataclass
class ChannelEstimateBlock:
    """Phase-aware MMSE channel estimates, shape (..., M, K, N)."""

    hhat: np.ndarray


def estimate_channels(
    observation: PilotObservation,
    phases: np.ndarray,
    est_stats: EstimationStatistics,
    assignment: PilotAssignment,
    config: SimulationConfig,
) -> ChannelEstimateBlock:
    """MMSE estimates given the observation and the (tracked) LoS phases."""
    t_of = assignment.pilot_of
    ydiff = observation.y[..., t_of, :] - observation.ybar[..., t_of, :]  # (..., M, K, N)
    hhat = np.einsum("mkab,...mkb->...mka", est_stats.gain, ydiff)
    hhat = hhat + est_stats.los * np.exp(1j * np.asarray(phases))[..., None]
    return ChannelEstimateBlock(hhat=hhat)


def estimation_error(realization, estimates: ChannelEstimateBlock) -> np.ndarray:
    """True channel minus estimate, shape (..., M, K, N)."""
    return realization.h - estimates.hhat


def stacked_estimates(estimates: ChannelEstimateBlock) -> np.ndarray:
    """Collective (..., M*N, K) estimate matrix."""
    hh = np.swapaxes(estimates.hhat, -1, -2)
    return hh.reshape(hh.shape[:-3] + (hh.shape[-3] * hh.shape[-2], hh.shape[-1]))
