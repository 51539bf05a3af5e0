"""Per-coherence-block channel realizations for the three fading models.

The channel of a block is ``h = hbar * exp(j*theta) + check_h`` with
``check_h = R^(1/2) z`` for standard complex Gaussian z. The phase theta is
uniform on [-pi, pi] for 'rician_ps', fixed at zero for 'rician_fixed', and
unused for 'rayleigh' (zero LoS). Blocks are i.i.d.; all randomness comes
from the stream handed in by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CHANNEL_MODELS
from .rng import complex_normal
from .scenario import LinkStatisticsTable


class ChannelModelError(RuntimeError):
    """Correlation factorization failed; the message names the link."""


@dataclass
class ChannelRealization:
    """One block (or a batch of blocks) of true channels.

    ``h``, ``nlos``, and ``los_rotated`` have shape (..., M, K, N); ``theta``
    has shape (..., M, K). ``los_rotated`` retains the phase-rotated LoS term
    as sampled, so ``h == los_rotated + nlos`` by construction and the NLoS
    part stays available to tests.
    """

    h: np.ndarray
    theta: np.ndarray
    nlos: np.ndarray
    los_rotated: np.ndarray


def correlation_sqrt(link_stats: LinkStatisticsTable) -> np.ndarray:
    """Hermitian square roots of all correlation matrices, cached on the table.

    Uses an eigendecomposition; eigenvalues in [-tol, 0) are clipped to zero
    with tol = 1e-10 * trace / N, anything more negative is rejected.
    """
    if link_stats._sqrt_cache is not None:
        return link_stats._sqrt_cache
    R = link_stats.correlation
    if not np.all(np.isfinite(R)):
        bad = np.argwhere(~np.isfinite(R).all(axis=(-2, -1)))[0]
        raise ChannelModelError(
            f"non-finite correlation matrix for link (m={bad[0]}, k={bad[1]})"
        )
    try:
        w, v = np.linalg.eigh(R)
    except np.linalg.LinAlgError as err:
        raise ChannelModelError(f"eigendecomposition failed: {err}") from None
    n = R.shape[-1]
    tol = 1e-10 * np.trace(R, axis1=-2, axis2=-1).real / n
    if np.any(w < -tol[..., None]):
        bad = np.argwhere((w < -tol[..., None]).any(axis=-1))[0]
        raise ChannelModelError(
            f"correlation matrix not PSD for link (m={bad[0]}, k={bad[1]})"
        )
    w = np.clip(w, 0.0, None)
    sqrt = np.einsum("...ab,...b,...cb->...ac", v, np.sqrt(w), v.conj())
    link_stats._sqrt_cache = sqrt
    return sqrt


def sample_channel(
    link_stats: LinkStatisticsTable,
    model: str,
    rng: np.random.Generator,
    batch: int | None = None,
) -> ChannelRealization:
    """Draw one coherence block (or ``batch`` i.i.d. blocks at once)."""
    if model not in CHANNEL_MODELS:
        raise ValueError(f"unknown channel model {model!r}")
    M, K = link_stats.M, link_stats.K
    shape = (M, K) if batch is None else (batch, M, K)
    sqrt = correlation_sqrt(link_stats)
    z = complex_normal(rng, shape + (link_stats.N,))
    nlos = np.einsum("mkab,...mkb->...mka", sqrt, z)
    if model == "rician_ps":
        theta = rng.uniform(-np.pi, np.pi, size=shape)
    else:
        theta = np.zeros(shape)
    if model == "rayleigh":
        los_rotated = np.zeros_like(nlos)
        h = nlos.copy()
    else:
        los_rotated = link_stats.los * np.exp(1j * theta)[..., None]
        h = los_rotated + nlos
    return ChannelRealization(h=h, theta=theta, nlos=nlos, los_rotated=los_rotated)


def stacked_channels(realization: ChannelRealization) -> np.ndarray:
    """Collective (..., M*N, K) channel matrix seen by the CPU."""
    h = np.swapaxes(realization.h, -1, -2)  # (..., M, N, K)
    return h.reshape(h.shape[:-3] + (h.shape[-3] * h.shape[-2], h.shape[-1]))
