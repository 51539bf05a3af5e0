"""Network geometry and large-scale channel statistics for one setup.

A setup freezes AP/UE positions, pathloss with log-normal shadowing, the
distance-decaying Rician factor, LoS array responses for a uniform linear
array, and Gaussian-local-scattering spatial correlation matrices. All of it
is a pure function of (config, setup_seed, setup_index), so setups can be
generated concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimulationConfig, validate_simulation_config
from .rng import setup_stream


@dataclass(frozen=True)
class Scenario:
    """AP and UE coordinates in meters inside the square coverage area."""

    ap_positions: np.ndarray  # (M, 2)
    ue_positions: np.ndarray  # (K, 2)


@dataclass(frozen=True)
class LinkStatistics:
    """Large-scale state of one (AP, UE) link."""

    beta: float
    kappa: float
    nominal_angle_rad: float
    los_vector: np.ndarray  # (N,) complex
    correlation: np.ndarray  # (N, N) complex Hermitian PSD


class LinkStatisticsTable:
    """Per-(AP, UE) large-scale statistics stored as stacked arrays.

    Arrays are indexed (m, k): ``beta`` and ``kappa`` are (M, K),
    ``los`` is (M, K, N), ``correlation`` is (M, K, N, N).
    """

    def __init__(self, beta, kappa, nominal_angle_rad, los, correlation):
        self.beta = beta
        self.kappa = kappa
        self.nominal_angle_rad = nominal_angle_rad
        self.los = los
        self.correlation = correlation
        self._sqrt_cache = None  # filled by channel.correlation_sqrt

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def N(self) -> int:
        return self.los.shape[2]

    def link(self, m: int, k: int) -> LinkStatistics:
        return LinkStatistics(
            beta=float(self.beta[m, k]),
            kappa=float(self.kappa[m, k]),
            nominal_angle_rad=float(self.nominal_angle_rad[m, k]),
            los_vector=self.los[m, k],
            correlation=self.correlation[m, k],
        )


def rician_split(beta: float, kappa: float):
    """Split a pathloss gain into (LoS, NLoS) powers for Rician factor kappa."""
    beta = np.asarray(beta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    beta_los = beta * (kappa / (1.0 + kappa))
    beta_nlos = beta - beta_los  # sums back to beta exactly
    return beta_los, beta_nlos


def steering_vector(angle_rad, n_antennas: int, spacing: float) -> np.ndarray:
    """Unit-modulus ULA array response; broadcasting over the angle array."""
    angle_rad = np.asarray(angle_rad, dtype=float)
    n = np.arange(n_antennas)
    phase = 2.0 * np.pi * spacing * np.sin(angle_rad)[..., None] * n
    return np.exp(1j * phase)


def local_scattering_correlation(
    nominal_angle_rad, asd_rad: float, n_antennas: int, spacing: float, beta_nlos
) -> np.ndarray:
    """NLoS spatial correlation for the Gaussian local scattering model.

    Element (a, b) is
    ``beta_nlos * exp(j*2*pi*spacing*(a-b)*sin(phi))
    * exp(-(asd^2/2) * (2*pi*spacing*(a-b)*cos(phi))^2)``
    with phi the nominal azimuth angle; Hermitian by construction.
    Accepts scalar or array angles (leading axes broadcast).
    """
    if n_antennas < 1:
        raise ValueError(f"n_antennas must be >= 1, got {n_antennas}")
    if asd_rad <= 0:
        raise ValueError(f"asd_rad must be > 0, got {asd_rad}")
    angle = np.asarray(nominal_angle_rad, dtype=float)
    beta_nlos = np.asarray(beta_nlos, dtype=float)
    if np.any(beta_nlos < 0):
        raise ValueError("beta_nlos must be >= 0")
    idx = np.arange(n_antennas)
    delta = idx[:, None] - idx[None, :]  # antenna index difference (a - b)
    arg = 2.0 * np.pi * spacing * delta
    phase = arg * np.sin(angle)[..., None, None]
    spread = arg * np.cos(angle)[..., None, None]
    matrix = np.exp(1j * phase - 0.5 * asd_rad**2 * spread**2)
    return beta_nlos[..., None, None] * matrix


def generate_setup(config: SimulationConfig, setup_index: int):
    """Draw one setup's geometry and derive all large-scale statistics.

    Returns (Scenario, LinkStatisticsTable). Deterministic in
    (setup_seed, setup_index); the random draws (positions, shadowing) do not
    depend on the channel model, so the three models share geometry.
    """
    validate_simulation_config(config)
    rng = setup_stream(config.setup_seed, setup_index)
    ap = rng.uniform(0.0, config.area_side_m, size=(config.M, 2))
    ue = rng.uniform(0.0, config.area_side_m, size=(config.K, 2))
    shadowing_dB = rng.normal(0.0, config.shadowing_std_dB, size=(config.M, config.K))

    diff = ue[None, :, :] - ap[:, None, :]  # (M, K, 2)
    d2d = np.hypot(diff[..., 0], diff[..., 1])
    d3d = np.hypot(d2d, config.ap_height_m)
    beta_dB = config.pathloss_ref_dB - config.pathloss_exponent * np.log10(d3d) + shadowing_dB
    beta = 10.0 ** (beta_dB / 10.0)

    if config.channel_model == "rayleigh":
        kappa = np.zeros_like(beta)
    else:
        kappa_dB = config.rician_ref_dB - config.rician_slope_dB_per_m * d2d
        kappa = 10.0 ** (kappa_dB / 10.0)
    beta_los, beta_nlos = rician_split(beta, kappa)

    angle = np.arctan2(diff[..., 1], diff[..., 0])
    correlation = local_scattering_correlation(
        angle, config.asd_rad, config.N, config.antenna_spacing_wavelengths, beta_nlos
    )
    los = np.sqrt(beta_los)[..., None] * steering_vector(
        angle, config.N, config.antenna_spacing_wavelengths
    )

    scenario = Scenario(ap_positions=ap, ue_positions=ue)
    table = LinkStatisticsTable(
        beta=beta, kappa=kappa, nominal_angle_rad=angle, los=los, correlation=correlation
    )
    return scenario, table
