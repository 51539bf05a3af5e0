import numpy as np
import pytest

from cfmimo.config import SimulationConfig
from cfmimo.estimation import assign_pilots, compute_estimation_statistics
from cfmimo.scenario import LinkStatisticsTable, generate_setup


def make_table(correlation, los, beta=None, kappa=None):
    """Assemble a LinkStatisticsTable from raw arrays (test scaffolding)."""
    correlation = np.asarray(correlation, dtype=complex)
    los = np.asarray(los, dtype=complex)
    M, K, N = los.shape
    if beta is None:
        beta = (
            np.trace(correlation, axis1=-2, axis2=-1).real / N
            + (np.abs(los) ** 2).sum(axis=-1) / N
        )
    if kappa is None:
        kappa = np.zeros((M, K))
    return LinkStatisticsTable(
        beta=np.asarray(beta, dtype=float),
        kappa=np.asarray(kappa, dtype=float),
        nominal_angle_rad=np.zeros((M, K)),
        los=los,
        correlation=correlation,
    )


def unit_config(M, K, N, **kw):
    """Config with p = 1 mW and sigma^2 = 1 mW for hand-checkable numbers."""
    kw.setdefault("p_ul_mW", 1.0)
    kw.setdefault("noise_dBm", 0.0)
    kw.setdefault("tau_c", 200)
    kw.setdefault("n_setups", 1)
    kw.setdefault("n_channel_realizations", 10)
    return SimulationConfig(M=M, K=K, N=N, **kw)


@pytest.fixture
def small_setup():
    """A small generated setup with statistics, shared across tests."""
    cfg = SimulationConfig(
        M=3, K=4, N=2, tau_p=2, channel_model="rician_fixed", n_setups=1,
        n_channel_realizations=10,
    )
    _, table = generate_setup(cfg, 0)
    assign = assign_pilots(cfg.K, cfg.tau_p)
    est = compute_estimation_statistics(table, assign, cfg)
    return cfg, table, assign, est
