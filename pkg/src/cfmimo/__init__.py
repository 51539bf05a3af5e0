"""Monte Carlo spectral-efficiency simulator for cell-free massive MIMO.

Compares centralized MMSE combining against two distributed schemes (local
MMSE, and statistics-aided GSLI-MMSE) over correlated Rician fading with or
without random LoS phase-shifts and correlated Rayleigh fading, for both the
uplink (with large-scale fading decoding) and the duality-based downlink.
"""

from .channel import ChannelRealization, sample_channel
from .combining import (
    CombinerSet,
    ExpectedGramTable,
    cmmse_combiner,
    cmmse_via_lemma,
    expected_gram,
    expected_gram_table,
    gsli_combiner,
    lmmse_combiner,
    realized_gram,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    SimulationConfig,
    desk_profile,
    load_experiment_config,
    paper_profile,
)
from .estimation import (
    ChannelEstimateBlock,
    EstimationStatistics,
    PilotAssignment,
    PilotObservation,
    assign_pilots,
    compute_estimation_statistics,
    estimate_channels,
    estimation_error,
    synthesize_pilot_observation,
)
from .experiment import (
    FronthaulLoad,
    ResultRecord,
    emit_results,
    fronthaul_load,
    run_experiment,
    run_oracle_suite,
)
from .link_evaluation import (
    PrecoderStatistics,
    UatfAccumulator,
    allocate_dl_power,
    downlink_sinr,
    precoder_from_combiner,
    uatf_sinr_centralized,
)
from .lsfd import (
    LsfdAccumulator,
    LsfdStatistics,
    accumulate_lsfd,
    lsfd_sinr,
    lsfd_sinr_optimal,
    optimal_weights,
)
from .scenario import (
    LinkStatistics,
    LinkStatisticsTable,
    Scenario,
    generate_setup,
    local_scattering_correlation,
    rician_split,
)

__version__ = "0.1.0"
