"""Sweep orchestration, result persistence, and fronthaul-load accounting.

A sweep cell is one (sweep value, channel model, setup). Per cell the
engine generates statistics once, builds the expected-Gram tables once, and
streams coherence blocks through estimation, combining, and the link
accumulators. Blocks are processed in fixed chunks whose random streams are
keyed by (setup, first block index, purpose), so output is byte-identical
for any worker count.

Block index layout per cell: [0, warmup_blocks) feeds the downlink
normalization warm-up, [warmup_blocks, warmup_blocks + n_blocks) feeds both
link evaluations. Uplink results therefore do not depend on whether the
downlink is also requested.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .channel import sample_channel, stacked_channels
from .combining import (
    cmmse_via_lemma,
    expected_gram_table,
    gsli_combiner,
    lmmse_combiner,
    realized_gram,
)
from .config import (
    CHANNEL_MODELS,
    ExperimentConfig,
    SimulationConfig,
    sweep_points,
    validate_experiment_config,
)
from .estimation import (
    assign_pilots,
    compute_estimation_statistics,
    estimate_channels,
    synthesize_pilot_observation,
)
from .link_evaluation import (
    DownlinkAccumulator,
    PrecoderNormAccumulator,
    UatfAccumulator,
    allocate_dl_power,
    downlink_sinr,
    finalize_downlink,
    power_factors,
    se_from_sinr,
    transmitted_power_per_ap,
    uatf_sinr_centralized,
)
from .lsfd import LsfdAccumulator, lsfd_sinr, optimal_weights
from .rng import PURPOSE_CHANNEL, PURPOSE_PILOT_ASSIGN, PURPOSE_PILOT_NOISE, keyed_stream
from .scenario import generate_setup

CHUNK_BLOCKS = 100

DISTRIBUTED_SCHEMES = ("lmmse_lsfd", "gsli_lsfd")


@dataclass(frozen=True)
class ResultRecord:
    setup_index: int
    sweep_value: int
    scheme: str
    model: str
    link: str
    ue: int
    se_bits_per_s_per_hz: float
    flags: tuple = ()


@dataclass(frozen=True)
class FronthaulLoad:
    """Complex scalars each AP sends over the fronthaul."""

    per_block_scalars: int
    per_setup_scalars: int


def fronthaul_load(config: SimulationConfig, scheme: str) -> FronthaulLoad:
    """Fronthaul upload volume per AP for one processing scheme.

    Centralized processing ships the despread pilot observations every
    block; the distributed schemes ship K soft estimates per block, and the
    statistics-aided scheme additionally ships its K x K expected-Gram table
    once per setup.
    """
    if scheme == "cmmse":
        return FronthaulLoad(per_block_scalars=config.N * config.tau_p, per_setup_scalars=0)
    if scheme in ("gsli_lsfd", "gsli"):
        return FronthaulLoad(per_block_scalars=config.K, per_setup_scalars=config.K * config.K)
    if scheme in ("lmmse_lsfd", "lmmse"):
        return FronthaulLoad(per_block_scalars=config.K, per_setup_scalars=0)
    raise ValueError(f"unknown scheme {scheme!r}")


def _chunks(start: int, count: int, size: int = CHUNK_BLOCKS):
    done = 0
    while done < count:
        n = min(size, count - done)
        yield start + done, n
        done += n


class _CellEngine:
    """Evaluates all requested schemes and links for one sweep cell."""

    def __init__(self, cfg: SimulationConfig, exp: ExperimentConfig, model: str, setup_index: int):
        self.cfg = replace(cfg, channel_model=model)
        self.exp = exp
        self.model = model
        self.setup_index = setup_index
        _, self.table = generate_setup(self.cfg, setup_index)
        rng_assign = None
        if self.cfg.pilot_policy == "random":
            rng_assign = keyed_stream(
                self.cfg.setup_seed, setup_index, 0, PURPOSE_PILOT_ASSIGN
            )
        self.assign = assign_pilots(
            self.cfg.K, self.cfg.tau_p, self.cfg.pilot_policy, rng=rng_assign
        )
        self.est = compute_estimation_statistics(self.table, self.assign, self.cfg)
        self.loo_gram = None
        if "gsli_lsfd" in exp.schemes:
            self.loo_gram = expected_gram_table(
                model, self.est, self.table, self.assign, self.cfg
            ).leave_one_out_all()
        self.uplink = "uplink" in exp.links
        self.downlink = "downlink" in exp.links
        self.scheme_flags = {s: set() for s in exp.schemes}

    def _pipeline(self, first_block: int, n_blocks: int):
        rng_ch = keyed_stream(self.cfg.channel_seed, self.setup_index, first_block, PURPOSE_CHANNEL)
        rng_p = keyed_stream(
            self.cfg.channel_seed, self.setup_index, first_block, PURPOSE_PILOT_NOISE
        )
        real = sample_channel(self.table, self.model, rng_ch, batch=n_blocks)
        obs = synthesize_pilot_observation(real, self.assign, self.cfg, rng_p)
        est_block = estimate_channels(obs, real.theta, self.est, self.assign, self.cfg)
        return real, est_block

    def _combiners(self, scheme: str, est_block):
        if scheme == "cmmse":
            return cmmse_via_lemma(est_block, self.est, self.cfg)
        if scheme == "lmmse_lsfd":
            return lmmse_combiner(est_block, self.est, self.cfg)
        if scheme == "gsli_lsfd":
            return gsli_combiner(est_block, self.est, self.loo_gram, self.cfg)
        raise ValueError(f"unknown scheme {scheme!r}")

    def run(self):
        exp, cfg = self.exp, self.cfg
        K = cfg.K
        mu = {}
        unserved = {}
        gbar_norm2 = {}
        p_alloc = None
        if self.downlink:
            p_alloc = allocate_dl_power(cfg, exp.dl_power_policy, beta=self.table.beta)
            norm_accs = {s: PrecoderNormAccumulator(cfg.M, K) for s in exp.schemes}
            for first, n in _chunks(0, exp.warmup_blocks):
                _, est_block = self._pipeline(first, n)
                for s in exp.schemes:
                    combiners = self._combiners(s, est_block)
                    self.scheme_flags[s] |= combiners.flags
                    norm_accs[s].update(combiners.per_ap)
            for s in exp.schemes:
                gbar_norm2[s] = norm_accs[s].finalize()
                mu[s], unserved[s] = power_factors(gbar_norm2[s], p_alloc)
                tx = transmitted_power_per_ap(mu[s], gbar_norm2[s])
                if np.any(tx > cfg.p_dl_total_mW * (1 + 1e-9)):
                    raise RuntimeError(
                        f"downlink power constraint violated for scheme {s}: "
                        f"max {tx.max():.6g} mW > {cfg.p_dl_total_mW:.6g} mW"
                    )

        uatf_acc = UatfAccumulator(K) if self.uplink and "cmmse" in exp.schemes else None
        lsfd_accs = {
            s: LsfdAccumulator(cfg.M, K)
            for s in exp.schemes
            if s in DISTRIBUTED_SCHEMES and self.uplink
        }
        dl_accs = {s: DownlinkAccumulator(K) for s in exp.schemes} if self.downlink else {}

        for first, n in _chunks(exp.warmup_blocks, exp.n_blocks):
            real, est_block = self._pipeline(first, n)
            h_stacked = stacked_channels(real) if uatf_acc is not None else None
            for s in exp.schemes:
                combiners = self._combiners(s, est_block)
                self.scheme_flags[s] |= combiners.flags
                if self.uplink:
                    if s == "cmmse":
                        uatf_acc.update(combiners.stacked, h_stacked)
                    else:
                        lsfd_accs[s].update(combiners.per_ap, real.h)
                if self.downlink:
                    precoders = combiners.per_ap * mu[s][:, None, :]
                    dl_accs[s].update(precoders, real.h)

        out = {}
        for s in exp.schemes:
            if self.uplink:
                se = np.zeros(K)
                ue_flags = [set(self.scheme_flags[s]) for _ in range(K)]
                if s == "cmmse":
                    stats = uatf_acc.finalize()
                    for k in range(K):
                        sinr = uatf_sinr_centralized(stats, cfg, k, flags=ue_flags[k])
                        se[k] = se_from_sinr(sinr, cfg.tau_u, cfg.tau_c)
                else:
                    stats = lsfd_accs[s].finalize()
                    weights, wflags = optimal_weights(stats, cfg)
                    for k in range(K):
                        ue_flags[k] |= wflags
                        sinr = lsfd_sinr(stats, weights, cfg, k, flags=ue_flags[k])
                        se[k] = se_from_sinr(sinr, cfg.tau_u, cfg.tau_c)
                out[(s, "uplink")] = (se, [tuple(sorted(f)) for f in ue_flags])
            if self.downlink:
                stats = finalize_downlink(
                    dl_accs[s], gbar_norm2[s], mu[s], p_alloc, unserved[s]
                )
                se = np.zeros(K)
                ue_flags = [set(self.scheme_flags[s]) for _ in range(K)]
                for k in range(K):
                    sinr = downlink_sinr(stats, cfg, k, flags=ue_flags[k])
                    se[k] = se_from_sinr(sinr, cfg.tau_d, cfg.tau_c)
                out[(s, "downlink")] = (se, [tuple(sorted(f)) for f in ue_flags])
        return out


def _evaluate_cell(cfg: SimulationConfig, exp: ExperimentConfig, model: str, setup_index: int):
    return _CellEngine(cfg, exp, model, setup_index).run()


def run_experiment(exp: ExperimentConfig, threads: int = 1) -> list[ResultRecord]:
    """Run the full sweep; deterministic for a given config, any thread count.

    A failing cell is recorded as one row per (scheme, link) with ue = -1 and
    the 'cell-failed' flag; the sweep continues.
    """
    validate_experiment_config(exp)
    points = sweep_points(exp)
    tasks = [
        (sweep_value, cfg, model, setup)
        for sweep_value, cfg in points
        for model in exp.models
        for setup in range(exp.n_setups)
    ]

    def work(task):
        sweep_value, cfg, model, setup = task
        try:
            return _evaluate_cell(cfg, exp, model, setup)
        except Exception as err:  # noqa: BLE001 - cell isolation is the contract
            return ("cell-failed", f"{type(err).__name__}: {err}")

    # Single-threaded BLAS keeps results independent of the BLAS pool size
    # and avoids oversubscription under worker threads.
    with threadpool_limits(limits=1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(work, tasks))
        else:
            outcomes = [work(t) for t in tasks]

    by_cell = {
        (task[0], task[2], task[3]): outcome for task, outcome in zip(tasks, outcomes)
    }
    records = []
    for sweep_value, cfg in points:
        for model in exp.models:
            for setup in range(exp.n_setups):
                outcome = by_cell[(sweep_value, model, setup)]
                failed = isinstance(outcome, tuple) and outcome and outcome[0] == "cell-failed"
                for scheme in exp.schemes:
                    for link in exp.links:
                        if failed:
                            records.append(
                                ResultRecord(
                                    setup_index=setup,
                                    sweep_value=sweep_value,
                                    scheme=scheme,
                                    model=model,
                                    link=link,
                                    ue=-1,
                                    se_bits_per_s_per_hz=0.0,
                                    flags=("cell-failed",),
                                )
                            )
                            continue
                        se, ue_flags = outcome[(scheme, link)]
                        for k in range(cfg.K):
                            records.append(
                                ResultRecord(
                                    setup_index=setup,
                                    sweep_value=sweep_value,
                                    scheme=scheme,
                                    model=model,
                                    link=link,
                                    ue=k,
                                    se_bits_per_s_per_hz=float(se[k]),
                                    flags=ue_flags[k],
                                )
                            )
    return records


def _fmt(x: float) -> str:
    return f"{x:.12g}"


RESULTS_HEADER = "setup,sweep_value,scheme,model,link,ue,se_bits_per_s_per_hz,flags"


def emit_results(records, out_dir: str) -> dict:
    """Write results.csv, summary.csv, and plot_data.csv; returns the paths.

    Aggregates skip failure rows (ue < 0). The summary reports both the grand
    mean over all (UE, setup) samples and the mean of per-setup UE means
    (identical for balanced setups), the mean per-setup sum SE, and the 10th
    percentile across UEs and setups.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results": os.path.join(out_dir, "results.csv"),
        "summary": os.path.join(out_dir, "summary.csv"),
        "plot_data": os.path.join(out_dir, "plot_data.csv"),
    }
    with open(paths["results"], "w", encoding="utf-8", newline="") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.setup_index},{r.sweep_value},{r.scheme},{r.model},{r.link},"
                f"{r.ue},{_fmt(r.se_bits_per_s_per_hz)},{';'.join(r.flags)}\n"
            )

    groups: dict = {}
    for r in records:
        if r.ue < 0:
            continue
        key = (r.scheme, r.model, r.link, r.sweep_value)
        groups.setdefault(key, {}).setdefault(r.setup_index, []).append(
            r.se_bits_per_s_per_hz
        )

    with open(paths["summary"], "w", encoding="utf-8", newline="") as fh:
        fh.write(
            "scheme,model,link,sweep_value,mean_se,setup_mean_se,sum_se,p10_se,n_records\n"
        )
        for (scheme, model, link, sweep_value), per_setup in groups.items():
            all_values = np.array([v for vs in per_setup.values() for v in vs])
            setup_means = np.array([np.mean(vs) for vs in per_setup.values()])
            setup_sums = np.array([np.sum(vs) for vs in per_setup.values()])
            fh.write(
                f"{scheme},{model},{link},{sweep_value},"
                f"{_fmt(all_values.mean())},{_fmt(setup_means.mean())},"
                f"{_fmt(setup_sums.mean())},{_fmt(np.percentile(all_values, 10.0))},"
                f"{len(all_values)}\n"
            )

    with open(paths["plot_data"], "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,scheme,model,link,x,y\n")
        for metric, stat in (("mean_se", "mean"), ("sum_se", "sum")):
            for (scheme, model, link, sweep_value), per_setup in groups.items():
                if stat == "mean":
                    y = np.mean([v for vs in per_setup.values() for v in vs])
                else:
                    y = np.mean([np.sum(vs) for vs in per_setup.values()])
                fh.write(f"{metric},{scheme},{model},{link},{sweep_value},{_fmt(y)}\n")
    return paths


@dataclass(frozen=True)
class OracleCheck:
    name: str
    passed: bool
    detail: str


def gram_oracle_run(
    model: str,
    n_blocks: int = 20000,
    setup_index: int = 0,
    cfg: SimulationConfig | None = None,
) -> dict:
    """Compare the closed-form expected Gram tables against a Monte Carlo mean.

    Returns per-run diagnostics: the worst deviation in standard errors over
    all (AP, k, l) entries and the worst relative deviation among entries
    whose magnitude exceeds 1 percent of the largest.
    """
    if cfg is None:
        cfg = SimulationConfig(
            M=4, K=8, N=2, tau_p=2, channel_model=model, n_setups=1,
            n_channel_realizations=n_blocks,
        )
    _, table = generate_setup(cfg, setup_index)
    assign = assign_pilots(cfg.K, cfg.tau_p, cfg.pilot_policy)
    est = compute_estimation_statistics(table, assign, cfg)
    expected = expected_gram_table(model, est, table, assign, cfg).per_ap

    mean = np.zeros_like(expected)
    m2 = np.zeros(expected.shape)
    for first, n in _chunks(0, n_blocks):
        rng_ch = keyed_stream(cfg.channel_seed, setup_index, first, PURPOSE_CHANNEL)
        rng_p = keyed_stream(cfg.channel_seed, setup_index, first, PURPOSE_PILOT_NOISE)
        real = sample_channel(table, model, rng_ch, batch=n)
        obs = synthesize_pilot_observation(real, assign, cfg, rng_p)
        est_block = estimate_channels(obs, real.theta, est, assign, cfg)
        gram = realized_gram(est_block, est)
        mean += gram.sum(axis=0)
        m2 += (gram.real**2 + gram.imag**2).sum(axis=0)
    mean /= n_blocks
    m2 /= n_blocks
    var = np.maximum(m2 - (mean.real**2 + mean.imag**2), 0.0)
    std_err = np.sqrt(var / n_blocks)
    dev = np.abs(mean - expected)
    sigma_dev = dev / np.maximum(std_err, 1e-300)
    large = np.abs(expected) > 0.01 * np.abs(expected).max()
    rel_dev = np.zeros_like(dev)
    rel_dev[large] = dev[large] / np.abs(expected[large])
    return {
        "model": model,
        "n_blocks": n_blocks,
        "max_sigma_dev": float(sigma_dev.max()),
        "max_rel_dev_large": float(rel_dev.max()),
        "passed": bool(sigma_dev.max() <= 5.0 and rel_dev.max() <= 0.02),
    }


def lsfd_optimality_run(
    model: str = "rician_fixed",
    n_setups: int = 2,
    n_blocks: int = 400,
    n_draws: int = 50,
    cfg: SimulationConfig | None = None,
) -> dict:
    """Check that the optimal fusion weights beat random weight draws."""
    if cfg is None:
        cfg = SimulationConfig(
            M=8, K=5, N=2, channel_model=model, n_setups=n_setups,
            n_channel_realizations=n_blocks,
        )
    draw_rng = np.random.default_rng(12345)
    worst_margin = np.inf
    for setup in range(n_setups):
        engine = _CellEngine(
            cfg,
            ExperimentConfig(
                base=cfg, schemes=("lmmse_lsfd", "gsli_lsfd"), links=("uplink",),
                models=(model,), warmup_blocks=0,
            ),
            model,
            setup,
        )
        accs = {s: LsfdAccumulator(cfg.M, cfg.K) for s in ("lmmse_lsfd", "gsli_lsfd")}
        for first, n in _chunks(0, n_blocks):
            real, est_block = engine._pipeline(first, n)
            for s, acc in accs.items():
                acc.update(engine._combiners(s, est_block).per_ap, real.h)
        for s, acc in accs.items():
            stats = acc.finalize()
            weights, _ = optimal_weights(stats, cfg)
            for k in range(cfg.K):
                best = lsfd_sinr(stats, weights, cfg, k)
                for _ in range(n_draws):
                    a = draw_rng.standard_normal(cfg.M) + 1j * draw_rng.standard_normal(cfg.M)
                    a /= np.linalg.norm(a)
                    trial = np.zeros((cfg.K, cfg.M), dtype=complex)
                    trial[k] = a
                    worst_margin = min(worst_margin, best - lsfd_sinr(stats, trial, cfg, k))
    return {"worst_margin": float(worst_margin), "passed": bool(worst_margin >= 0.0)}


def run_oracle_suite(gram_blocks: int = 20000, lsfd_blocks: int = 400) -> list[OracleCheck]:
    """The Monte Carlo oracle suite behind the CLI 'oracle' subcommand."""
    checks = []
    for model in CHANNEL_MODELS:
        res = gram_oracle_run(model, n_blocks=gram_blocks)
        checks.append(
            OracleCheck(
                name=f"expected-gram-vs-monte-carlo[{model}]",
                passed=res["passed"],
                detail=(
                    f"max |dev| = {res['max_sigma_dev']:.2f} standard errors, "
                    f"max rel dev (large entries) = {res['max_rel_dev_large']:.4f}"
                ),
            )
        )
    res = lsfd_optimality_run(n_blocks=lsfd_blocks)
    checks.append(
        OracleCheck(
            name="lsfd-optimal-weights-dominate-random",
            passed=res["passed"],
            detail=f"worst SINR margin = {res['worst_margin']:.3e}",
        )
    )
    return checks
