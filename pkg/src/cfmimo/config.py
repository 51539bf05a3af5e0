"""Configuration objects, validation, and the strict key=value config-file format.

All powers are in mW, distances in meters, noise as dBm. The config file
format is flat ``section.key = value`` lines; unknown keys are rejected so
that a config file pins a run exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace

import numpy as np

CHANNEL_MODELS = ("rician_ps", "rician_fixed", "rayleigh")
SCHEMES = ("cmmse", "lmmse_lsfd", "gsli_lsfd")
LINKS = ("uplink", "downlink")
SWEEP_AXES = ("M", "N", "none")
PILOT_POLICIES = ("round_robin", "random")
DL_POWER_POLICIES = ("equal", "proportional")

# Environment variables that override the configured seeds (documented in README).
SETUP_SEED_ENV = "CFMIMO_SETUP_SEED"
CHANNEL_SEED_ENV = "CFMIMO_CHANNEL_SEED"


class ConfigError(ValueError):
    """A configuration value violates its contract; the message names the field."""


@dataclass(frozen=True)
class SimulationConfig:
    """Network, protocol, and large-scale-model parameters for one simulation.

    ``p_dl_total_mW`` is the per-AP downlink budget; when left as None it
    resolves to 200 mW per UE. ``tau_u``/``tau_d`` left as None resolve to
    ``tau_c - tau_p`` (each coherence block carries either uplink or downlink
    payload).
    """

    M: int = 20
    K: int = 10
    N: int = 2
    area_side_m: float = 1000.0
    tau_c: int = 200
    tau_p: int = 1
    tau_u: int | None = None
    tau_d: int | None = None
    p_ul_mW: float = 200.0
    p_dl_total_mW: float | None = None
    noise_dBm: float = -94.0
    bandwidth_Hz: float = 20e6
    channel_model: str = "rician_ps"
    asd_deg: float = 15.0
    antenna_spacing_wavelengths: float = 0.5
    # strong-LoS regime: every AP-UE pair keeps a LoS path, decaying slowly
    rician_ref_dB: float = 20.0
    rician_slope_dB_per_m: float = 0.01
    pathloss_ref_dB: float = -30.5
    pathloss_exponent: float = 36.7
    shadowing_std_dB: float = 4.0
    ap_height_m: float = 10.0
    wrap_around: bool = False
    pilot_policy: str = "round_robin"
    setup_seed: int = 1
    channel_seed: int = 2
    n_setups: int = 50
    n_channel_realizations: int = 500

    def __post_init__(self):
        if self.p_dl_total_mW is None:
            object.__setattr__(self, "p_dl_total_mW", 200.0 * self.K)
        if self.tau_u is None:
            object.__setattr__(self, "tau_u", self.tau_c - self.tau_p)
        if self.tau_d is None:
            object.__setattr__(self, "tau_d", self.tau_c - self.tau_p)

    @property
    def noise_mW(self) -> float:
        return 10.0 ** (self.noise_dBm / 10.0)

    @property
    def asd_rad(self) -> float:
        return math.radians(self.asd_deg)

    @property
    def ue_powers_mW(self) -> np.ndarray:
        return np.full(self.K, float(self.p_ul_mW))


def validate_simulation_config(cfg: SimulationConfig) -> None:
    """Raise :class:`ConfigError` naming the offending field."""
    if cfg.M < 1:
        raise ConfigError(f"M must be >= 1, got {cfg.M}")
    if cfg.K < 1:
        raise ConfigError(f"K must be >= 1, got {cfg.K}")
    if cfg.N < 1:
        raise ConfigError(f"N must be >= 1, got {cfg.N}")
    if cfg.area_side_m <= 0:
        raise ConfigError(f"area_side_m must be > 0, got {cfg.area_side_m}")
    if not 1 <= cfg.tau_p <= cfg.tau_c:
        raise ConfigError(
            f"tau_p must satisfy 1 <= tau_p <= tau_c, got tau_p={cfg.tau_p}, tau_c={cfg.tau_c}"
        )
    if cfg.tau_u + cfg.tau_p > cfg.tau_c:
        raise ConfigError(
            f"tau_u + tau_p must be <= tau_c, got {cfg.tau_u} + {cfg.tau_p} > {cfg.tau_c}"
        )
    if cfg.tau_d + cfg.tau_p > cfg.tau_c:
        raise ConfigError(
            f"tau_d + tau_p must be <= tau_c, got {cfg.tau_d} + {cfg.tau_p} > {cfg.tau_c}"
        )
    if cfg.tau_u < 0 or cfg.tau_d < 0:
        raise ConfigError("tau_u and tau_d must be >= 0")
    if cfg.p_ul_mW <= 0:
        raise ConfigError(f"p_ul_mW must be > 0, got {cfg.p_ul_mW}")
    if cfg.p_dl_total_mW is not None and cfg.p_dl_total_mW <= 0:
        raise ConfigError(f"p_dl_total_mW must be > 0, got {cfg.p_dl_total_mW}")
    if cfg.bandwidth_Hz <= 0:
        raise ConfigError(f"bandwidth_Hz must be > 0, got {cfg.bandwidth_Hz}")
    if cfg.channel_model not in CHANNEL_MODELS:
        raise ConfigError(
            f"channel_model must be one of {CHANNEL_MODELS}, got {cfg.channel_model!r}"
        )
    if cfg.asd_deg <= 0:
        raise ConfigError(f"asd_deg must be > 0, got {cfg.asd_deg}")
    if cfg.antenna_spacing_wavelengths <= 0:
        raise ConfigError(
            f"antenna_spacing_wavelengths must be > 0, got {cfg.antenna_spacing_wavelengths}"
        )
    if cfg.shadowing_std_dB < 0:
        raise ConfigError(f"shadowing_std_dB must be >= 0, got {cfg.shadowing_std_dB}")
    if cfg.ap_height_m < 0:
        raise ConfigError(f"ap_height_m must be >= 0, got {cfg.ap_height_m}")
    if cfg.wrap_around:
        raise ConfigError("wrap_around is reserved and must be false")
    if cfg.pilot_policy not in PILOT_POLICIES:
        raise ConfigError(
            f"pilot_policy must be one of {PILOT_POLICIES}, got {cfg.pilot_policy!r}"
        )
    for name in ("setup_seed", "channel_seed"):
        seed = getattr(cfg, name)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"{name} must be a 64-bit unsigned integer, got {seed}")
    if cfg.n_setups < 1:
        raise ConfigError(f"n_setups must be >= 1, got {cfg.n_setups}")
    if cfg.n_channel_realizations < 1:
        raise ConfigError(
            f"n_channel_realizations must be >= 1, got {cfg.n_channel_realizations}"
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """A sweep specification on top of a base :class:`SimulationConfig`."""

    base: SimulationConfig
    sweep_axis: str = "none"
    sweep_values: tuple[int, ...] = ()
    schemes: tuple[str, ...] = SCHEMES
    links: tuple[str, ...] = LINKS
    models: tuple[str, ...] = CHANNEL_MODELS
    warmup_blocks: int = 500
    dl_power_policy: str = "proportional"
    out_dir: str | None = None

    @property
    def n_setups(self) -> int:
        return self.base.n_setups

    @property
    def n_blocks(self) -> int:
        return self.base.n_channel_realizations


def _validate_subset(name: str, values: tuple[str, ...], allowed: tuple[str, ...]) -> None:
    if not values:
        raise ConfigError(f"{name} must contain at least one entry")
    if len(set(values)) != len(values):
        raise ConfigError(f"{name} contains duplicates: {values}")
    for v in values:
        if v not in allowed:
            raise ConfigError(f"{name} entry {v!r} not in {allowed}")


def validate_experiment_config(exp: ExperimentConfig) -> None:
    validate_simulation_config(exp.base)
    if exp.sweep_axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {exp.sweep_axis!r}")
    if exp.sweep_axis == "none":
        if exp.sweep_values:
            raise ConfigError("sweep.values must be empty when sweep.axis is 'none'")
    else:
        if not exp.sweep_values:
            raise ConfigError(f"sweep.values must be non-empty for sweep.axis={exp.sweep_axis!r}")
        for v in exp.sweep_values:
            if v < 1:
                raise ConfigError(f"sweep.values must be positive integers, got {v}")
        if len(set(exp.sweep_values)) != len(exp.sweep_values):
            raise ConfigError(f"sweep.values contains duplicates: {exp.sweep_values}")
    _validate_subset("experiment.schemes", exp.schemes, SCHEMES)
    _validate_subset("experiment.links", exp.links, LINKS)
    _validate_subset("experiment.models", exp.models, CHANNEL_MODELS)
    if exp.warmup_blocks < 0:
        raise ConfigError(f"experiment.warmup_blocks must be >= 0, got {exp.warmup_blocks}")
    if "downlink" in exp.links and exp.warmup_blocks < 1:
        raise ConfigError("experiment.warmup_blocks must be >= 1 when downlink is evaluated")
    if exp.dl_power_policy not in DL_POWER_POLICIES:
        raise ConfigError(
            f"experiment.dl_power_policy must be one of {DL_POWER_POLICIES}, "
            f"got {exp.dl_power_policy!r}"
        )
    # the sweep must yield simulation configs that validate, too
    for value, cfg in sweep_points(exp):
        validate_simulation_config(cfg)


def sweep_points(exp: ExperimentConfig) -> list[tuple[int, SimulationConfig]]:
    """Expand the sweep into (sweep_value, SimulationConfig) pairs.

    For sweep.axis 'none' a single point with sweep_value 0 is returned.
    """
    if exp.sweep_axis == "none":
        return [(0, exp.base)]
    return [(v, replace(exp.base, **{exp.sweep_axis: v})) for v in exp.sweep_values]


def desk_profile() -> ExperimentConfig:
    """CI-runnable default: small network, 50 setups, 500 blocks per setup."""
    base = SimulationConfig(M=20, K=10, N=2, n_setups=50, n_channel_realizations=500)
    return ExperimentConfig(base=base, sweep_axis="M", sweep_values=(10, 20, 40))


def paper_profile() -> ExperimentConfig:
    """Large-network profile (many APs and UEs, four antennas each); slow."""
    base = SimulationConfig(M=80, K=40, N=4, n_setups=20, n_channel_realizations=500)
    return ExperimentConfig(base=base, sweep_axis="M", sweep_values=(20, 40, 60, 80, 100))


PROFILES = {"desk": desk_profile, "paper": paper_profile}

_SIM_FIELD_TYPES = {f.name: f.type for f in fields(SimulationConfig)}

_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a mapping; '#' starts a comment."""
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        if key in kv:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        kv[key] = value
    return kv


def _convert(key: str, value: str, target: str):
    try:
        if target == "int":
            return int(value)
        if target == "float":
            return float(value)
        if target == "bool":
            v = value.lower()
            if v not in _BOOL_VALUES:
                raise ValueError(value)
            return _BOOL_VALUES[v]
        if target == "float | None":
            return None if value.lower() == "none" else float(value)
        return value
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {target}") from None


def _parse_tuple(key: str, value: str, kind) -> tuple:
    items = [s.strip() for s in value.split(",") if s.strip()]
    try:
        return tuple(kind(s) for s in items)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None


def experiment_config_from_mapping(
    kv: dict[str, str], base: ExperimentConfig | None = None
) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from parsed keys on top of ``base``.

    Unknown keys are errors. The result is validated before being returned.
    """
    exp = base if base is not None else desk_profile()
    sim_updates: dict = {}
    exp_updates: dict = {}
    for key, value in kv.items():
        section, _, name = key.partition(".")
        if section == "sim" and name in _SIM_FIELD_TYPES:
            sim_updates[name] = _convert(key, value, _SIM_FIELD_TYPES[name])
        elif key == "sweep.axis":
            exp_updates["sweep_axis"] = value
        elif key == "sweep.values":
            exp_updates["sweep_values"] = _parse_tuple(key, value, int)
        elif key == "experiment.schemes":
            exp_updates["schemes"] = _parse_tuple(key, value, str)
        elif key == "experiment.links":
            exp_updates["links"] = _parse_tuple(key, value, str)
        elif key == "experiment.models":
            exp_updates["models"] = _parse_tuple(key, value, str)
        elif key == "experiment.warmup_blocks":
            exp_updates["warmup_blocks"] = _convert(key, value, "int")
        elif key == "experiment.dl_power_policy":
            exp_updates["dl_power_policy"] = value
        elif key == "experiment.out_dir":
            exp_updates["out_dir"] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if sim_updates:
        exp = replace(exp, base=replace(exp.base, **sim_updates))
    if exp_updates:
        exp = replace(exp, **exp_updates)
    validate_experiment_config(exp)
    return exp


def apply_env_overrides(exp: ExperimentConfig, environ=os.environ) -> ExperimentConfig:
    """Apply CFMIMO_SETUP_SEED / CFMIMO_CHANNEL_SEED overrides, if set."""
    updates = {}
    for env, field_name in ((SETUP_SEED_ENV, "setup_seed"), (CHANNEL_SEED_ENV, "channel_seed")):
        if env in environ:
            try:
                updates[field_name] = int(environ[env])
            except ValueError:
                raise ConfigError(f"environment variable {env} must be an integer") from None
    if not updates:
        return exp
    exp = replace(exp, base=replace(exp.base, **updates))
    validate_experiment_config(exp)
    return exp


def load_experiment_config(
    path: str | None = None, profile: str = "desk", environ=os.environ
) -> ExperimentConfig:
    """Resolve profile, optional config file, and environment overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {tuple(PROFILES)}, got {profile!r}")
    exp = PROFILES[profile]()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError(f"cannot read config file {path!r}: {err}") from None
        exp = experiment_config_from_mapping(parse_config_text(text), base=exp)
    return apply_env_overrides(exp, environ)
