"""Simulation and verification laboratory for a minority-game diffusion limit.

The package simulates the discrete game and its continuum SDE, checks the
concentration and dissipativity properties the convergence theory rests on,
and measures waiting times to stationarity against the closed-form bound.
"""

from .config import ConfigError, ExperimentConfig, load_config, save_config
from .discrete import (
    choice_probability,
    discrete_step,
    increment_moments,
    initial_state,
    run_discrete,
)
from .ergodicity import (
    ScenarioSpec,
    VeretennikovReport,
    asymmetry_floor,
    calibrate_m_prime,
    exponent_ranges,
    lln_suite,
    make_initial_condition,
    probe_radii,
    radial_drift_check,
    scenario_rescale,
    waiting_time_bound,
)
from .sde import (
    DiffusionSpec,
    DriftSpec,
    RescaleConstant,
    diffusion_factor,
    drift,
    em_step,
    integrate_ensemble,
    integrate_sde,
    rescale_constant,
    sigma_squared,
)
from .stationarity import (
    EmpiricalWindow,
    StationarityReport,
    alpha_sweep,
    detect_waiting_time,
    gamma_doubling_ratio,
    scaling_experiment,
    shared_bin_edges,
    tv_distance,
)
from .strategies import (
    ALPHA_CRITICAL,
    GameParams,
    OverlapData,
    StrategyTable,
    compute_overlaps,
    load_strategy_cache,
    sample_strategies,
    save_strategy_cache,
)
from .trajectory import Trajectory, TrajectoryEnsemble

__version__ = "0.1.0"

__all__ = [
    "ALPHA_CRITICAL",
    "ConfigError",
    "DiffusionSpec",
    "DriftSpec",
    "EmpiricalWindow",
    "ExperimentConfig",
    "GameParams",
    "OverlapData",
    "RescaleConstant",
    "ScenarioSpec",
    "StationarityReport",
    "StrategyTable",
    "Trajectory",
    "TrajectoryEnsemble",
    "VeretennikovReport",
    "asymmetry_floor",
    "calibrate_m_prime",
    "alpha_sweep",
    "choice_probability",
    "compute_overlaps",
    "detect_waiting_time",
    "diffusion_factor",
    "discrete_step",
    "drift",
    "em_step",
    "exponent_ranges",
    "gamma_doubling_ratio",
    "increment_moments",
    "initial_state",
    "integrate_ensemble",
    "integrate_sde",
    "lln_suite",
    "load_config",
    "load_strategy_cache",
    "make_initial_condition",
    "probe_radii",
    "radial_drift_check",
    "rescale_constant",
    "run_discrete",
    "sample_strategies",
    "save_config",
    "save_strategy_cache",
    "scaling_experiment",
    "scenario_rescale",
    "shared_bin_edges",
    "sigma_squared",
    "tv_distance",
    "waiting_time_bound",
]
