"""Experiment configuration: one YAML file = one experiment.

Parsing is strict on purpose: unknown keys anywhere are an error (silent
typos have burned enough CPU hours), every diagnostic names the offending
field, and a loaded config serializes back to an equivalent document.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .ergodicity import ScenarioSpec


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field."""


def _reject_unknown(raw: dict, allowed, where: str) -> None:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def _as_int(value, where: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where} must be >= {minimum}, got {value}")
    return value


def _as_float(value, where: str, positive=False, minimum=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(f"{where} must be > 0, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where} must be >= {minimum}, got {value}")
    return value


def _as_bool(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where} must be a boolean, got {value!r}")
    return value


def _as_choice(value, where: str, choices) -> str:
    if value not in choices:
        raise ConfigError(f"{where} must be one of {sorted(choices)}, got {value!r}")
    return value


def _as_number_list(value, where: str, kind, minimum=None) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where} must be a non-empty list")
    out = []
    for i, v in enumerate(value):
        if kind is int:
            out.append(_as_int(v, f"{where}[{i}]", minimum=minimum))
        else:
            out.append(_as_float(v, f"{where}[{i}]", minimum=minimum))
    return out


@dataclass(frozen=True)
class GameBlock:
    n_agents: int = 64
    alpha: float = 1.0
    gamma_rate: float = 1.0


@dataclass(frozen=True)
class ScenarioBlock:
    kind: str = "finite"
    beta: float = 1.0
    gamma_frac: float = 1.0
    y_max: float = 50.0


@dataclass(frozen=True)
class IntegratorBlock:
    dt: float = 0.01
    t_end: float = 120.0
    record_every: int = 25
    n_replicas: int = 96
    sigma2_model: str = "attendance"
    factor_method: str = "auto"
    rescaled: bool = False


@dataclass(frozen=True)
class EstimatorBlock:
    epsilon_target: float = 0.05
    window: float | None = None
    confirm: int = 3
    n_bins: int = 64
    marginal: str = "y"
    tail_fraction: float = 0.25


@dataclass(frozen=True)
class SweepBlock:
    n_grid: tuple = (32, 64, 128, 256)
    alphas: tuple = (1.0, 0.7, 0.55, 0.4)
    t_end_base: float = 80.0
    t_end_per_agent: float = 1.5


@dataclass(frozen=True)
class DiscreteBlock:
    n_steps: int = 20000
    record_every: int = 1
    use_scenario_start: bool = False


@dataclass(frozen=True)
class DriftOracleBlock:
    n_draws: int = 200_000
    n_points: int = 10
    y_scale: float = 2.0
    se_multiple: float = 3.0
    min_match_fraction: float = 0.95


@dataclass(frozen=True)
class DissipativityBlock:
    coord_mags: tuple = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0)
    n_probes: int = 1000
    threshold: float = 0.45
    min_pass_fraction: float = 0.99


@dataclass(frozen=True)
class LlnBlock:
    n_grid: tuple = (256, 1024, 4096)
    n_probes: int = 16
    slope_window: tuple = (-0.7, -0.3)
    diag_tolerance: float = 0.02


@dataclass(frozen=True)
class WaitingBlock:
    epsilon: float = 0.05
    k: float | None = None
    l: float | None = None
    m_prime: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    game: GameBlock = GameBlock()
    scenario: ScenarioBlock = ScenarioBlock()
    integrator: IntegratorBlock = IntegratorBlock()
    estimator: EstimatorBlock = EstimatorBlock()
    sweep: SweepBlock = SweepBlock()
    discrete: DiscreteBlock = DiscreteBlock()
    drift_oracle: DriftOracleBlock = DriftOracleBlock()
    dissipativity: DissipativityBlock = DissipativityBlock()
    lln: LlnBlock = LlnBlock()
    waiting: WaitingBlock = WaitingBlock()
    seeds: tuple | None = None
    seed_count: int = 2
    output_dir: str | None = None
    jobs: int = 1

    def scenario_spec(self) -> ScenarioSpec:
        s = self.scenario
        return ScenarioSpec(kind=s.kind, gamma_frac=s.gamma_frac, beta=s.beta, y_max=s.y_max)

    def resolved_seeds(self) -> list:
        if self.seeds is not None:
            return list(self.seeds)
        return list(range(self.seed_count))


def _build_game(raw: dict) -> GameBlock:
    _reject_unknown(raw, ("n_agents", "alpha", "gamma_rate"), "game")
    return GameBlock(
        n_agents=_as_int(raw.get("n_agents", 64), "game.n_agents", minimum=1),
        alpha=_as_float(raw.get("alpha", 1.0), "game.alpha", positive=True),
        gamma_rate=_as_float(raw.get("gamma_rate", 1.0), "game.gamma_rate", positive=True),
    )


def _build_scenario(raw: dict) -> ScenarioBlock:
    _reject_unknown(raw, ("kind", "beta", "gamma_frac", "y_max"), "scenario")
    block = ScenarioBlock(
        kind=_as_choice(raw.get("kind", "finite"), "scenario.kind", ("maximal", "finite", "producer")),
        beta=_as_float(raw.get("beta", 1.0), "scenario.beta", positive=True),
        gamma_frac=_as_float(raw.get("gamma_frac", 1.0), "scenario.gamma_frac", positive=True),
        y_max=_as_float(raw.get("y_max", 50.0), "scenario.y_max", positive=True),
    )
    try:
        ScenarioSpec(kind=block.kind, gamma_frac=block.gamma_frac, beta=block.beta, y_max=block.y_max)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    return block


def _build_integrator(raw: dict) -> IntegratorBlock:
    allowed = ("dt", "t_end", "record_every", "n_replicas", "sigma2_model", "factor_method", "rescaled")
    _reject_unknown(raw, allowed, "integrator")
    return IntegratorBlock(
        dt=_as_float(raw.get("dt", 0.01), "integrator.dt", positive=True),
        t_end=_as_float(raw.get("t_end", 120.0), "integrator.t_end", positive=True),
        record_every=_as_int(raw.get("record_every", 25), "integrator.record_every", minimum=1),
        n_replicas=_as_int(raw.get("n_replicas", 96), "integrator.n_replicas", minimum=1),
        sigma2_model=_as_choice(
            raw.get("sigma2_model", "attendance"), "integrator.sigma2_model", ("attendance", "constant")
        ),
        factor_method=_as_choice(
            raw.get("factor_method", "auto"),
            "integrator.factor_method",
            ("auto", "cholesky", "eigh", "table"),
        ),
        rescaled=_as_bool(raw.get("rescaled", False), "integrator.rescaled"),
    )


def _build_estimator(raw: dict) -> EstimatorBlock:
    allowed = ("epsilon_target", "window", "confirm", "n_bins", "marginal", "tail_fraction")
    _reject_unknown(raw, allowed, "estimator")
    window = raw.get("window")
    if window is not None:
        window = _as_float(window, "estimator.window", positive=True)
    tail = _as_float(raw.get("tail_fraction", 0.25), "estimator.tail_fraction", positive=True)
    if not tail < 1.0:
        raise ConfigError(f"estimator.tail_fraction must be < 1, got {tail}")
    return EstimatorBlock(
        epsilon_target=_as_float(raw.get("epsilon_target", 0.05), "estimator.epsilon_target", positive=True),
        window=window,
        confirm=_as_int(raw.get("confirm", 3), "estimator.confirm", minimum=1),
        n_bins=_as_int(raw.get("n_bins", 64), "estimator.n_bins", minimum=2),
        marginal=_as_choice(raw.get("marginal", "y"), "estimator.marginal", ("y", "tanh")),
        tail_fraction=tail,
    )


def _build_sweep(raw: dict) -> SweepBlock:
    _reject_unknown(raw, ("n_grid", "alphas", "t_end_base", "t_end_per_agent"), "sweep")
    return SweepBlock(
        n_grid=tuple(_as_number_list(raw.get("n_grid", [32, 64, 128, 256]), "sweep.n_grid", int, minimum=1)),
        alphas=tuple(_as_number_list(raw.get("alphas", [1.0, 0.7, 0.55, 0.4]), "sweep.alphas", float)),
        t_end_base=_as_float(raw.get("t_end_base", 80.0), "sweep.t_end_base", positive=True),
        t_end_per_agent=_as_float(raw.get("t_end_per_agent", 1.5), "sweep.t_end_per_agent", minimum=0.0),
    )


def _build_discrete(raw: dict) -> DiscreteBlock:
    _reject_unknown(raw, ("n_steps", "record_every", "use_scenario_start"), "discrete")
    return DiscreteBlock(
        n_steps=_as_int(raw.get("n_steps", 20000), "discrete.n_steps", minimum=1),
        record_every=_as_int(raw.get("record_every", 1), "discrete.record_every", minimum=1),
        use_scenario_start=_as_bool(raw.get("use_scenario_start", False), "discrete.use_scenario_start"),
    )


def _build_drift_oracle(raw: dict) -> DriftOracleBlock:
    allowed = ("n_draws", "n_points", "y_scale", "se_multiple", "min_match_fraction")
    _reject_unknown(raw, allowed, "drift_oracle")
    return DriftOracleBlock(
        n_draws=_as_int(raw.get("n_draws", 200_000), "drift_oracle.n_draws", minimum=100),
        n_points=_as_int(raw.get("n_points", 10), "drift_oracle.n_points", minimum=1),
        y_scale=_as_float(raw.get("y_scale", 2.0), "drift_oracle.y_scale", positive=True),
        se_multiple=_as_float(raw.get("se_multiple", 3.0), "drift_oracle.se_multiple", positive=True),
        min_match_fraction=_as_float(
            raw.get("min_match_fraction", 0.95), "drift_oracle.min_match_fraction", positive=True
        ),
    )


def _build_dissipativity(raw: dict) -> DissipativityBlock:
    _reject_unknown(raw, ("coord_mags", "n_probes", "threshold", "min_pass_fraction"), "dissipativity")
    return DissipativityBlock(
        coord_mags=tuple(
            _as_number_list(
                raw.get("coord_mags", [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0]),
                "dissipativity.coord_mags",
                float,
            )
        ),
        n_probes=_as_int(raw.get("n_probes", 1000), "dissipativity.n_probes", minimum=1),
        threshold=_as_float(raw.get("threshold", 0.45), "dissipativity.threshold"),
        min_pass_fraction=_as_float(
            raw.get("min_pass_fraction", 0.99), "dissipativity.min_pass_fraction", positive=True
        ),
    )


def _build_lln(raw: dict) -> LlnBlock:
    _reject_unknown(raw, ("n_grid", "n_probes", "slope_window", "diag_tolerance"), "lln")
    slope = raw.get("slope_window", [-0.7, -0.3])
    slope = _as_number_list(slope, "lln.slope_window", float)
    if len(slope) != 2 or not slope[0] < slope[1]:
        raise ConfigError("lln.slope_window must be [lo, hi] with lo < hi")
    return LlnBlock(
        n_grid=tuple(_as_number_list(raw.get("n_grid", [256, 1024, 4096]), "lln.n_grid", int, minimum=2)),
        n_probes=_as_int(raw.get("n_probes", 16), "lln.n_probes", minimum=1),
        slope_window=tuple(slope),
        diag_tolerance=_as_float(raw.get("diag_tolerance", 0.02), "lln.diag_tolerance", positive=True),
    )


def _build_waiting(raw: dict) -> WaitingBlock:
    _reject_unknown(raw, ("epsilon", "k", "l", "m_prime"), "waiting")
    k = raw.get("k")
    l = raw.get("l")
    return WaitingBlock(
        epsilon=_as_float(raw.get("epsilon", 0.05), "waiting.epsilon", positive=True),
        k=None if k is None else _as_float(k, "waiting.k", minimum=0.0),
        l=None if l is None else _as_float(l, "waiting.l", minimum=0.0),
        m_prime=_as_float(raw.get("m_prime", 1.0), "waiting.m_prime", positive=True),
    )


_BLOCK_BUILDERS = {
    "game": _build_game,
    "scenario": _build_scenario,
    "integrator": _build_integrator,
    "estimator": _build_estimator,
    "sweep": _build_sweep,
    "discrete": _build_discrete,
    "drift_oracle": _build_drift_oracle,
    "dissipativity": _build_dissipativity,
    "lln": _build_lln,
    "waiting": _build_waiting,
}

_TOP_KEYS = tuple(_BLOCK_BUILDERS) + ("seeds", "seed_count", "output_dir", "jobs")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, "config root")
    kwargs = {}
    for name, builder in _BLOCK_BUILDERS.items():
        block_raw = raw.get(name, {})
        if block_raw is None:
            block_raw = {}
        if not isinstance(block_raw, dict):
            raise ConfigError(f"{name} must be a mapping")
        kwargs[name] = builder(block_raw)
    seeds = raw.get("seeds")
    if seeds is not None:
        seeds = tuple(_as_number_list(seeds, "seeds", int, minimum=0))
    kwargs["seeds"] = seeds
    kwargs["seed_count"] = _as_int(raw.get("seed_count", 2), "seed_count", minimum=1)
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError(f"output_dir must be a string, got {output_dir!r}")
    kwargs["output_dir"] = output_dir
    kwargs["jobs"] = _as_int(raw.get("jobs", 1), "jobs", minimum=1)
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _BLOCK_BUILDERS:
            block = asdict(value)
            for key, inner in block.items():
                if isinstance(inner, tuple):
                    block[key] = list(inner)
            out[f.name] = block
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )
