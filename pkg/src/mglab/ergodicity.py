"""Dissipativity checks, exponent windows, and the waiting-time bound.

The convergence-rate theorem needs the rescaled drift to push inward with
radial strength r > N/2 + 1 outside a ball.  This module probes that radial
inequality numerically along scenario-shaped directions, exposes the
admissible exponent windows, evaluates the closed-form waiting time they
imply, and fits the envelope constant against measured relaxation curves.
Population-law checks on the quenched overlaps live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .rng import STREAM_INIT, STREAM_PROBES, make_rng
from .sde import DriftSpec, RescaleConstant, drift, rescale_constant
from .strategies import GameParams, sample_strategies

SCENARIOS = ("maximal", "finite", "producer")
_KIND_ALIASES = {"finite_asymmetric": "finite"}


@dataclass(frozen=True)
class ScenarioSpec:
    """Shape of the start point and of the dissipativity probe directions.

    maximal  -- every coordinate large (magnitude y_max, random signs).
    finite   -- ceil(gamma_frac * N) coordinates sit at the asymmetry floor
                for beta (the magnitude where x*tanh(x) = beta), rest zero.
                Also answers to the name "finite_asymmetric".
    producer -- exactly one coordinate at +-y_max, rest zero.
    """

    kind: str
    gamma_frac: float = 1.0
    beta: float = 1.0
    y_max: float = 50.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", _KIND_ALIASES.get(self.kind, self.kind))
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.y_max > 0:
            raise ValueError("y_max must be > 0")
        if self.kind == "finite":
            if not 0.0 < self.gamma_frac <= 1.0:
                raise ValueError("gamma_frac must lie in (0, 1]")
            if not self.beta > 0:
                raise ValueError("beta must be > 0")
            if self.beta * self.gamma_frac > 1.0:
                raise ValueError("beta * gamma_frac must lie in (0, 1]")

    @property
    def beta_gamma(self) -> float:
        if self.kind == "finite":
            return self.beta * self.gamma_frac
        return 1.0


def asymmetry_floor(beta: float) -> float:
    """Magnitude x* where x*tanh(x) first reaches beta (increasing in x)."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    hi = max(2.0, beta + 1.0)
    while hi * math.tanh(hi) < beta:
        hi *= 2.0
    return brentq(lambda x: x * math.tanh(x) - beta, 1e-12, hi, xtol=1e-12, rtol=1e-14)


def make_initial_condition(
    spec: ScenarioSpec, n_agents: int, seed: int, stream_tag: int = 0
) -> np.ndarray:
    """Draw y(0) for one scenario; deterministic in (seed, stream_tag)."""
    rng = make_rng(seed, STREAM_INIT, stream_tag)
    y = np.zeros(n_agents)
    if spec.kind == "producer":
        idx = int(rng.integers(n_agents))
        y[idx] = spec.y_max * (1.0 if rng.random() < 0.5 else -1.0)
        return y
    if spec.kind == "maximal":
        signs = np.where(rng.random(n_agents) < 0.5, 1.0, -1.0)
        return spec.y_max * signs
    floor = asymmetry_floor(spec.beta)
    if floor > spec.y_max:
        raise ValueError(
            f"asymmetry floor {floor:.4g} for beta={spec.beta} exceeds y_max={spec.y_max}"
        )
    count = math.ceil(spec.gamma_frac * n_agents)
    idx = rng.choice(n_agents, size=count, replace=False)
    signs = np.where(rng.random(count) < 0.5, 1.0, -1.0)
    y[idx] = floor * signs
    return y


# --- population laws of the quenched overlaps -------------------------------


@dataclass
class LlnCell:
    n_agents: int
    seed: int
    probe_bias_overlap: np.ndarray  # per probed agent
    probe_diag_dev: np.ndarray  # |gram_ii - 1/2| per probed agent
    probe_offdiag_rowsum: np.ndarray  # per probed agent
    pop_bias_overlap: float  # population mean over all agents
    pop_offdiag_rowsum: float
    max_diag_dev: float


@dataclass
class LlnReport:
    alpha: float
    n_grid: list
    seeds: list
    n_probes: int
    cells: list
    stat_bias: dict  # N -> rms over seeds of |population bias overlap|
    stat_offdiag: dict
    stat_diag: dict  # N -> mean over seeds of mean probe diag deviation
    slope_bias: float
    slope_offdiag: float
    slope_diag: float

    def stat_rows(self):
        for n in self.n_grid:
            yield n, self.stat_bias[n], self.stat_offdiag[n], self.stat_diag[n]


def _population_overlap_stats(table) -> dict:
    """Per-agent and population overlap statistics without the full Gram."""
    diff = table.action_diff.astype(np.float64)
    theta = table.action_bias.astype(np.float64)
    n_states = table.n_states
    diag = np.einsum("mi,mi->i", diff, diff) / n_states
    bias_overlap = diff.T @ theta / n_states
    row_sums = diff.T @ (diff @ np.ones(diff.shape[1])) / n_states
    offdiag = row_sums - diag
    return {"diag": diag, "bias_overlap": bias_overlap, "offdiag_rowsum": offdiag}


def _loglog_slope(ns, vals) -> float:
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(vals, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def lln_suite(
    alpha: float,
    gamma_rate: float,
    n_grid,
    seeds,
    n_probes: int = 16,
) -> LlnReport:
    """Concentration of the quenched overlaps across a geometric size grid.

    Per-agent squared-overlap deviations shrink with the number of states;
    the signed population means of the bias overlap and of the off-diagonal
    row sums shrink at the usual root-N rate.  Per-agent signed overlaps do
    NOT shrink at fixed alpha (their spread is alpha-limited); the decay
    fits therefore run on the population means.  See notes in README.
    """
    n_grid = [int(n) for n in n_grid]
    seeds = [int(s) for s in seeds]
    cells = []
    for n in n_grid:
        for seed in seeds:
            params = GameParams.from_alpha(n, alpha, gamma_rate, seed)
            table = sample_strategies(params)
            stats = _population_overlap_stats(table)
            k = min(n_probes, n)
            cells.append(
                LlnCell(
                    n_agents=n,
                    seed=seed,
                    probe_bias_overlap=stats["bias_overlap"][:k].copy(),
                    probe_diag_dev=np.abs(stats["diag"][:k] - 0.5),
                    probe_offdiag_rowsum=stats["offdiag_rowsum"][:k].copy(),
                    pop_bias_overlap=float(stats["bias_overlap"].mean()),
                    pop_offdiag_rowsum=float(stats["offdiag_rowsum"].mean()),
                    max_diag_dev=float(np.abs(stats["diag"] - 0.5).max()),
                )
            )
    stat_bias = {}
    stat_offdiag = {}
    stat_diag = {}
    for n in n_grid:
        rows = [c for c in cells if c.n_agents == n]
        stat_bias[n] = float(np.sqrt(np.mean([c.pop_bias_overlap**2 for c in rows])))
        stat_offdiag[n] = float(np.sqrt(np.mean([c.pop_offdiag_rowsum**2 for c in rows])))
        stat_diag[n] = float(np.mean([c.probe_diag_dev.mean() for c in rows]))
    return LlnReport(
        alpha=alpha,
        n_grid=n_grid,
        seeds=seeds,
        n_probes=n_probes,
        cells=cells,
        stat_bias=stat_bias,
        stat_offdiag=stat_offdiag,
        stat_diag=stat_diag,
        slope_bias=_loglog_slope(n_grid, [stat_bias[n] for n in n_grid]),
        slope_offdiag=_loglog_slope(n_grid, [stat_offdiag[n] for n in n_grid]),
        slope_diag=_loglog_slope(n_grid, [stat_diag[n] for n in n_grid]),
    )


# --- radial dissipativity ----------------------------------------------------


@dataclass
class RadiusProfile:
    radius: float
    pass_fraction: float
    min_margin: float
    mean_margin: float
    mean_radial_over_n: float  # <b(y), y>/N averaged over probes
    radial_over_n: np.ndarray = field(repr=False, default=None)  # per probe


@dataclass
class VeretennikovReport:
    """Outcome of the radial inequality scan for one table and scenario.

    The inequality checked at state z = c*y on each probe is
    c^2 <b(y), y> >= r with r = c*(N/2 - 1); margin is lhs - r.  The y-space
    scenario target beta*gamma*(N/2 - 1) is recorded alongside.
    """

    n_agents: int
    scenario: str
    c: float
    k: float
    l: float
    r_required: float
    r_achieved: float
    target_radial: float  # scenario threshold on <b(y), y>
    m0_empirical: float | None
    pass_fraction: float  # at the largest scanned radius
    profiles: list = field(default_factory=list)
    n_probes: int = 0

    def passes(self, min_pass_fraction: float) -> bool:
        return self.r_achieved > self.r_required and self.pass_fraction >= min_pass_fraction

    def threshold_fractions(self, threshold: float):
        """Per radius, the fraction of probes with <b(y), y>/N above threshold."""
        return [(p.radius, float(np.mean(p.radial_over_n >= threshold))) for p in self.profiles]


def _probe_directions(spec: ScenarioSpec, n_agents: int, n_probes: int, rng) -> np.ndarray:
    """Unit-norm probe directions matching the scenario geometry."""
    if spec.kind == "producer":
        dirs = np.zeros((n_probes, n_agents))
        idx = rng.integers(n_agents, size=n_probes)
        signs = np.where(rng.random(n_probes) < 0.5, 1.0, -1.0)
        dirs[np.arange(n_probes), idx] = signs
        return dirs
    if spec.kind == "maximal":
        signs = np.where(rng.random((n_probes, n_agents)) < 0.5, 1.0, -1.0)
        return signs / math.sqrt(n_agents)
    count = math.ceil(spec.gamma_frac * n_agents)
    dirs = np.zeros((n_probes, n_agents))
    mag = 1.0 / math.sqrt(count)
    for row in range(n_probes):
        idx = rng.choice(n_agents, size=count, replace=False)
        signs = np.where(rng.random(count) < 0.5, 1.0, -1.0)
        dirs[row, idx] = mag * signs
    return dirs


def scenario_rescale(scenario: ScenarioSpec, n_agents: int) -> RescaleConstant:
    """Rescaling constants matching a scenario (producer probes use maximal's)."""
    kind = "finite" if scenario.kind == "finite" else "maximal"
    return rescale_constant(n_agents, kind, beta=scenario.beta, gamma_frac=scenario.gamma_frac)


def _rescale_from_c(n_agents: int, c: float, scenario: str) -> RescaleConstant:
    """Constants for a caller-chosen c, via the general constraint chain."""
    half = n_agents / 2.0 - 1.0
    r = c * half
    k_hi = r - (n_agents / 2.0 + 1.0)
    if k_hi <= 0:
        raise ValueError(f"c={c} gives r={r} <= N/2 + 1; no admissible exponents")
    k_mid = 0.5 * k_hi
    l_lo, l_hi = 2.0 * k_mid + 2.0, 2.0 * r - n_agents
    if l_hi <= l_lo:
        raise ValueError(f"c={c} leaves an empty decay-exponent window")
    return RescaleConstant(c=c, scenario=scenario, r=r, k_range=(0.0, k_hi), l_range=(l_lo, l_hi))


def probe_radii(scenario: ScenarioSpec, n_agents: int, coord_mags, c: float) -> list:
    """Rescaled-state radii |z| giving the listed per-coordinate magnitudes.

    Coordinate magnitude m on the scenario support (all N coordinates for
    maximal, the asymmetric count for finite, one for producer) maps to
    |z| = c * m * sqrt(support size).
    """
    if scenario.kind == "maximal":
        support = n_agents
    elif scenario.kind == "finite":
        support = math.ceil(scenario.gamma_frac * n_agents)
    else:
        support = 1
    return [c * float(m) * math.sqrt(support) for m in coord_mags]


def radial_drift_check(
    drift_spec: DriftSpec,
    scenario: ScenarioSpec,
    radii,
    n_probes: int = 1000,
    seed: int = 0,
    rescale: RescaleConstant | None = None,
    c: float | None = None,
) -> VeretennikovReport:
    """Scan the rescaled radial inequality over probe directions and radii.

    Radii are |z| values of the rescaled state.  m0_empirical is the
    smallest scanned radius from which the inequality holds on every probe
    at that and at all larger radii; None if no such radius was scanned.
    Passing c overrides the scenario's own rescaling constant.
    """
    n = drift_spec.n_agents
    if c is not None:
        rescale = _rescale_from_c(n, float(c), scenario.kind)
    elif rescale is None:
        rescale = scenario_rescale(scenario, n)
    c = rescale.c
    rng = make_rng(seed, STREAM_PROBES)
    dirs = _probe_directions(scenario, n, n_probes, rng)
    radii = sorted(float(r) for r in radii)
    if not radii:
        raise ValueError("need at least one radius")

    profiles = []
    all_pass = []
    for radius in radii:
        z = radius * dirs
        y = z / c
        b = drift(drift_spec, y)
        radial = np.einsum("pn,pn->p", b, y)
        lhs = c * c * radial
        margin = lhs - rescale.r
        profiles.append(
            RadiusProfile(
                radius=radius,
                pass_fraction=float(np.mean(margin > 0.0)),
                min_margin=float(margin.min()),
                mean_margin=float(margin.mean()),
                mean_radial_over_n=float(radial.mean() / n),
                radial_over_n=radial / n,
            )
        )
        all_pass.append(bool(np.all(margin > 0.0)))

    m0 = None
    for i in range(len(radii)):
        if all(all_pass[i:]):
            m0 = radii[i]
            break
    return VeretennikovReport(
        n_agents=n,
        scenario=scenario.kind,
        c=c,
        k=rescale.k_default,
        l=rescale.l_default,
        r_required=n / 2.0 + 1.0,
        r_achieved=rescale.r,
        target_radial=scenario.beta_gamma * (n / 2.0 - 1.0),
        m0_empirical=m0,
        pass_fraction=profiles[-1].pass_fraction,
        profiles=profiles,
        n_probes=n_probes,
    )


# --- exponent windows and the waiting-time bound -----------------------------


@dataclass(frozen=True)
class ExponentWindow:
    c: float
    r: float
    k_range: tuple
    l_range: tuple
    k_default: float
    l_default: float


def exponent_ranges(
    n_agents: int,
    scenario: str = "maximal",
    beta: float = 1.0,
    gamma_frac: float = 1.0,
) -> ExponentWindow:
    """Admissible (k, l) windows for the convergence rate, with defaults.

    Derived from the same constants as rescale_constant: 0 < k < r - N/2 - 1
    and 2k + 2 < l < 2r - N; defaults sit at the midpoints (l's midpoint is
    taken after fixing k).
    """
    rc = rescale_constant(n_agents, scenario, beta=beta, gamma_frac=gamma_frac)
    return ExponentWindow(
        c=rc.c,
        r=rc.r,
        k_range=rc.k_range,
        l_range=rc.l_range,
        k_default=rc.k_default,
        l_default=rc.l_default,
    )


def waiting_time_bound(
    epsilon: float,
    gamma_rate: float,
    y0_norm: float,
    c: float,
    k: float,
    l: float,
    m_prime: float = 1.0,
) -> float:
    """Time (scores' units) after which the bound pushes the distance under epsilon.

    Solves m_prime * (1 + |c*y0|^l) * (1 + t)^-(k+1) = epsilon for t and
    converts to the scores' clock; clamps at zero when the bound is already
    below epsilon at t = 0.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if not gamma_rate > 0:
        raise ValueError("gamma_rate must be > 0")
    if not m_prime > 0:
        raise ValueError("m_prime must be > 0")
    if k < 0 or l < 0 or c <= 0 or y0_norm < 0:
        raise ValueError("need k >= 0, l >= 0, c > 0, y0_norm >= 0")
    bound0 = (m_prime / epsilon) * (1.0 + (c * y0_norm) ** l)
    if bound0 <= 1.0:
        return 0.0
    return (bound0 ** (1.0 / (k + 1.0)) - 1.0) / gamma_rate


@dataclass(frozen=True)
class EnvelopeFit:
    m_prime: float
    n_pairs: int
    violation_fraction: float


def calibrate_m_prime(measured_pairs, k: float, l: float, c: float, y0_norm: float) -> EnvelopeFit:
    """Smallest envelope constant dominating a measured relaxation curve.

    measured_pairs is a sequence of (t, value) with t on the drift's clock.
    Least squares under the domination constraint reduces to the largest
    ratio value / shape(t), since the objective grows in m_prime above the
    unconstrained optimum.  Rejects curves that do not decrease.
    """
    pairs = [(float(t), float(v)) for t, v in measured_pairs]
    if len(pairs) < 3:
        raise ValueError("need at least 3 measured pairs")
    pairs.sort(key=lambda p: p[0])
    t = np.array([p[0] for p in pairs])
    v = np.array([p[1] for p in pairs])
    if np.any(v < 0):
        raise ValueError("measured values must be nonnegative")
    slope = np.polyfit(t, v, 1)[0]
    if v[-1] >= v[0] or slope >= 0:
        raise ValueError("measured curve does not decrease; run longer or check convergence")
    shape = (1.0 + (c * y0_norm) ** l) * (1.0 + t) ** (-(k + 1.0))
    m_prime = float(np.max(v / shape))
    violations = float(np.mean(v > m_prime * shape * (1.0 + 1e-12)))
    return EnvelopeFit(m_prime=m_prime, n_pairs=len(pairs), violation_fraction=violations)
