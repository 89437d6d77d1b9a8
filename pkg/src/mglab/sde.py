"""Continuum limit of the score dynamics: drift, diffusion, integrator.

The drift of the rescaled coordinates is

    b_i(y) = bias_overlap_i + sum_j gram_ij * tanh(y_j),

and the equation evolves dy = -b(y) dt + A(y) dW with

    A(y) A(y)^T = gamma_rate * sigma2(y) / (alpha * N) * gram,

where sigma2 is the second moment of the crowd action at frozen coordinates
("attendance" model, evaluated at the current state every step) or the
constant upper-bound proxy sigma2 = N.  Multiplying the state by a constant
c > 1 tightens the radial inward pull enough to clear the dissipativity
threshold (N/2 + 1); ``rescale_constant`` returns the smallest published
choice of c together with the admissible exponent windows it buys.

Time convention: the integrator's dt and t_end live on the drift's own
clock; recorded trajectory times are divided by gamma_rate so that every
artifact shares the scores' time units (see README, "Time conventions").
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpstrf

from .rng import STREAM_SDE, make_rng
from .strategies import GameParams, OverlapData, StrategyTable, compute_overlaps
from .trajectory import Trajectory, TrajectoryEnsemble, guard_allocation

RECONSTRUCTION_TOL = 1e-8
EIG_CLIP_REPORT = 1e-6


class SdeBlowupError(RuntimeError):
    """Raised when an integration step produces a non-finite state."""


@dataclass(frozen=True)
class DriftSpec:
    """Quenched drift coefficients for one strategy draw."""

    overlaps: OverlapData

    @property
    def n_agents(self) -> int:
        return self.overlaps.n_agents


def drift(spec: DriftSpec, y: np.ndarray) -> np.ndarray:
    """b(y); accepts a single (N,) state or a batch (..., N)."""
    m = np.tanh(np.asarray(y, dtype=np.float64))
    return spec.overlaps.bias_overlap + m @ spec.overlaps.gram


@dataclass(eq=False)
class DiffusionSpec:
    """Noise model for one strategy draw.

    The attendance model needs the raw table (per-state data); the constant
    model only needs sizes.  The Gram factor is computed lazily and cached,
    together with its reconstruction diagnostics.
    """

    overlaps: OverlapData
    gamma_rate: float
    alpha: float
    sigma2_model: str = "attendance"
    table: StrategyTable | None = None
    factor_method: str = "auto"
    _factor: np.ndarray | None = field(default=None, repr=False)
    _factor_info: dict | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.sigma2_model not in ("attendance", "constant"):
            raise ValueError(f"unknown sigma2_model {self.sigma2_model!r}")
        if self.factor_method not in ("auto", "cholesky", "eigh", "table"):
            raise ValueError(f"unknown factor_method {self.factor_method!r}")
        if self.sigma2_model == "attendance" and self.table is None:
            raise ValueError("attendance sigma2 model needs the strategy table")
        if self.factor_method == "table" and self.table is None:
            raise ValueError("table factor method needs the strategy table")
        if not self.gamma_rate > 0:
            raise ValueError("gamma_rate must be > 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    @property
    def n_agents(self) -> int:
        return self.overlaps.n_agents

    def factor(self) -> np.ndarray:
        if self._factor is None:
            c, info = overlap_factor(
                self.overlaps.gram, method=self.factor_method, table=self.table
            )
            self._factor = c
            self._factor_info = info
        return self._factor

    @property
    def factor_info(self) -> dict:
        self.factor()
        return dict(self._factor_info)


def sigma_squared(spec: DiffusionSpec, y: np.ndarray):
    """Second moment of the crowd action at frozen coordinates y.

    Vectorized over leading batch axes; returns a scalar for a single state.
    """
    n = spec.n_agents
    if spec.sigma2_model == "constant":
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            return float(n)
        return np.full(y.shape[:-1], float(n))
    m = np.tanh(np.asarray(y, dtype=np.float64))
    diff = spec.table.action_diff.astype(np.float64)
    theta = spec.table.action_bias.astype(np.float64)
    mean_field = m @ diff.T + theta
    quenched_var = (1.0 - m * m) @ np.diag(spec.overlaps.gram)
    out = (mean_field * mean_field).mean(axis=-1) + quenched_var
    if out.ndim == 0:
        return float(out)
    return out


def overlap_factor(gram: np.ndarray, method: str = "auto", table: StrategyTable | None = None):
    """Factor C with C @ C.T == gram, plus diagnostics.

    "cholesky" uses the pivoted triangular factorization, which tolerates
    the exactly singular case n_states < n_agents; "eigh" falls back to an
    eigendecomposition with negative eigenvalues clipped at zero; "table"
    returns the exact rectangular factor built from the strategy draw
    itself.  "auto" tries cholesky and falls back to eigh if reconstruction
    misses RECONSTRUCTION_TOL.
    """
    if method == "table":
        if table is None:
            raise ValueError("table factor method needs the strategy table")
        diff = table.action_diff.astype(np.float64)
        c = diff.T / math.sqrt(table.n_states)
        info = {"method": "table", "clip": 0.0}
        info["reconstruction_error"] = float(np.abs(c @ c.T - gram).max())
        _check_reconstruction(info)
        return c, info

    if method in ("auto", "cholesky"):
        c, info = _pivoted_cholesky(gram)
        if info["reconstruction_error"] <= RECONSTRUCTION_TOL:
            return c, info
        if method == "cholesky":
            _check_reconstruction(info)
            return c, info

    c, info = _eigh_factor(gram)
    _check_reconstruction(info)
    return c, info


def _check_reconstruction(info: dict) -> None:
    if info["reconstruction_error"] > RECONSTRUCTION_TOL:
        raise np.linalg.LinAlgError(
            f"gram factor reconstruction error {info['reconstruction_error']:.3e} "
            f"exceeds {RECONSTRUCTION_TOL}"
        )


def _pivoted_cholesky(gram: np.ndarray):
    n = gram.shape[0]
    cf, piv, rank, _ = dpstrf(gram, lower=1)
    low = np.tril(cf)
    low[:, rank:] = 0.0
    c = np.zeros((n, n))
    c[piv - 1, :] = low
    err = float(np.abs(c @ c.T - gram).max())
    return c, {"method": "cholesky", "rank": int(rank), "clip": 0.0, "reconstruction_error": err}


def _eigh_factor(gram: np.ndarray):
    w, v = np.linalg.eigh(gram)
    clip = float(max(0.0, -w.min()))
    if clip > EIG_CLIP_REPORT:
        warnings.warn(
            f"gram eigenvalue clipped by {clip:.3e} (matrix not numerically PSD)",
            RuntimeWarning,
            stacklevel=3,
        )
    w = np.clip(w, 0.0, None)
    c = v * np.sqrt(w)
    err = float(np.abs(c @ c.T - gram).max())
    return c, {"method": "eigh", "clip": clip, "reconstruction_error": err}


def diffusion_factor(spec: DiffusionSpec, y: np.ndarray) -> np.ndarray:
    """Full noise matrix A(y) for a single state y."""
    sig2 = sigma_squared(spec, y)
    scale = math.sqrt(spec.gamma_rate * sig2 / (spec.alpha * spec.n_agents))
    return scale * spec.factor()


def em_step(y, dt, drift_fn, diffusion_fn, rng: np.random.Generator) -> np.ndarray:
    """One explicit Euler step with additive Gaussian increment.

    diffusion_fn(y) must return the (N, m) noise matrix; m independent
    standard normals are drawn per call.  Aborts on non-finite output.
    """
    y = np.asarray(y, dtype=np.float64)
    a = np.asarray(diffusion_fn(y), dtype=np.float64)
    g = rng.standard_normal(a.shape[-1])
    y_next = y - np.asarray(drift_fn(y), dtype=np.float64) * dt + a @ g * math.sqrt(dt)
    if not np.all(np.isfinite(y_next)):
        raise SdeBlowupError(
            f"non-finite state after step (dt={dt}); reduce dt or check the drift"
        )
    return y_next


@dataclass(frozen=True)
class RescaleConstant:
    """Smallest published rescaling c for one scenario, with what it buys.

    r is the radial pull achieved by the rescaled equation; it must exceed
    n_agents/2 + 1 for the convergence-rate theorem to apply.  k_range and
    l_range are the admissible open intervals for the rate and moment
    exponents; l_range is quoted at the midpoint choice of k.
    """

    c: float
    scenario: str
    r: float
    k_range: tuple
    l_range: tuple

    @property
    def k_default(self) -> float:
        return 0.5 * (self.k_range[0] + self.k_range[1])

    @property
    def l_default(self) -> float:
        return 0.5 * (self.l_range[0] + self.l_range[1])


def rescale_constant(
    n_agents: int,
    scenario: str = "maximal",
    beta: float = 1.0,
    gamma_frac: float = 1.0,
) -> RescaleConstant:
    """Rescaling constant and exponent windows for one scenario.

    For the maximal scenario (every coordinate large) the asymmetry-weight
    product beta*gamma_frac is pinned to 1; for the finite scenario it must
    lie in (0, 1].
    """
    if n_agents < 4:
        raise ValueError("n_agents must be >= 4 for a positive radial threshold")
    if scenario not in ("maximal", "finite"):
        raise ValueError(f"no rescaling constant for scenario {scenario!r}")
    if scenario == "maximal":
        bg = 1.0
    else:
        bg = beta * gamma_frac
        if not 0.0 < bg <= 1.0:
            raise ValueError(f"beta*gamma_frac must lie in (0, 1], got {bg}")
    half = n_agents / 2.0 - 1.0
    c = (1.0 + 2.0 / half + 2.0 / half**2) / bg
    r = c * half
    k_hi = r - (n_agents / 2.0 + 1.0)
    if not k_hi > 0:
        raise ValueError("empty exponent window: n_agents too small for this scenario")
    k_mid = 0.5 * k_hi
    l_lo = 2.0 * k_mid + 2.0
    l_hi = 2.0 * r - n_agents
    if not l_hi > l_lo:
        raise ValueError("empty moment window: n_agents too small for this scenario")
    return RescaleConstant(c=c, scenario=scenario, r=r, k_range=(0.0, k_hi), l_range=(l_lo, l_hi))


def integrate_ensemble(
    params: GameParams,
    table: StrategyTable,
    y0: np.ndarray,
    dt: float,
    t_end: float,
    *,
    n_replicas: int,
    record_every: int = 1,
    tracked=None,
    rescaled: bool = False,
    c: float = 1.0,
    sigma2_model: str = "attendance",
    factor_method: str = "auto",
    stream_tag: int = 0,
    overlaps: OverlapData | None = None,
) -> TrajectoryEnsemble:
    """Integrate n_replicas paths from one shared start point.

    All replicas share the quenched table and differ only in their noise;
    the replica axis is vectorized, so this is the fast path for ensemble
    statistics.  With rescaled=True the state is the c-scaled coordinate and
    the equation integrated is the rescaled one.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be > 0")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    if rescaled and not c > 0:
        raise ValueError("rescaling needs c > 0")
    n = params.n_agents
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.shape != (n,):
        raise ValueError(f"y0 must have shape ({n},)")

    if overlaps is None:
        overlaps = compute_overlaps(table)
    spec = DiffusionSpec(
        overlaps=overlaps,
        gamma_rate=params.gamma_rate,
        alpha=params.alpha,
        sigma2_model=sigma2_model,
        table=table,
        factor_method=factor_method,
    )
    noise_t = np.ascontiguousarray(spec.factor().T)  # (m, N)
    m_noise = noise_t.shape[0]

    diff_t = np.ascontiguousarray(table.action_diff.T.astype(np.float64))  # (N, P)
    diff_f = np.ascontiguousarray(table.action_diff.astype(np.float64))  # (P, N)
    theta = table.action_bias.astype(np.float64)
    gdiag = np.ascontiguousarray(np.diag(overlaps.gram))
    n_states = table.n_states
    attendance = sigma2_model == "attendance"

    n_steps = int(round(t_end / dt))
    if n_steps < 1:
        raise ValueError("t_end shorter than one step")
    tracked = list(range(n)) if tracked is None else [int(i) for i in tracked]
    tracked_idx = np.asarray(tracked, dtype=np.intp)
    n_records = n_steps // record_every + 1
    guard_allocation(n_records, n_replicas, len(tracked))

    rng = make_rng(params.seed, STREAM_SDE, stream_tag)
    y = np.tile(y0, (n_replicas, 1))
    times = np.empty(n_records)
    values = np.empty((n_records, n_replicas, len(tracked)))
    times[0] = 0.0
    values[0] = y[:, tracked_idx]
    rec = 1

    noise_base = params.gamma_rate / (params.alpha * n)
    inv_c = 1.0 / c
    for step in range(1, n_steps + 1):
        m = np.tanh(y * inv_c) if rescaled else np.tanh(y)
        mean_field = m @ diff_t
        mean_field += theta
        b = mean_field @ diff_f
        b *= 1.0 / n_states
        if attendance:
            sig2 = np.einsum("rp,rp->r", mean_field, mean_field) / n_states
            sig2 += (1.0 - m * m) @ gdiag
        else:
            sig2 = np.full(n_replicas, float(n))
        amp = np.sqrt(noise_base * sig2 * dt)
        z = rng.standard_normal((n_replicas, m_noise))
        incr = z @ noise_t
        incr *= amp[:, None]
        incr -= b * dt
        if rescaled:
            incr *= c
        y += incr
        if not np.all(np.isfinite(y)):
            raise SdeBlowupError(
                f"non-finite state at step {step} (t={step * dt:.4g}); reduce dt"
            )
        if step % record_every == 0:
            times[rec] = step * dt / params.gamma_rate
            values[rec] = y[:, tracked_idx]
            rec += 1

    return TrajectoryEnsemble(
        times=times[:rec],
        values=values[:rec],
        coords=tracked,
        meta={
            "kind": "sde",
            "n_agents": n,
            "n_states": params.n_states,
            "gamma_rate": params.gamma_rate,
            "alpha": params.alpha,
            "seed": params.seed,
            "dt": dt,
            "t_end": t_end,
            "record_every": record_every,
            "n_replicas": n_replicas,
            "rescaled": rescaled,
            "c": c,
            "sigma2_model": sigma2_model,
            "stream_tag": stream_tag,
        },
    )


def integrate_sde(
    params: GameParams,
    table: StrategyTable,
    y0: np.ndarray,
    dt: float,
    t_end: float,
    *,
    record_every: int = 1,
    rescaled: bool = False,
    c: float = 1.0,
    sigma2_model: str = "attendance",
    factor_method: str = "auto",
    stream_tag: int = 0,
    overlaps: OverlapData | None = None,
) -> Trajectory:
    """Single-path convenience wrapper around integrate_ensemble."""
    ens = integrate_ensemble(
        params,
        table,
        y0,
        dt,
        t_end,
        n_replicas=1,
        record_every=record_every,
        rescaled=rescaled,
        c=c,
        sigma2_model=sigma2_model,
        factor_method=factor_method,
        stream_tag=stream_tag,
        overlaps=overlaps,
    )
    traj = ens.replica(0)
    traj.meta["kind"] = "sde"
    return traj
