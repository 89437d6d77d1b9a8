"""Sequential score dynamics of the discrete two-strategy game.

Each round draws an information state uniformly, lets every agent pick the
first or second strategy with logistic probability in the score difference,
and charges every strategy's score with its own hypothetical contribution to
the realized crowd action, scaled by 1/N.

One round advances the scores' own clock by 1/N, so N rounds make one time
unit; with that convention the conditional one-round mean of the rescaled
coordinate y_i = gamma_rate * (score difference) / 2 reproduces the drift of
the continuum equation (see README, "Time conventions").  That identity is
what the drift-match oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .rng import STREAM_DISCRETE, STREAM_MCSAMPLER, make_rng
from .strategies import GameParams, StrategyTable
from .trajectory import Trajectory, guard_allocation

_MC_CHUNK = 16_384


@dataclass
class DiscreteState:
    """Scores (N, 2) of both strategies per agent, plus the round counter."""

    scores: np.ndarray
    step: int = 0


def choice_probability(score_first, score_second, gamma_rate: float):
    """Probability of playing the first strategy at learning rate gamma_rate.

    Stable logistic in the score difference; saturates cleanly to 0 or 1 for
    extreme scores instead of overflowing.
    """
    if not gamma_rate > 0:
        raise ValueError("gamma_rate must be > 0")
    diff = np.asarray(score_first, dtype=np.float64) - np.asarray(score_second, dtype=np.float64)
    return expit(gamma_rate * diff)


def rescaled_coordinates(state: DiscreteState, gamma_rate: float) -> np.ndarray:
    """y_i = gamma_rate * (first score - second score) / 2."""
    return gamma_rate * (state.scores[:, 0] - state.scores[:, 1]) / 2.0


def initial_state(n_agents: int, gamma_rate: float, y0: np.ndarray | None = None) -> DiscreteState:
    """Scores consistent with a requested start of the rescaled coordinates."""
    scores = np.zeros((n_agents, 2), dtype=np.float64)
    if y0 is not None:
        y0 = np.asarray(y0, dtype=np.float64)
        if y0.shape != (n_agents,):
            raise ValueError(f"y0 must have shape ({n_agents},)")
        scores[:, 0] = y0 / gamma_rate
        scores[:, 1] = -y0 / gamma_rate
    return DiscreteState(scores=scores, step=0)


def discrete_step(
    state: DiscreteState, table: StrategyTable, params: GameParams, rng: np.random.Generator
) -> DiscreteState:
    """Play one round; returns the successor state, never mutates the input."""
    n = params.n_agents
    state_idx = int(rng.integers(table.n_states))
    p_first = choice_probability(state.scores[:, 0], state.scores[:, 1], params.gamma_rate)
    picks_first = rng.random(n) < p_first
    chosen = np.where(picks_first, table.actions[state_idx, :, 0], table.actions[state_idx, :, 1])
    crowd = float(chosen.sum(dtype=np.int64))
    scores = state.scores - table.actions[state_idx].astype(np.float64) * (crowd / n)
    return DiscreteState(scores=scores, step=state.step + 1)


def run_discrete(
    params: GameParams,
    table: StrategyTable,
    n_steps: int,
    record_every: int = 1,
    y0: np.ndarray | None = None,
    stream: int = STREAM_DISCRETE,
) -> Trajectory:
    """Run n_steps rounds, recording the rescaled coordinates.

    Recorded times are in the scores' own units (round index / N).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n = params.n_agents
    n_records = n_steps // record_every + 1
    guard_allocation(n_records, 1, n)
    rng = make_rng(params.seed, stream)
    state = initial_state(n, params.gamma_rate, y0)

    times = np.empty(n_records)
    values = np.empty((n_records, n))
    times[0] = 0.0
    values[0] = rescaled_coordinates(state, params.gamma_rate)
    rec = 1
    for step in range(1, n_steps + 1):
        state = discrete_step(state, table, params, rng)
        if step % record_every == 0:
            times[rec] = step / n
            values[rec] = rescaled_coordinates(state, params.gamma_rate)
            rec += 1
    return Trajectory(
        times=times[:rec],
        values=values[:rec],
        coords=list(range(n)),
        meta={
            "kind": "discrete",
            "n_agents": n,
            "n_states": params.n_states,
            "gamma_rate": params.gamma_rate,
            "seed": params.seed,
            "n_steps": n_steps,
            "record_every": record_every,
        },
    )


def _chunked_draws(table, params, y, n_draws, rng):
    """Yield (state rows of action_diff, bias values, sign matrix) per chunk."""
    n = params.n_agents
    p_first = expit(2.0 * np.asarray(y, dtype=np.float64))
    done = 0
    while done < n_draws:
        m = min(_MC_CHUNK, n_draws - done)
        states = rng.integers(0, table.n_states, size=m)
        signs = np.where(rng.random((m, n)) < p_first, 1.0, -1.0)
        diff_rows = table.action_diff[states].astype(np.float64)
        bias_vals = table.action_bias[states].astype(np.float64)
        yield diff_rows, bias_vals, signs
        done += m


def increment_moments(
    table: StrategyTable,
    params: GameParams,
    y: np.ndarray,
    n_draws: int,
    stream=STREAM_MCSAMPLER,
):
    """Monte Carlo mean and standard error of the one-round increment of y.

    The game is held at fixed coordinates y (scores never move); each draw
    samples one round's state and choices.  Returns (mean, sem), both (N,),
    of the per-round increment of y_i.
    """
    n = params.n_agents
    rng = make_rng(params.seed, *np.atleast_1d(stream))
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    total = 0
    for diff_rows, bias_vals, signs in _chunked_draws(table, params, y, n_draws, rng):
        crowd = bias_vals + np.einsum("ki,ki->k", diff_rows, signs)
        incr = diff_rows * crowd[:, None] * (-params.gamma_rate / n)
        s1 += incr.sum(axis=0)
        s2 += (incr * incr).sum(axis=0)
        total += diff_rows.shape[0]
    mean = s1 / total
    var = np.maximum(s2 / total - mean * mean, 0.0)
    sem = np.sqrt(var / total)
    return mean, sem


def attendance_second_moment(
    table: StrategyTable,
    params: GameParams,
    y: np.ndarray,
    n_draws: int,
    stream=STREAM_MCSAMPLER,
):
    """Monte Carlo mean and standard error of the squared crowd action at fixed y."""
    rng = make_rng(params.seed, *np.atleast_1d(stream))
    s1 = 0.0
    s2 = 0.0
    total = 0
    for diff_rows, bias_vals, signs in _chunked_draws(table, params, y, n_draws, rng):
        crowd = bias_vals + np.einsum("ki,ki->k", diff_rows, signs)
        sq = crowd * crowd
        s1 += sq.sum()
        s2 += (sq * sq).sum()
        total += sq.shape[0]
    mean = s1 / total
    var = max(s2 / total - mean * mean, 0.0)
    return mean, np.sqrt(var / total)
