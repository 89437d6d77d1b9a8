"""Sequential game rounds: choice law, score bookkeeping, increment moments."""

import math

import numpy as np
import pytest

from mglab.discrete import (
    attendance_second_moment,
    choice_probability,
    discrete_step,
    increment_moments,
    initial_state,
    rescaled_coordinates,
    run_discrete,
)
from mglab.rng import make_rng
from mglab.sde import DriftSpec, drift
from mglab.strategies import GameParams, _table_from_actions, compute_overlaps, sample_strategies


def test_choice_probability_symmetric_point():
    assert choice_probability(0.0, 0.0, 1.0) == 0.5
    assert choice_probability(3.0, 3.0, 0.25) == 0.5


def test_choice_probability_frozen_logistic_value():
    # gamma * (U1 - U2) = 2; logistic oracle 1/(1 + e^-2)
    p = choice_probability(1.0, 0.0, 2.0)
    assert abs(p - 0.8807970779778823) < 1e-15
    assert abs(p - 1.0 / (1.0 + math.exp(-2.0))) < 1e-15


def test_choice_probability_saturates_without_overflow():
    with np.errstate(all="raise"):
        assert choice_probability(1e7, -1e7, 2.0) == 1.0
        assert choice_probability(-1e7, 1e7, 2.0) == 0.0
        big = choice_probability(np.array([1e6, -1e6, 0.0]), 0.0, 1e3)
    assert np.all(np.isfinite(big))
    assert big[0] == 1.0 and big[1] == 0.0 and big[2] == 0.5


def test_choice_probability_rejects_bad_rate():
    with pytest.raises(ValueError):
        choice_probability(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        choice_probability(0.0, 0.0, -2.0)


def test_initial_state_roundtrip_and_shape_check():
    y0 = np.array([1.0, -0.5, 0.25, 0.0])
    state = initial_state(4, 0.5, y0)
    assert np.array_equal(rescaled_coordinates(state, 0.5), y0)
    y1 = np.array([0.7, -0.1, 0.2])
    state = initial_state(3, 0.3, y1)
    assert np.allclose(rescaled_coordinates(state, 0.3), y1, rtol=1e-15)
    with pytest.raises(ValueError):
        initial_state(3, 1.0, np.zeros(4))


def test_single_agent_round_bookkeeping():
    """With one agent the crowd is the agent itself.

    The played strategy always charges itself -1/N * (own action)^2 = -1,
    and a flat strategy pair (xi = 0) cannot move the coordinate.
    """
    params = GameParams(n_agents=1, n_states=1, gamma_rate=1.0, seed=0)

    opposed = np.array([[[1, -1]]], dtype=np.int8)
    table = _table_from_actions(opposed, seed=0)
    state = discrete_step(initial_state(1, 1.0), table, params, make_rng(0, 50))
    delta = state.scores[0]
    assert sorted(delta.tolist()) == [-1.0, 1.0]
    assert abs(rescaled_coordinates(state, 1.0)[0]) == 1.0

    flat = np.array([[[1, 1]]], dtype=np.int8)
    table = _table_from_actions(flat, seed=0)
    state = discrete_step(initial_state(1, 1.0), table, params, make_rng(0, 51))
    assert np.array_equal(state.scores[0], [-1.0, -1.0])
    assert rescaled_coordinates(state, 1.0)[0] == 0.0


def test_round_charges_every_strategy_with_the_same_crowd():
    # reconstruct the drawn state and crowd from the score deltas, then
    # check the per-agent conservation rule of the score sum
    params = GameParams(n_agents=4, n_states=4, gamma_rate=1.0, seed=2)
    table = sample_strategies(params)
    state0 = initial_state(4, 1.0, np.array([0.3, -0.2, 0.5, 0.1]))
    state1 = discrete_step(state0, table, params, make_rng(2, 60))
    delta = state1.scores - state0.scores

    matches = []
    for mu in range(table.n_states):
        a = table.actions[mu].astype(np.float64)
        cand = -delta * params.n_agents / a
        if np.allclose(cand, cand.ravel()[0], rtol=0.0, atol=1e-12):
            matches.append((mu, cand.ravel()[0]))
    assert matches, "no state row is consistent with the observed deltas"
    mu, crowd = matches[0]
    assert crowd == int(crowd) and abs(crowd) <= params.n_agents
    # crowd parity equals agent-count parity (every action is +-1)
    assert (int(crowd) - params.n_agents) % 2 == 0

    omega = table.actions[mu].astype(np.int64).sum(axis=1) // 2
    expected_sum = -2.0 * omega * crowd / params.n_agents
    assert np.allclose(delta.sum(axis=1), expected_sum, atol=1e-12)
    # opposed strategy pairs conserve their agent's score sum exactly
    assert np.all(delta.sum(axis=1)[omega == 0] == 0.0)


def test_step_does_not_mutate_input_state():
    params = GameParams(n_agents=4, n_states=4, gamma_rate=1.0, seed=2)
    table = sample_strategies(params)
    state0 = initial_state(4, 1.0)
    before = state0.scores.copy()
    discrete_step(state0, table, params, make_rng(2, 61))
    assert np.array_equal(state0.scores, before)
    assert state0.step == 0


def test_run_discrete_recording_grid():
    params = GameParams(n_agents=8, n_states=8, gamma_rate=1.0, seed=1)
    table = sample_strategies(params)
    traj = run_discrete(params, table, n_steps=50, record_every=10)
    assert traj.n_records == 6
    assert traj.times[0] == 0.0
    assert traj.times[1] == 10 / 8
    assert traj.values.shape == (6, 8)
    assert traj.meta["kind"] == "discrete"

    two = run_discrete(params, table, n_steps=50, record_every=50)
    assert two.n_records == 2
    assert two.times[-1] == 50 / 8


def test_run_discrete_rejects_bad_arguments():
    params = GameParams(n_agents=4, n_states=4, gamma_rate=1.0, seed=0)
    table = sample_strategies(params)
    with pytest.raises(ValueError):
        run_discrete(params, table, n_steps=0)
    with pytest.raises(ValueError):
        run_discrete(params, table, n_steps=10, record_every=0)


def test_run_discrete_reproducible_and_stream_keyed():
    params = GameParams(n_agents=8, n_states=8, gamma_rate=1.0, seed=5)
    table = sample_strategies(params)
    a = run_discrete(params, table, n_steps=200, record_every=20)
    b = run_discrete(params, table, n_steps=200, record_every=20)
    c = run_discrete(params, table, n_steps=200, record_every=20, stream=9)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.times, b.times)
    assert not np.array_equal(a.values, c.values)


def test_run_discrete_allocation_guard():
    params = GameParams(n_agents=1000, n_states=1, gamma_rate=1.0, seed=0)
    with pytest.warns(RuntimeWarning):
        table = sample_strategies(params)
    with pytest.raises(ValueError, match="recording buffer"):
        run_discrete(params, table, n_steps=10**9)


def test_empirical_choice_rate_at_zero_scores():
    # all scores equal: both strategies equally likely, so the realized
    # crowd averages to the structural bias part alone
    params = GameParams(n_agents=16, n_states=16, gamma_rate=1.0, seed=7)
    table = sample_strategies(params)
    mean, sem = increment_moments(table, params, np.zeros(16), n_draws=100_000)
    predicted = -(params.gamma_rate / params.n_agents) * compute_overlaps(table).bias_overlap
    assert np.all(np.abs(mean - predicted) <= 5.0 * sem)


def test_increment_moments_match_drift_small_case():
    params = GameParams(n_agents=8, n_states=8, gamma_rate=0.5, seed=3)
    table = sample_strategies(params)
    spec = DriftSpec(compute_overlaps(table))
    y = np.array([0.4, -1.0, 0.0, 2.0, -0.3, 0.7, 1.5, -2.2])
    mean, sem = increment_moments(table, params, y, n_draws=200_000)
    predicted = -(params.gamma_rate / params.n_agents) * drift(spec, y)
    assert np.all(np.abs(mean - predicted) <= 5.0 * sem)
    assert np.all(sem > 0)


def test_attendance_moment_saturated_scores():
    # far-out coordinates pin every choice, leaving only the state draw random
    params = GameParams(n_agents=6, n_states=5, gamma_rate=1.0, seed=4)
    table = sample_strategies(params)
    y = np.full(6, 40.0)
    diff = table.action_diff.astype(np.float64)
    theta = table.action_bias.astype(np.float64)
    exact = float(np.mean((theta + diff.sum(axis=1)) ** 2))
    mc, sem = attendance_second_moment(table, params, y, n_draws=60_000)
    assert abs(mc - exact) <= 4.0 * max(sem, 1e-12)


def test_moment_sampling_deterministic():
    params = GameParams(n_agents=8, n_states=8, gamma_rate=1.0, seed=3)
    table = sample_strategies(params)
    y = np.linspace(-1, 1, 8)
    m1, s1 = increment_moments(table, params, y, n_draws=30_000)
    m2, s2 = increment_moments(table, params, y, n_draws=30_000)
    m3, _ = increment_moments(table, params, y, n_draws=30_000, stream=(5, 1))
    assert np.array_equal(m1, m2)
    assert np.array_equal(s1, s2)
    assert not np.array_equal(m1, m3)
