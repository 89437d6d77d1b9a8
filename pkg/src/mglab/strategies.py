"""Strategy tables and overlap statistics for the two-strategy minority game.

Each of the N agents holds two fixed lookup tables ("strategies") assigning
an action in {-1, +1} to every one of the P information states.  Entries are
i.i.d. fair coin flips, drawn once per seed and then frozen.  Everything the
dynamics needs from the table is carried by two reductions:

* ``action_diff``  -- half the difference of the two strategies, per
  (state, agent); takes values in {-1, 0, +1}.
* ``action_bias``  -- per state, the summed average action of all agents,
  i.e. the part of the crowd's move that no score can influence.

State-averaged products of these reductions (the overlap vector and the
overlap Gram matrix) are the quenched coefficients of the score dynamics.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import STREAM_STRATEGIES, make_rng

# Phase boundary of the reduced two-strategy game: below this ratio of
# states per agent the stationary regime is not the one modelled here.
ALPHA_CRITICAL = 0.3374

_CACHE_MAGIC = b"MGST"
_CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIQQq")


@dataclass(frozen=True)
class GameParams:
    """Sizes and rates of one game instance.

    ``alpha`` is always the exact ratio n_states / n_agents of the stored
    integers, so round-tripping through a config file cannot drift.
    """

    n_agents: int
    n_states: int
    gamma_rate: float
    seed: int

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if not self.gamma_rate > 0:
            raise ValueError("gamma_rate must be > 0")

    @classmethod
    def from_alpha(cls, n_agents: int, alpha: float, gamma_rate: float, seed: int) -> "GameParams":
        """Build params from a target state/agent ratio.

        n_states is rounded to the nearest integer >= 1; the stored ratio is
        recomputed from the integers and may differ from the request.
        """
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        n_states = max(1, round(alpha * n_agents))
        return cls(n_agents=n_agents, n_states=n_states, gamma_rate=gamma_rate, seed=seed)

    @property
    def alpha(self) -> float:
        return self.n_states / self.n_agents

    @property
    def asymmetric_phase_ok(self) -> bool:
        """True when the state/agent ratio sits above the phase boundary."""
        return self.alpha > ALPHA_CRITICAL


@dataclass(frozen=True)
class StrategyTable:
    """Frozen strategy draw for one seed.

    actions      -- (n_states, n_agents, 2) int8 in {-1, +1}; index 0 along
                    the last axis is the strategy whose score enters the
                    rescaled coordinate with positive sign.
    action_diff  -- (n_states, n_agents) int8, (actions[...,0]-actions[...,1])/2.
    action_bias  -- (n_states,) int64, sum over agents of the strategy average.
    """

    actions: np.ndarray
    action_diff: np.ndarray
    action_bias: np.ndarray
    seed: int

    @property
    def n_states(self) -> int:
        return self.actions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.actions.shape[1]


@dataclass(frozen=True)
class OverlapData:
    """State-averaged quenched coefficients derived from one table.

    bias_overlap -- (N,) vector, mean over states of action_diff * action_bias.
    gram         -- (N, N) matrix, mean over states of pairwise action_diff
                    products.  A Gram matrix, hence symmetric PSD; diagonal
                    entries lie in [0, 1] and concentrate at 1/2.
    """

    bias_overlap: np.ndarray
    gram: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.bias_overlap.shape[0]


def sample_strategies(params: GameParams) -> StrategyTable:
    """Draw the i.i.d. +-1 strategy table for ``params.seed``.

    Same params give a bit-identical table.  Emits a RuntimeWarning when the
    requested ratio sits at or below the phase boundary; the draw itself is
    still valid there.
    """
    if not params.asymmetric_phase_ok:
        warnings.warn(
            f"alpha={params.alpha:.4f} is not above the phase boundary "
            f"{ALPHA_CRITICAL}; stationarity results are out of their regime",
            RuntimeWarning,
            stacklevel=2,
        )
    rng = make_rng(params.seed, STREAM_STRATEGIES)
    actions = rng.integers(0, 2, size=(params.n_states, params.n_agents, 2), dtype=np.int8)
    actions = (2 * actions - 1).astype(np.int8)
    return _table_from_actions(actions, params.seed)


def _table_from_actions(actions: np.ndarray, seed: int) -> StrategyTable:
    a16 = actions.astype(np.int16)
    diff = ((a16[:, :, 0] - a16[:, :, 1]) // 2).astype(np.int8)
    bias = ((a16[:, :, 0] + a16[:, :, 1]) // 2).astype(np.int64).sum(axis=1)
    return StrategyTable(actions=actions, action_diff=diff, action_bias=bias, seed=seed)


def compute_overlaps(table: StrategyTable) -> OverlapData:
    """State-averaged overlap vector and Gram matrix of a table.

    Accumulation runs in float64; the inputs are small integers, so the
    products are exact and the Gram matrix is PSD up to one rounding per
    entry.
    """
    diff = table.action_diff.astype(np.float64)
    bias = table.action_bias.astype(np.float64)
    n_states = table.n_states
    gram = diff.T @ diff / n_states
    bias_overlap = diff.T @ bias / n_states
    return OverlapData(bias_overlap=bias_overlap, gram=gram)


def save_strategy_cache(table: StrategyTable, path) -> None:
    """Write a table to the binary cache format (see docs/strategy-cache.md)."""
    bits = np.packbits((table.actions.reshape(-1) > 0).astype(np.uint8))
    header = _CACHE_HEADER.pack(
        _CACHE_MAGIC, _CACHE_VERSION, table.n_states, table.n_agents, table.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def load_strategy_cache(path) -> StrategyTable:
    """Read a table back; derived arrays are recomputed, never trusted."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CACHE_HEADER.size:
        raise ValueError("strategy cache truncated: header incomplete")
    magic, version, n_states, n_agents, seed = _CACHE_HEADER.unpack_from(raw)
    if magic != _CACHE_MAGIC:
        raise ValueError(f"not a strategy cache (magic {magic!r})")
    if version != _CACHE_VERSION:
        raise ValueError(f"unsupported strategy cache version {version}")
    n_bits = n_states * n_agents * 2
    payload = np.frombuffer(raw, dtype=np.uint8, offset=_CACHE_HEADER.size)
    if payload.size * 8 < n_bits:
        raise ValueError("strategy cache truncated: payload shorter than header promises")
    bits = np.unpackbits(payload)[:n_bits]
    actions = (2 * bits.astype(np.int8) - 1).reshape(n_states, n_agents, 2)
    return _table_from_actions(actions, int(seed))
