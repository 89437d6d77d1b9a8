"""Recorded paths of the score coordinates.

All time axes are in the scores' own units: one unit is N elementary game
rounds of the sequential dynamics (see README, "Time conventions"), and the
stochastic integrator converts its internal clock to the same units before
recording.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Refuse to allocate recording buffers beyond this many float64 entries.
MAX_RECORD_ELEMENTS = 200_000_000


@dataclass
class Trajectory:
    """Single recorded path: times (S,), values (S, K) for K tracked coords."""

    times: np.ndarray
    values: np.ndarray
    coords: list
    meta: dict = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return self.times.shape[0]


@dataclass
class TrajectoryEnsemble:
    """Replica bundle: times (S,), values (S, R, K), one shared start point."""

    times: np.ndarray
    values: np.ndarray
    coords: list
    meta: dict = field(default_factory=dict)

    @property
    def n_replicas(self) -> int:
        return self.values.shape[1]

    def replica(self, r: int) -> Trajectory:
        return Trajectory(
            times=self.times, values=self.values[:, r, :], coords=self.coords, meta=dict(self.meta)
        )


def guard_allocation(n_records: int, n_replicas: int, n_coords: int) -> None:
    total = int(n_records) * int(n_replicas) * int(n_coords)
    if total > MAX_RECORD_ELEMENTS:
        raise ValueError(
            f"recording buffer of {total} values exceeds the {MAX_RECORD_ELEMENTS} guard; "
            "increase record_every or track fewer coordinates"
        )
