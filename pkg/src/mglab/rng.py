"""Deterministic random streams keyed by (seed, stream ids)."""

from __future__ import annotations

import numpy as np

# Fixed stream ids so that unrelated parts of a run never share a stream.
STREAM_STRATEGIES = 0
STREAM_DISCRETE = 1
STREAM_SDE = 2
STREAM_PROBES = 3
STREAM_INIT = 4
STREAM_MCSAMPLER = 5


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for one named stream of a root seed.

    Distinct (seed, *stream) keys give statistically independent streams,
    and equal keys reproduce draws bit for bit. No wall-clock entropy.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
