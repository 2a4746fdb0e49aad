"""Deterministic random substreams.

Every replicate gets its own ``SeedSequence`` keyed by (master seed,
replicate index, attempt), so results never depend on how replicates are
scheduled across workers.  Within a hybrid replicate the reference-process
arrivals, the marks and each Wiener channel draw from separate children.
"""

from __future__ import annotations

import numpy as np

ARRIVALS = 0
MARKS = 1
WIENER0 = 2


def replicate_seed(master_seed: int, replicate: int, attempt: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate), int(attempt)))


def substream(seed: np.random.SeedSequence, index: int) -> np.random.Generator:
    child = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (index,))
    return np.random.Generator(np.random.PCG64(child))


def ssa_generator(master_seed: int, replicate: int = 0) -> np.random.Generator:
    return substream(replicate_seed(master_seed, replicate), 0)


class HybridStreams:
    """Named substreams for one attempt of one hybrid replicate."""

    def __init__(self, master_seed: int, replicate: int = 0, attempt: int = 0):
        self.master_seed = int(master_seed)
        self.replicate = int(replicate)
        self.attempt = int(attempt)
        self.seed = replicate_seed(master_seed, replicate, attempt)
        self.arrivals = substream(self.seed, ARRIVALS)
        self.marks = substream(self.seed, MARKS)
        self._wiener: dict[int, np.random.Generator] = {}

    def wiener(self, channel: int) -> np.random.Generator:
        if channel not in self._wiener:
            self._wiener[channel] = substream(self.seed, WIENER0 + channel)
        return self._wiener[channel]

    def next_attempt(self) -> "HybridStreams":
        return HybridStreams(self.master_seed, self.replicate, self.attempt + 1)
