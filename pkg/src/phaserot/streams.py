"""Seeded, splittable random streams.

Every draw in a simulation comes from a stream addressed by
``(master_seed, point_id, shard_id, source)``. The address is fed to
:class:`numpy.random.SeedSequence` as a spawn key, so a shard's draws do not
depend on which worker runs it or on how many shards precede it. The mapping
below is part of the reproducibility contract; append, never renumber.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SOURCE_TAGS = {"symbols": 0, "phase": 1, "noise": 2, "design": 3, "search": 4}


def substream(master_seed: int, point_id: int, shard_id: int, source: str) -> np.random.Generator:
    try:
        tag = SOURCE_TAGS[source]
    except KeyError:
        raise ValueError(f"unknown random source {source!r}") from None
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(point_id), int(shard_id), tag))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ShardStreams:
    master_seed: int
    point_id: int
    shard_id: int

    @property
    def symbols(self) -> np.random.Generator:
        return substream(self.master_seed, self.point_id, self.shard_id, "symbols")

    @property
    def phase(self) -> np.random.Generator:
        return substream(self.master_seed, self.point_id, self.shard_id, "phase")

    @property
    def noise(self) -> np.random.Generator:
        return substream(self.master_seed, self.point_id, self.shard_id, "noise")
