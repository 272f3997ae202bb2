from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace

import numpy as np

# stream ids are part of the spawn key; never renumber
STREAMS = {"tree": 0, "walk": 1, "spine": 2, "mc": 3}


def name_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


def _stream_key(stream: str) -> int:
    return STREAMS[stream] if stream in STREAMS else name_key(stream)


@dataclass(frozen=True)
class SeedPath:
    """
    Address of one replica's randomness: seed = h(master, experiment, point, replica, stream).

    Every stream derived from the same path is independent of the others, so the tree of a
    replica can be fixed while its walk is varied.
    """

    master: int
    experiment: str = ""
    point: int = 0
    replica: int = 0

    def sequence(self, stream: str) -> np.random.SeedSequence:
        key = (name_key(self.experiment), int(self.point), int(self.replica), _stream_key(stream))
        return np.random.SeedSequence(entropy=int(self.master), spawn_key=key)

    def generator(self, stream: str) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(stream)))

    def py_random(self, stream: str) -> random.Random:
        state = self.sequence(stream).generate_state(2, dtype=np.uint64)
        return random.Random((int(state[0]) << 64) | int(state[1]))

    def seed_id(self, stream: str = "mc") -> int:
        """Stable u64 tag recorded in outputs."""
        return int(self.sequence(stream).generate_state(1, dtype=np.uint64)[0])

    def at(self, point: int | None = None, replica: int | None = None, experiment: str | None = None) -> "SeedPath":
        updates: dict = {}
        if point is not None:
            updates["point"] = point
        if replica is not None:
            updates["replica"] = replica
        if experiment is not None:
            updates["experiment"] = experiment
        return replace(self, **updates)
