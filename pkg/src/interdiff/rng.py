"""Random streams.

Stream ``k`` of master seed ``s`` is ``PCG64(SeedSequence(s, spawn_key=(k,)))``.
Streams are addressed by index, so adding chains never perturbs existing ones.
Sub-streams nest: ``stream(s, 3, 1)`` is child 1 of chain 3.
"""
import numpy as np


def stream(seed: int, *index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(index))))
