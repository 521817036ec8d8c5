"""Deterministic RNG: Philox counter-based generator with explicit streams.

(seed, stream) fully determines the sequence on every platform. Parallel work
derives child streams with substream(); the derivation goes through
SeedSequence spawn keys, so distinct (stream, i) pairs never collide.
"""

import numpy as np


class Rng:
    algorithm = "philox4x64"

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def substream(self, i):
        # children are separated far from sequential parent streams
        return Rng(self.seed, (self.stream << 20) + int(i) + 1)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
