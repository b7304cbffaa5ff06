"""Counter-based random number streams.

Every stochastic quantity in the pipeline (pose generation, detector noise,
diffusion noise, weight init, batch shuffling) is drawn from an `RngStream`
identified by a 64-bit (seed, stream_id) pair.  Streams with distinct ids are
statistically independent, and a stream replays the identical sequence for
the same (seed, stream_id, call order), which is what makes full pipeline
runs bit-reproducible.

Backed by numpy's Philox counter-based generator: the key is
(seed, stream_id) and every call occupies its own 2^128-sized block of the
256-bit counter space, so a draw never depends on how many values earlier
calls consumed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def mix64(*values: int) -> int:
    """Mix integers into a single 64-bit id (splitmix64 finalizer chain).

    Used to derive collision-resistant stream ids from structured keys such
    as (purpose tag, sample index).
    """
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = (h + (int(v) & _MASK64)) & _MASK64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & _MASK64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _MASK64
        h ^= h >> 31
    return h


def tag(name: str) -> int:
    """Stable 64-bit id for a purpose label, e.g. tag("train-shuffle")."""
    return mix64(*name.encode("utf-8"))


class RngStream:
    """One reproducible stream of random draws.

    Attributes:
        seed: run-level seed shared by all streams of a pipeline run.
        stream_id: identifies this stream within the run.
        counter: number of calls made so far (each call gets a fresh
            counter block, so replaying the same call sequence replays the
            same values).
    """

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)

    def _next_generator(self) -> np.random.Generator:
        block = np.array([0, 0, self.counter, 0], dtype=np.uint64)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(counter=block, key=key))

    def gaussian(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """I.i.d. standard normal draws of the given shape (float64)."""
        return self._next_generator().standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._next_generator().uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high] inclusive."""
        return self._next_generator().integers(low, high, size=shape, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def substream(self, *keys: int) -> "RngStream":
        """Independent child stream addressed by structured keys."""
        return RngStream(self.seed, mix64(self.stream_id, *keys))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"
