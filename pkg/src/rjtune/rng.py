"""Seeded, splittable random streams.

A stream is identified by ``(seed, stream)``; the same pair always yields the
same sequence of draws, independently of how many workers run the job.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class RngHandle:
    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.stream < 0:
            raise ValueError(f"stream id must be non-negative, got {self.stream}")

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngHandle":
        return RngHandle(self.seed, stream)


RngLike = Union[RngHandle, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Coerce to a generator. Generators pass through so their state advances."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngHandle):
        return rng.generator()
    if rng is None:
        return np.random.default_rng()
    return RngHandle(int(rng)).generator()


def stream_index(*indices: int, sizes: tuple[int, ...]) -> int:
    """Row-major linear index of a multi-dimensional task id."""
    out = 0
    for i, s in zip(indices, sizes):
        if not 0 <= i < s:
            raise IndexError(f"task index {i} outside 0..{s - 1}")
        out = out * s + i
    return out
