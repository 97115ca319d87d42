"""Deterministic random-stream derivation.

Every source of randomness in the simulator is a PCG64 stream keyed by a
tuple of integers mixed down from one master seed. Streams are random-access:
restoring a snapshot re-creates a stream and advances it by the number of
64-bit draws already consumed (PCG64 consumes exactly one draw per float64).
"""

from __future__ import annotations

import numpy as np

# Stream tags. Values are arbitrary but frozen: changing them changes every
# simulated trajectory.
TAG_CATALOG = 0x01
TAG_POPULATION = 0x02
TAG_ENV = 0x03
TAG_CUSTOMER = 0x04
TAG_POLICY = 0x05
TAG_BATCH = 0x06
TAG_EPISODE = 0x07
TAG_TUNE = 0x08
TAG_SIM = 0x09
TAG_SUBSAMPLE = 0x0A

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix_key(*parts: int) -> int:
    """Mix integer parts into a 128-bit stream key."""
    lo = 0
    for p in parts:
        lo = _splitmix64(lo ^ (int(p) & _MASK))
    hi = _splitmix64(lo ^ 0xD6E8FEB86659FD93)
    return (hi << 64) | lo


def stream(*parts: int) -> np.random.Generator:
    """A fresh generator for the stream identified by ``parts``."""
    return np.random.Generator(np.random.PCG64(mix_key(*parts)))


def advanced_stream(skip: int, *parts: int) -> np.random.Generator:
    """Like :func:`stream` but with the first ``skip`` float64 draws consumed."""
    gen = stream(*parts)
    if skip:
        gen.bit_generator.advance(int(skip))
    return gen
