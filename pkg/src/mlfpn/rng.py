"""Deterministic parameter initialisation.

Every layer draws from its own counter-based SplitMix64 stream keyed by
``(seed, layer name)``: element ``i`` of layer ``name`` is

    z = key + (i + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

with ``key = seed ^ blake2b_64(name)``. The top 53 bits of ``z`` give a
uniform double in [0, 1). Keying by name means a layer's values never
depend on which other layers exist, so networks that share a layer
prefix (e.g. different TUM counts) share those parameters bit-exactly.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def layer_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(name.encode(), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & 0xFFFFFFFFFFFFFFFF


def splitmix64(key: int, count: int) -> np.ndarray:
    """``count`` raw 64-bit outputs of the stream starting at ``key``."""
    with np.errstate(over="ignore"):
        z = np.uint64(key) + (np.arange(1, count + 1, dtype=np.uint64) * _GOLDEN)
        return _mix(z)


def uniform(key: int, count: int) -> np.ndarray:
    """Doubles uniform in [0, 1)."""
    return (splitmix64(key, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def glorot_uniform(seed: int, name: str, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    u = uniform(layer_key(seed, name), int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)
