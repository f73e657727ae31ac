"""Counter-based random streams.

Every random sample is addressed by ``(seed, stream, index)`` so that results
do not depend on how work is partitioned across chunks or threads.  Pixel
``i`` of a normal field consumes Philox outputs ``2i`` and ``2i + 1``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = 2**64
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0

# stream identifiers, part of the Philox key
STREAM_NOISE = 1
STREAM_PARAMS = 2


def derive_seed(master: int, *keys) -> int:
    """Hash a master seed and any number of keys into a fresh u64 seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master % _U64).to_bytes(8, "little"))
    for k in keys:
        h.update(b"\x00" + str(k).encode())
    return int.from_bytes(h.digest(), "little")


def _raw(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    key = np.array([seed % _U64, stream % _U64], dtype=np.uint64)
    block, skip = divmod(start, 4)
    gen = np.random.Philox(key=key, counter=block)
    return gen.random_raw(count + skip)[skip:]


def uniform_field(seed: int, n: int, *, stream: int = STREAM_NOISE, offset: int = 0) -> np.ndarray:
    """Uniform samples in [0, 1) for indices ``offset .. offset + n``."""
    bits = _raw(seed, stream, offset, n)
    return (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53


def normal_field(seed: int, n: int, *, stream: int = STREAM_NOISE, offset: int = 0) -> np.ndarray:
    """Standard normal samples for indices ``offset .. offset + n`` (Box-Muller)."""
    bits = _raw(seed, stream, 2 * offset, 2 * n)
    u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def param_generator(seed: int) -> np.random.Generator:
    """Sequential generator for scalar parameter draws, keyed off ``seed``."""
    key = np.array([seed % _U64, STREAM_PARAMS], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
