"""Counter-based SplitMix64 streams.

Every random decision in this package is drawn from SplitMix64 (Steele, Lea &
Flood, "Fast splittable pseudorandom number generators", OOPSLA 2014) used in
counter mode. A stream is identified by a 64-bit key; its n-th output
(n = 0, 1, ...) is

    mix64(key + GOLDEN * (n + 1))   mod 2**64

with the standard SplitMix64 finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Uniform doubles take the top 53 bits: ``(x >> 11) * 2**-53`` in [0, 1).

Sub-streams are derived with :func:`split`, so epoch ``k`` of seed ``s`` has a
key that depends only on ``(s, purpose, k)``. This scheme is frozen: changing
any constant here changes every manifest ever produced.
"""
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / (1 << 53)

# purpose tags for split(); never renumber
PURPOSE_DRAW = 1
PURPOSE_EXPAND = 2
PURPOSE_SYNTH = 3
PURPOSE_REPLICATION = 4


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_value(key: int, n: int) -> int:
    """The n-th raw 64-bit output of stream ``key``."""
    return mix64(key + GOLDEN * (n + 1))


def split(key: int, index: int) -> int:
    """Key of child stream ``index`` of ``key``.

    The child key is ``mix64(mix64(key) ^ mix64(GOLDEN * (index + 1)))``; the
    double mixing keeps child keys decorrelated from the parent's own outputs.
    """
    return mix64(mix64(key) ^ mix64(GOLDEN * (index + 1)))


def derive_key(seed: int, *path: int) -> int:
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = seed
    for index in path:
        key = split(key, index)
    return key


def raw_block(key: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of stream ``key`` as uint64."""
    counters = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = np.uint64(key) + np.uint64(GOLDEN) * counters
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def uniform_block(key: int, start: int, count: int) -> np.ndarray:
    """Uniform doubles in [0, 1) from outputs ``start .. start+count-1``."""
    return (raw_block(key, start, count) >> np.uint64(11)).astype(np.float64) * INV_2_53
