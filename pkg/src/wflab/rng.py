"""Counter-based splittable random streams.

Every draw is a pure function of (seed, stream, counter), so per-path streams
are reproducible independently of worker count or evaluation order.  The mixer
is the splitmix64 finalizer; streams are keyed by hashing the path index into
the seed.  Scalar (python int) and vectorized (numpy uint64) implementations
must stay bit-identical; tests enforce this.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_STREAM_SALT = 0xD2B74407B1CE6E93

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)

# 53-bit mantissa scaling; (x >> 11) * 2^-53 lies in [0, 1)
_INV53 = 2.0 ** -53


def mix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z ^= z >> 30
    z = (z * _MIX1) & _MASK
    z ^= z >> 27
    z = (z * _MIX2) & _MASK
    z ^= z >> 31
    return z


def stream_key(seed: int, stream: int) -> int:
    """64-bit key for one logical stream (one simulated path)."""
    return mix64((seed & _MASK) ^ ((stream * _STREAM_SALT) & _MASK))


def draw_u64(key: int, counter: int) -> int:
    return mix64((key + counter * _GOLDEN) & _MASK)


def draw_unit(key: int, counter: int) -> float:
    """Uniform in [0, 1)."""
    return (draw_u64(key, counter) >> 11) * _INV53


def draw_open_unit(key: int, counter: int) -> float:
    """Uniform in (0, 1); safe as a log() argument."""
    return ((draw_u64(key, counter) >> 11) + 0.5) * _INV53


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z + _U64_GOLDEN).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z *= _U64_MIX1
    z ^= z >> np.uint64(27)
    z *= _U64_MIX2
    z ^= z >> np.uint64(31)
    return z


def stream_keys(seed: int, streams: np.ndarray) -> np.ndarray:
    """Vectorized stream_key over an array of stream indices."""
    s = streams.astype(np.uint64) * np.uint64(_STREAM_SALT)
    return _mix64_array(np.uint64(seed & _MASK) ^ s)


def draws_unit(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Vectorized uniform in [0, 1) for (key, counter) pairs."""
    z = _mix64_array(keys + counters.astype(np.uint64) * _U64_GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def draws_open_unit(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Vectorized uniform in (0, 1)."""
    z = _mix64_array(keys + counters.astype(np.uint64) * _U64_GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53
