"""Counter-based Gaussian noise streams.

Every draw is a pure function of ``(master_seed, stream_index, counter)``.
A stream is a flat sequence of standard normals: normal ``j`` is lane
``j % 4`` of the Philox4x64-10 block with counter ``(j // 4, 0, 0, 0)``
under the key ``(master_seed, stream_index)``, the four 64-bit words of a
block becoming four normals through two Box-Muller transforms.  Logical
draw ``counter`` of size ``m`` is normals ``counter*m .. counter*m + m-1``.

The compiled kernels implement the same layout, so a stream can be
replayed from Python to audit a run produced by the fast path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

PHILOX_M0 = 0xD2E7470EE14C6C93
PHILOX_M1 = 0xCA5A826395121157
PHILOX_W0 = 0x9E3779B97F4A7C15
PHILOX_W1 = 0xBB67AE8584CAA73B
PHILOX_ROUNDS = 10

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi


class StreamError(RuntimeError):
    """Raised for an invalid or exhausted noise stream."""


def _mulhilo(a, b):
    # 64x64 -> 128 bit product on uint64 arrays, split into 32-bit limbs
    a_lo, a_hi = a & _M32, a >> _S32
    b_lo, b_hi = b & _M32, b >> _S32
    ll = a_lo * b_lo
    hl = a_hi * b_lo
    lh = a_lo * b_hi
    hh = a_hi * b_hi
    cross = (ll >> _S32) + (hl & _M32) + (lh & _M32)
    hi = hh + (hl >> _S32) + (lh >> _S32) + (cross >> _S32)
    lo = a * b
    return hi, lo


def philox4x64(c0, c1, c2, c3, k0, k1):
    """Vectorised Philox4x64-10 on uint64 arrays (broadcastable).

    Returns the four output words as a tuple of uint64 arrays.
    """
    with np.errstate(over="ignore"):
        x0, x1, x2, x3 = (np.asarray(v, dtype=np.uint64) for v in (c0, c1, c2, c3))
        k0 = np.asarray(k0, dtype=np.uint64)
        k1 = np.asarray(k1, dtype=np.uint64)
        m0 = np.uint64(PHILOX_M0)
        m1 = np.uint64(PHILOX_M1)
        w0 = np.uint64(PHILOX_W0)
        w1 = np.uint64(PHILOX_W1)
        for r in range(PHILOX_ROUNDS):
            if r:
                k0 = k0 + w0
                k1 = k1 + w1
            hi0, lo0 = _mulhilo(m0, x0)
            hi1, lo1 = _mulhilo(m1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return x0, x1, x2, x3


def _box_muller(wa, wb):
    u1 = ((wa >> _S11).astype(np.float64) + 1.0) * _TWO_M53
    u2 = (wb >> _S11).astype(np.float64) * _TWO_M53
    r = np.sqrt(-2.0 * np.log(u1))
    t = _TWO_PI * u2
    return r * np.cos(t), r * np.sin(t)


def _blocks(k0, stream, block):
    w0, w1, w2, w3 = philox4x64(block, np.zeros_like(block), np.zeros_like(block),
                                np.zeros_like(block), k0, stream)
    z0, z1 = _box_muller(w0, w1)
    z2, z3 = _box_muller(w2, w3)
    return np.stack([z0, z1, z2, z3], axis=-1)


def normals(master_seed, stream_index, counter, m):
    """Standard normals of logical draw ``counter`` (size ``m``).

    ``stream_index`` and ``counter`` broadcast against each other; the
    result has shape ``broadcast_shape + (m,)``.
    """
    k0 = np.uint64(int(master_seed) & MASK64)
    s = np.asarray(stream_index, dtype=np.uint64)
    c = np.asarray(counter, dtype=np.uint64)
    s, c = np.broadcast_arrays(s, c)
    with np.errstate(over="ignore"):
        flat = c[..., None] * np.uint64(m) + np.arange(m, dtype=np.uint64)
    block = flat >> np.uint64(2)
    lane = (flat & np.uint64(3)).astype(np.intp)
    first = block[..., :1]
    nblk = int((block - first).max()) + 1 if block.size else 1
    vals = np.stack([_blocks(k0, s[..., None], first + np.uint64(b)) for b in range(nblk)],
                    axis=-2)[..., 0, :, :]
    rel = (block - first).astype(np.intp)
    return np.take_along_axis(vals.reshape(vals.shape[:-2] + (4 * nblk,)),
                              rel * 4 + lane, axis=-1)


@dataclass
class NoiseStream:
    """Replayable sequence of Gaussian draws.

    ``counter`` is the number of logical draws already consumed.  Two
    streams with the same ``(master_seed, stream_index)`` produce the same
    sequence; ``reset`` or ``fork`` give cheap replays and siblings.
    """

    master_seed: int
    stream_index: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= MASK64:
            raise StreamError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if not 0 <= int(self.stream_index) <= MASK64:
            raise StreamError(f"stream_index must fit in 64 bits, got {self.stream_index}")
        if self.counter < 0:
            raise StreamError(f"counter must be non-negative, got {self.counter}")
        if self.counter > MASK64:
            raise StreamError("stream exhausted")

    @property
    def key(self) -> tuple[int, int]:
        return int(self.master_seed), int(self.stream_index)

    def draw(self, m: int) -> np.ndarray:
        """Next logical draw of ``m`` standard normals; advances by one."""
        if self.counter > MASK64:
            raise StreamError("stream exhausted")
        z = normals(self.master_seed, self.stream_index, self.counter, m)
        self.counter += 1
        return z

    def peek(self, m: int, offset: int = 0) -> np.ndarray:
        return normals(self.master_seed, self.stream_index, self.counter + offset, m)

    def draws(self, count: int, m: int) -> np.ndarray:
        """``count`` consecutive draws as a ``(count, m)`` array; advances."""
        if self.counter + count - 1 > MASK64:
            raise StreamError("stream exhausted")
        z = normals(self.master_seed, self.stream_index,
                    np.arange(self.counter, self.counter + count, dtype=np.uint64), m)
        self.counter += count
        return z

    def reset(self, counter: int = 0) -> NoiseStream:
        self.counter = counter
        return self

    def copy(self) -> NoiseStream:
        return NoiseStream(self.master_seed, self.stream_index, self.counter)

    def fork(self, stream_index: int) -> NoiseStream:
        return NoiseStream(self.master_seed, stream_index, 0)
