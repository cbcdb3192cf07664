"""Counter-based random streams.

Every stream is a SplitMix64 sequence started at a 64-bit key derived from
``(seed, stream_id)``: draw ``k`` is ``mix64(key + (k + 1) * GOLDEN)``. Since a
draw depends only on the key and its position, a batch of streams can be
advanced together with numpy arithmetic, and replicate ``i`` yields the same
numbers whether it runs alone, in a batch of 5000, or in a worker process.

All streams in a :class:`BatchRng` share one position counter, so callers
must consume draws on a data-independent schedule.
"""

from __future__ import annotations

import numpy as np
from scipy import special

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_MASK = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53

# Marsaglia-Tsang attempts drawn per gamma variate; for shape >= 1 the
# acceptance rate exceeds 0.95, leftovers fall back to the inverse CDF.
_GAMMA_TRIES = 4


def _mix64(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def mix64_int(x: int) -> int:
    """Scalar SplitMix64 finaliser on a Python int."""
    z = x & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_stream_id(*parts: int) -> int:
    """Fold a tuple of non-negative ints into one 64-bit stream id."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = mix64_int(h ^ mix64_int(int(p) + 0x9E3779B97F4A7C15))
    return h


def stream_key(seed: int, stream_id: int) -> int:
    return mix64_int(mix64_int(int(seed) & _MASK) ^ mix64_int((int(stream_id) + 1) & _MASK))


class BatchRng:
    """A batch of independent counter-based streams advanced in lockstep."""

    def __init__(self, seed: int, stream_ids):
        ids = np.atleast_1d(np.asarray(stream_ids, dtype=object))
        self.seed = int(seed)
        self.stream_ids = [int(s) for s in ids]
        self.keys = np.array([stream_key(seed, s) for s in self.stream_ids], dtype=np.uint64)
        self.counter = 0

    @property
    def size(self) -> int:
        return self.keys.shape[0]

    def subset(self, index) -> "BatchRng":
        """Streams ``index`` of this batch, at the same counter position."""
        out = BatchRng.__new__(BatchRng)
        out.seed = self.seed
        idx = np.arange(self.size)[index]
        out.stream_ids = [self.stream_ids[i] for i in np.atleast_1d(idx)]
        out.keys = self.keys[idx]
        out.counter = self.counter
        return out

    def raw(self, shape=()) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        k = int(np.prod(shape, dtype=np.int64)) if shape else 1
        ctr = np.arange(self.counter + 1, self.counter + 1 + k, dtype=np.uint64)
        self.counter += k
        with np.errstate(over="ignore"):
            z = self.keys[:, None] + ctr[None, :] * GOLDEN
        return _mix64(z).reshape((self.size,) + shape)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniforms on the open interval (0, 1), shape ``(batch,) + shape``."""
        return ((self.raw(shape) >> _S11).astype(np.float64) + 0.5) * _TWO_M53

    def normal(self, shape=()) -> np.ndarray:
        return special.ndtri(self.uniform(shape))

    def gamma(self, shape_param, shape=()) -> np.ndarray:
        """Gamma(shape_param, rate=1) draws; ``shape_param`` broadcasts to the output."""
        out_shape = (self.size,) + tuple(np.atleast_1d(shape) if shape != () else ())
        a = np.broadcast_to(np.asarray(shape_param, dtype=float), out_shape)
        boost = a < 1.0
        a1 = np.where(boost, a + 1.0, a)
        d = a1 - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        tail = out_shape[1:]
        z = self.normal(tail + (_GAMMA_TRIES,))
        u = self.uniform(tail + (_GAMMA_TRIES,))
        ub = self.uniform(tail)
        v = (1.0 + c[..., None] * z) ** 3
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (v > 0) & (np.log(u) < 0.5 * z * z + d[..., None] * (1.0 - v + np.log(v)))
        first = np.argmax(ok, axis=-1)
        found = np.take_along_axis(ok, first[..., None], axis=-1)[..., 0]
        vsel = np.take_along_axis(v, first[..., None], axis=-1)[..., 0]
        g = d * vsel
        if not np.all(found):
            miss = ~found
            g = np.where(miss, special.gammaincinv(a1, u[..., 0]), g)
        with np.errstate(divide="ignore"):
            g = np.where(boost, g * np.exp(np.log(ub) / np.where(boost, a, 1.0)), g)
        return g

    def beta(self, a, b, shape=()) -> np.ndarray:
        return special.betaincinv(a, b, self.uniform(shape))

    def binomial_counts(self, n: int, p, shape=()) -> np.ndarray:
        """Number of successes among ``n`` Bernoulli(p) trials, by summing uniforms."""
        tail = tuple(np.atleast_1d(shape)) if shape != () else ()
        u = self.uniform(tail + (n,))
        return np.sum(u < np.asarray(p, dtype=float)[..., None], axis=-1)


class RngStream:
    """Single counter-based stream; draws come back without the batch axis."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._batch = BatchRng(seed, [stream_id])

    @property
    def counter(self) -> int:
        return self._batch.counter

    def as_batch(self) -> BatchRng:
        """The underlying size-1 batch (shares state with this stream)."""
        return self._batch

    def uniform(self, shape=()):
        return self._batch.uniform(shape)[0]

    def normal(self, shape=()):
        return self._batch.normal(shape)[0]

    def gamma(self, shape_param, shape=()):
        a = np.asarray(shape_param, dtype=float)
        tail = tuple(np.atleast_1d(shape)) if shape != () else a.shape
        return self._batch.gamma(np.broadcast_to(a, tail)[None, ...], tail)[0]

    def beta(self, a, b, shape=()):
        return self._batch.beta(a, b, shape)[0]

    def binomial_counts(self, n: int, p, shape=()):
        p = np.asarray(p, dtype=float)
        tail = tuple(np.atleast_1d(shape)) if shape != () else p.shape
        return self._batch.binomial_counts(n, np.broadcast_to(p, tail)[None, ...], tail)[0]
