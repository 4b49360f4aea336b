"""Deterministic numeric substrate: FFT, the SplitMix64 mixer and RNG."""

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

_G = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def fft(x, inverse=False):
    """Unnormalised DFT along the last axis; the inverse divides by n.

    Any length is accepted (pocketfft is O(n log n) for every n, not just
    powers of two).
    """
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("fft of a zero-length vector")
    if inverse:
        return np.fft.ifft(x, axis=-1)
    return np.fft.fft(x, axis=-1)


def rfft(x):
    """Half-spectrum DFT of a real signal along the last axis."""
    return np.fft.rfft(x, axis=-1)


def irfft(X, n):
    return np.fft.irfft(X, n, axis=-1)


def _finalize(z):
    # z is a uint64 array; multiplications wrap modulo 2**64.
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def mix64(seed, index):
    """SplitMix64 finaliser of ``seed ^ (index * GOLDEN_GAMMA)``.

    Scalars give a Python int; arrays of indices give a uint64 array.
    """
    scalar = np.isscalar(index)
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _finalize(np.uint64(seed & _MASK64) ^ (idx * _G))
    return int(z) if scalar else z


def u64_to_unit(u):
    """Map uint64 words to doubles in [0, 1) using the top 53 bits."""
    return (np.asarray(u, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


class SplitMix64:
    """SplitMix64 generator: ``state += gamma; out = finalize(state)``.

    Draws are consumed in a pinned order so two generators with equal
    state always produce identical streams.
    """

    def __init__(self, state=0):
        self.state = int(state) & _MASK64

    def __repr__(self):
        return f"SplitMix64(state={self.state:#018x})"

    def copy(self):
        return SplitMix64(self.state)

    def fork(self, stream):
        """Independent generator keyed by ``stream``; does not advance self."""
        return SplitMix64(mix64(self.state, stream))

    def next_u64(self, n=None):
        count = 1 if n is None else int(n)
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = _finalize(np.uint64(self.state) + steps * _G)
        self.state = (self.state + count * GOLDEN_GAMMA) & _MASK64
        return int(z[0]) if n is None else z

    def uniform(self, size, lo=0.0, hi=1.0):
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        u = u64_to_unit(self.next_u64(count)).reshape(shape)
        return lo + (hi - lo) * u

    def normal(self, size):
        """Standard normals via Box-Muller, two uniforms per draw."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        u = u64_to_unit(self.next_u64(2 * count)).reshape(count, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return (radius * np.cos(2.0 * np.pi * u[:, 1])).reshape(shape)

    def integers(self, high, size):
        """Uniform integers in [0, high); multiply-shift on the top 53 bits."""
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def permutation(self, n):
        """Fisher-Yates shuffle of range(n), consuming n - 1 draws."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def uniform_init(rng, rows, cols, lo, hi):
    """rows x cols matrix of U[lo, hi) draws taken from ``rng`` in row-major order."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"non-positive shape ({rows}, {cols})")
    if not lo < hi:
        raise ValueError(f"empty range [{lo}, {hi})")
    out = rng.uniform((rows, cols), lo, hi)
    # lo + (hi-lo)*u can round up to hi when hi-lo is tiny.
    return np.where(out < hi, out, np.nextafter(hi, lo))
