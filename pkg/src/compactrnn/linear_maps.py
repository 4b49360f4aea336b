"""Matrix parameterisations sharing one apply/backward/materialize/count contract.

Four kinds are supported:

* ``DenseMap``       -- an explicit rows x cols matrix.
* ``LowRankMap``     -- ``W = A @ B`` with A rows x r, B r x cols.
* ``HashedMap``      -- ``W[i, j] = v[hash_index(seed, i, j, k, cols)]``.
* ``ToeplitzLikeMap``-- ``W = sum_j Z_1(g_j) @ Z_{-1}(h_j)``, applied with FFTs.

All maps accept a single vector ``(cols,)`` or a batch ``(B, cols)``;
parameter gradients from ``backward`` are summed over the batch.
"""

import functools
import struct
from dataclasses import dataclass

import numpy as np

from . import numerics

MATERIALIZE_CAP = 4096
# Toeplitz-like maps at or below this size run through a cached explicit
# matrix; FFT overhead dominates for small n.
DIRECT_MAX_N = 256

KIND_TAGS = {"dense": 0, "lowrank": 1, "hashed": 2, "toeplitz": 3}


@dataclass
class MapGradients:
    grad_input: np.ndarray
    grad_params: dict


def _check_input(x, cols):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != cols:
        raise ValueError(f"input of shape {x.shape} does not match {cols} columns")
    return x


def _check_upstream(upstream, x, rows):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:-1] + (rows,):
        raise ValueError(f"upstream of shape {upstream.shape} does not match output "
                         f"{x.shape[:-1] + (rows,)}")
    return upstream


def _as_batch(a):
    return a[None, :] if a.ndim == 1 else a


class LinearMap:
    """Common surface; subclasses define ``kind`` and the parameter arrays."""

    kind = None
    rows = 0
    cols = 0

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def params(self):
        raise NotImplementedError

    def apply(self, x):
        raise NotImplementedError

    def apply_transpose(self, upstream):
        """``upstream @ W``, i.e. the input gradient of ``backward``."""
        raise NotImplementedError

    def backward(self, x, upstream):
        raise NotImplementedError

    def materialize(self, cap=MATERIALIZE_CAP):
        raise NotImplementedError

    @property
    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def __call__(self, x):
        return self.apply(x)

    def copy(self):
        return map_from_bytes(self.to_bytes())

    def _check_cap(self, cap, size):
        if size > cap:
            raise ValueError(f"{self.kind} map of size {size} exceeds materialize cap {cap}")

    def _header(self, *ints, seed=None):
        out = struct.pack("<B", KIND_TAGS[self.kind]) + struct.pack(f"<{len(ints)}q", *ints)
        if seed is not None:
            out += struct.pack("<Q", seed)
        return out

    def to_bytes(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.rows}x{self.cols}, params={self.param_count})"


class DenseMap(LinearMap):
    kind = "dense"

    def __init__(self, weights):
        self.weights = np.array(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("dense weights must be a matrix")
        self.rows, self.cols = self.weights.shape

    @classmethod
    def init(cls, rng, rows, cols, init_range=0.02):
        return cls(numerics.uniform_init(rng, rows, cols, -init_range, init_range))

    @property
    def params(self):
        return {"weights": self.weights}

    def apply(self, x):
        x = _check_input(x, self.cols)
        return x @ self.weights.T

    def apply_transpose(self, upstream):
        return upstream @ self.weights

    def backward(self, x, upstream):
        x = _check_input(x, self.cols)
        upstream = _check_upstream(upstream, x, self.rows)
        grad_w = _as_batch(upstream).T @ _as_batch(x)
        return MapGradients(upstream @ self.weights, {"weights": grad_w})

    def materialize(self, cap=MATERIALIZE_CAP):
        self._check_cap(cap, max(self.rows, self.cols))
        return self.weights.copy()

    def to_bytes(self):
        return self._header(self.rows, self.cols) + self.weights.astype("<f8").tobytes()


class LowRankMap(LinearMap):
    """Linear bottleneck ``W = A @ B`` with no nonlinearity in between."""

    kind = "lowrank"

    def __init__(self, factor_a, factor_b):
        self.factor_a = np.array(factor_a, dtype=np.float64)
        self.factor_b = np.array(factor_b, dtype=np.float64)
        rows, rank = self.factor_a.shape
        rank_b, cols = self.factor_b.shape
        if rank != rank_b:
            raise ValueError(f"factor ranks disagree: {rank} vs {rank_b}")
        if rank < 1:
            raise ValueError("rank must be positive")
        if rank > min(rows, cols):
            raise ValueError(f"rank {rank} exceeds min({rows}, {cols})")
        self.rows, self.cols, self.rank = rows, cols, rank

    @classmethod
    def init(cls, rng, rows, cols, rank, init_range=0.02):
        # Variance-matched: entries of A @ B have the same variance as a
        # dense U[-init_range, init_range] draw.
        a = numerics.uniform_init(rng, rows, rank, -init_range, init_range)
        b_range = np.sqrt(3.0 / rank)
        b = numerics.uniform_init(rng, rank, cols, -b_range, b_range)
        return cls(a, b)

    @property
    def params(self):
        return {"factor_a": self.factor_a, "factor_b": self.factor_b}

    def apply(self, x):
        x = _check_input(x, self.cols)
        return (x @ self.factor_b.T) @ self.factor_a.T

    def apply_transpose(self, upstream):
        return (upstream @ self.factor_a) @ self.factor_b

    def backward(self, x, upstream):
        x = _check_input(x, self.cols)
        upstream = _check_upstream(upstream, x, self.rows)
        xb, ub = _as_batch(x), _as_batch(upstream)
        z = xb @ self.factor_b.T
        dz = ub @ self.factor_a
        grad_input = dz @ self.factor_b
        if x.ndim == 1:
            grad_input = grad_input[0]
        return MapGradients(grad_input, {"factor_a": ub.T @ z, "factor_b": dz.T @ xb})

    def materialize(self, cap=MATERIALIZE_CAP):
        self._check_cap(cap, max(self.rows, self.cols))
        return self.factor_a @ self.factor_b

    def to_bytes(self):
        return (self._header(self.rows, self.cols, self.rank)
                + self.factor_a.astype("<f8").tobytes() + self.factor_b.astype("<f8").tobytes())


def hash_index(seed, i, j, k, cols):
    """Bucket of entry (i, j) in a matrix with ``cols`` columns: mix64(seed, i*cols+j) mod k.

    ``i`` and ``j`` may be integer arrays (broadcast together).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    flat = np.asarray(i, dtype=np.uint64) * np.uint64(cols) + np.asarray(j, dtype=np.uint64)
    h = numerics.mix64(seed, flat) % np.uint64(k)
    return int(h) if np.ndim(h) == 0 else h.astype(np.int64)


class HashedMap(LinearMap):
    """k shared weights scattered over the matrix by a fixed hash."""

    kind = "hashed"

    def __init__(self, bucket_values, seed, rows, cols):
        self.bucket_values = np.array(bucket_values, dtype=np.float64).reshape(-1)
        if self.bucket_values.size < 1:
            raise ValueError("hashed map needs at least one bucket")
        if rows < 1 or cols < 1:
            raise ValueError(f"non-positive shape ({rows}, {cols})")
        self.seed = int(seed)
        self.rows, self.cols = int(rows), int(cols)
        self._index = None

    @classmethod
    def init(cls, rng, rows, cols, rank, init_range=0.02):
        """Pseudo-rank ``rank`` buckets: k = rank*(rows+cols), i.e. 2nr when square."""
        if rank < 1:
            raise ValueError("pseudo-rank must be positive")
        k = rank * (rows + cols)
        seed = rng.next_u64()
        values = numerics.uniform_init(rng, 1, k, -init_range, init_range)[0]
        return cls(values, seed, rows, cols)

    @property
    def k(self):
        return self.bucket_values.size

    @property
    def index(self):
        if self._index is None:
            i, j = np.indices((self.rows, self.cols))
            self._index = hash_index(self.seed, i, j, self.k, self.cols)
        return self._index

    @property
    def params(self):
        return {"bucket_values": self.bucket_values}

    def _dense(self):
        return self.bucket_values[self.index]

    def apply(self, x):
        x = _check_input(x, self.cols)
        return x @ self._dense().T

    def apply_transpose(self, upstream):
        return upstream @ self._dense()

    def backward(self, x, upstream):
        x = _check_input(x, self.cols)
        upstream = _check_upstream(upstream, x, self.rows)
        dense_grad = _as_batch(upstream).T @ _as_batch(x)
        # Every bucket collects the gradient of each position tied to it.
        grad_v = np.bincount(self.index.ravel(), weights=dense_grad.ravel(), minlength=self.k)
        return MapGradients(upstream @ self._dense(), {"bucket_values": grad_v})

    def materialize(self, cap=MATERIALIZE_CAP):
        self._check_cap(cap, max(self.rows, self.cols))
        return self._dense()

    def to_bytes(self):
        return (self._header(self.rows, self.cols, self.k, seed=self.seed)
                + self.bucket_values.astype("<f8").tobytes())


@functools.lru_cache(maxsize=64)
def _skew_modulation(n):
    return np.exp(1j * np.pi * np.arange(n) / n)


def _circular_conv(v, x):
    n = v.shape[-1]
    return numerics.irfft(numerics.rfft(v) * numerics.rfft(x), n)


def _skew_conv(v, x):
    # Z_{-1}(v) x = w^-1 * circconv(w*v, w*x) with w_k = exp(i*pi*k/n).
    w = _skew_modulation(v.shape[-1])
    y = numerics.fft(numerics.fft(w * v) * numerics.fft(w * x), inverse=True)
    return (np.conj(w) * y).real


def _transpose_generator(f, v):
    """Generator u with Z_f(u) = Z_f(v).T: u_0 = v_0, u_k = f * v_{n-k}."""
    out = np.empty_like(v)
    out[..., 0] = v[..., 0]
    out[..., 1:] = f * v[..., :0:-1]
    return out


def f_circulant_matvec(f, v, x):
    """``Z_f(v) @ x`` where Z_f(v)[i, j] = v[(i-j) mod n] * (f if i < j else 1).

    f = 1 is circular convolution; f = -1 is skew-circular convolution.
    Broadcasts over leading axes.
    """
    if f not in (1, -1):
        raise ValueError(f"f must be 1 or -1, got {f}")
    v = np.asarray(v, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if v.shape[-1] != x.shape[-1]:
        raise ValueError(f"length mismatch: {v.shape[-1]} vs {x.shape[-1]}")
    if v.shape[-1] == 0:
        raise ValueError("zero-length generator")
    return _circular_conv(v, x) if f == 1 else _skew_conv(v, x)


def f_circulant_matrix(f, v):
    """Dense Z_f(v), built entry by entry from the definition (no FFT)."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    i, j = np.indices((n, n))
    return v[(i - j) % n] * np.where(i < j, float(f), 1.0)


@functools.lru_cache(maxsize=16)
def _wrap_index(n):
    """((i - j) mod n, skew sign of Z_{-1}) over an n x n grid, flattened."""
    i, j = np.indices((n, n))
    return ((i - j) % n).ravel(), np.where(i < j, -1.0, 1.0).ravel()


class ToeplitzLikeMap(LinearMap):
    """Sum of r circulant x skew-circulant products on an n x n padded square.

    A rows x cols matrix is the top-left block of the n x n operator;
    inputs are zero-padded to n and outputs truncated to ``rows``.
    """

    kind = "toeplitz"

    def __init__(self, gen_g, gen_h, rows=None, cols=None):
        gen_g = np.array(gen_g, dtype=np.float64)
        gen_h = np.array(gen_h, dtype=np.float64)
        if gen_g.ndim == 1:
            gen_g, gen_h = gen_g[:, None], gen_h[:, None]
        if gen_g.shape != gen_h.shape:
            raise ValueError(f"generator shapes differ: {gen_g.shape} vs {gen_h.shape}")
        n, r = gen_g.shape
        if r < 1:
            raise ValueError("displacement rank must be positive")
        self.gen_g, self.gen_h = gen_g, gen_h
        self.n, self.rank = n, r
        self.rows = n if rows is None else int(rows)
        self.cols = n if cols is None else int(cols)
        if not (1 <= self.rows <= n and 1 <= self.cols <= n):
            raise ValueError(f"logical shape {self.rows}x{self.cols} does not fit in n={n}")
        self._cache = None
        self._direct = None

    @classmethod
    def init(cls, rng, rows, cols, rank, init_range=0.02, n=None):
        if rank < 1:
            raise ValueError("displacement rank must be positive")
        n = max(rows, cols) if n is None else n
        # Balanced: g and h share one range chosen so entries of the
        # materialised matrix have the variance of a dense
        # U[-init_range, init_range] draw.
        h_range = (3.0 * init_range ** 2 / (rank * n)) ** 0.25
        g = numerics.uniform_init(rng, n, rank, -h_range, h_range)
        h = numerics.uniform_init(rng, n, rank, -h_range, h_range)
        return cls(g, h, rows, cols)

    @property
    def params(self):
        return {"gen_g": self.gen_g, "gen_h": self.gen_h}

    def spectra(self):
        """(rfft of g_j, fft of w*h_j, fft of w*h_j^T-generator), each (r, .).

        Cached until the generator values change.
        """
        key = self.gen_g.tobytes() + self.gen_h.tobytes()
        if self._cache is None or self._cache[0] != key:
            w = _skew_modulation(self.n)
            h = self.gen_h.T
            self._cache = (key, numerics.rfft(self.gen_g.T), numerics.fft(w * h),
                           numerics.fft(w * _transpose_generator(-1, h)))
        return self._cache[1:]

    @property
    def direct(self):
        return self.n <= DIRECT_MAX_N

    def _factors(self):
        """Cached (circulant factors, skew factors, full n x n matrix) for the direct path."""
        key = self.gen_g.tobytes() + self.gen_h.tobytes()
        if self._direct is None or self._direct[0] != key:
            idx, sign = _wrap_index(self.n)
            shape = (self.rank, self.n, self.n)
            circ = self.gen_g.T[:, idx].reshape(shape)
            skew = (self.gen_h.T[:, idx] * sign).reshape(shape)
            full = circ.transpose(1, 0, 2).reshape(self.n, -1) @ skew.reshape(-1, self.n)
            self._direct = (key, circ, skew, full)
        return self._direct[1:]

    def _block(self):
        return self._factors()[2][:self.rows, :self.cols]

    def _pad(self, x):
        xb = _as_batch(x)
        if self.cols == self.n:
            return xb
        return np.pad(xb, ((0, 0), (0, self.n - self.cols)))

    def _pad_upstream(self, upstream):
        ub = _as_batch(upstream)
        if self.rows == self.n:
            return ub
        return np.pad(ub, ((0, 0), (0, self.n - self.rows)))

    def apply(self, x):
        x = _check_input(x, self.cols)
        if self.direct:
            return x @ self._block().T
        gf, hf, _ = self.spectra()
        y = _toeplitz_forward(gf, hf, self._pad(x), self.n, 1)[:, 0, :self.rows]
        return y[0] if x.ndim == 1 else y

    def apply_transpose(self, upstream):
        upstream = np.asarray(upstream, dtype=np.float64)
        if self.direct:
            return _check_input(upstream, self.rows) @ self._block()
        gf, _, htf = self.spectra()
        uf = numerics.rfft(self._pad_upstream(upstream))[:, None]
        grad_x = _toeplitz_transpose(gf, htf, uf, self.n)[:, :self.cols]
        return grad_x[0] if upstream.ndim == 1 else grad_x

    def backward(self, x, upstream):
        x = _check_input(x, self.cols)
        upstream = _check_upstream(upstream, x, self.rows)
        if self.direct:
            return self._direct_backward(x, upstream)
        n, w = self.n, _skew_modulation(self.n)
        gf, hf, htf = self.spectra()
        xp = self._pad(x)
        xf = numerics.fft(w * xp)
        s = (np.conj(w) * numerics.fft(hf[None] * xf[:, None], inverse=True)).real
        uf = numerics.rfft(self._pad_upstream(upstream))
        # y = Z_1(g_j) s_j = Z_1(s_j) g_j; transposed circulants are correlations.
        # Batch sums are taken in the frequency domain.
        grad_g = numerics.irfft(np.einsum("brk,bk->rk", np.conj(numerics.rfft(s)), uf), n)
        grad_s = numerics.irfft(np.conj(gf)[None] * uf[:, None], n)
        gsf = numerics.fft(w * grad_s)
        grad_x = (np.conj(w) * numerics.fft((htf[None] * gsf).sum(axis=1), inverse=True)).real
        # s_j = Z_{-1}(h_j) x = Z_{-1}(x) h_j; transpose via the skew generator flip.
        xt = numerics.fft(w * _transpose_generator(-1, xp))
        grad_h = (np.conj(w) * numerics.fft(np.einsum("bk,brk->rk", xt, gsf), inverse=True)).real
        grad_x = grad_x[:, :self.cols]
        if x.ndim == 1:
            grad_x = grad_x[0]
        return MapGradients(grad_x, {"gen_g": grad_g.T, "gen_h": grad_h.T})

    def _direct_backward(self, x, upstream):
        circ, skew, full = self._factors()
        grad_x = upstream @ full[:self.rows, :self.cols]
        xb, ub = _as_batch(x), _as_batch(upstream)
        d_full = np.zeros((self.n, self.n))
        d_full[:self.rows, :self.cols] = ub.T @ xb
        idx, sign = _wrap_index(self.n)
        # W = sum_j C_j S_j: dC_j = dW S_j^T, dS_j = C_j^T dW, then fold each
        # onto its generator along the wrapped diagonals.
        n, r = self.n, self.rank
        # Stacked single GEMMs; batched transposed matmul misses the BLAS path.
        d_circ = (d_full @ skew.reshape(r * n, n).T).reshape(n, r, n).transpose(1, 0, 2)
        d_skew = (d_full.T @ circ.transpose(1, 0, 2).reshape(n, r * n)).reshape(n, r, n)
        d_circ = d_circ.reshape(r, -1)
        d_skew = d_skew.transpose(1, 2, 0).reshape(r, -1) * sign
        grad_g = np.stack([np.bincount(idx, d, minlength=self.n) for d in d_circ], axis=1)
        grad_h = np.stack([np.bincount(idx, d, minlength=self.n) for d in d_skew], axis=1)
        return MapGradients(grad_x, {"gen_g": grad_g, "gen_h": grad_h})

    def materialize(self, cap=MATERIALIZE_CAP):
        self._check_cap(cap, self.n)
        if self.direct:
            return self._block().copy()
        full = sum(f_circulant_matrix(1, self.gen_g[:, j]) @ f_circulant_matrix(-1, self.gen_h[:, j])
                   for j in range(self.rank))
        return full[:self.rows, :self.cols]

    def to_bytes(self):
        return (self._header(self.rows, self.cols, self.n, self.rank)
                + self.gen_g.astype("<f8").tobytes() + self.gen_h.astype("<f8").tobytes())


def _toeplitz_forward(gf, hf, xp, n, groups):
    """Per-group sums of Z_1(g_j) Z_{-1}(h_j) xp; terms are split evenly into groups.

    Returns (B, groups, n).
    """
    w = _skew_modulation(n)
    xf = numerics.fft(w * xp)
    s = (np.conj(w) * numerics.fft(hf[None] * xf[:, None], inverse=True)).real
    prod = gf[None] * numerics.rfft(s)
    B, R, nf = prod.shape
    return numerics.irfft(prod.reshape(B, groups, R // groups, nf).sum(axis=2), n)


def _toeplitz_transpose(gf, htf, uf, n):
    """sum over groups of W_group^T u_group; ``uf`` is (B, groups, nf). Returns (B, n)."""
    w = _skew_modulation(n)
    B, groups, nf = uf.shape
    R = gf.shape[0]
    gfc = np.conj(gf).reshape(groups, R // groups, nf)
    grad_s = numerics.irfft(gfc[None] * uf[:, :, None], n).reshape(B, R, n)
    gsf = numerics.fft(w * grad_s)
    return (np.conj(w) * numerics.fft((htf[None] * gsf).sum(axis=1), inverse=True)).real


def _fusable(maps):
    first = maps[0]
    same = all(type(m) is type(first) and m.shape == first.shape for m in maps)
    if not same:
        return None
    if first.kind == "dense" or (first.kind == "toeplitz" and all(m.direct for m in maps)):
        return "dense"
    if first.kind == "toeplitz" and all(m.n == first.n and m.rank == first.rank for m in maps):
        return "toeplitz"
    return None


def _weights(m):
    return m.weights if m.kind == "dense" else m._block()


def apply_group(maps, x):
    """``[m.apply(x) for m in maps]``, fused when the maps share kind and shape."""
    mode = _fusable(maps)
    if mode == "dense":
        y = x @ np.concatenate([_weights(m) for m in maps]).T
        return np.split(y, len(maps), axis=-1)
    if mode == "toeplitz":
        first = maps[0]
        x = _check_input(x, first.cols)
        spectra = [m.spectra() for m in maps]
        gf = np.concatenate([s[0] for s in spectra])
        hf = np.concatenate([s[1] for s in spectra])
        y = _toeplitz_forward(gf, hf, first._pad(x), first.n, len(maps))[:, :, :first.rows]
        if x.ndim == 1:
            y = y[0:1]
        return [y[:, k] if x.ndim == 2 else y[0, k] for k in range(len(maps))]
    return [m.apply(x) for m in maps]


def apply_transpose_group(maps, upstreams):
    """``sum(m.apply_transpose(u) for m, u in zip(maps, upstreams))``, fused when possible."""
    mode = _fusable(maps)
    if mode == "dense":
        return np.concatenate(upstreams, axis=-1) @ np.concatenate([_weights(m) for m in maps])
    if mode == "toeplitz":
        first = maps[0]
        spectra = [m.spectra() for m in maps]
        gf = np.concatenate([s[0] for s in spectra])
        htf = np.concatenate([s[2] for s in spectra])
        uf = np.stack([numerics.rfft(first._pad_upstream(u)) for u in upstreams], axis=1)
        out = _toeplitz_transpose(gf, htf, uf, first.n)[:, :first.cols]
        return out[0] if np.ndim(upstreams[0]) == 1 else out
    return sum(m.apply_transpose(u) for m, u in zip(maps, upstreams))


def toeplitz_like_apply(tmap, x):
    return tmap.apply(x)


def _read_doubles(buf, offset, count):
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)
    return arr, offset + 8 * count


def map_from_bytes(buf):
    """Inverse of ``LinearMap.to_bytes``; raises ValueError on malformed input."""
    buf = bytes(buf)
    tags = {v: k for k, v in KIND_TAGS.items()}
    if not buf or buf[0] not in tags:
        raise ValueError("unknown linear map tag")
    kind = tags[buf[0]]
    if kind == "dense":
        rows, cols = struct.unpack_from("<2q", buf, 1)
        w, end = _read_doubles(buf, 17, rows * cols)
        result = DenseMap(w.reshape(rows, cols))
    elif kind == "lowrank":
        rows, cols, rank = struct.unpack_from("<3q", buf, 1)
        a, off = _read_doubles(buf, 25, rows * rank)
        b, end = _read_doubles(buf, off, rank * cols)
        result = LowRankMap(a.reshape(rows, rank), b.reshape(rank, cols))
    elif kind == "hashed":
        rows, cols, k = struct.unpack_from("<3q", buf, 1)
        (seed,) = struct.unpack_from("<Q", buf, 25)
        v, end = _read_doubles(buf, 33, k)
        result = HashedMap(v, seed, rows, cols)
    else:
        rows, cols, n, rank = struct.unpack_from("<4q", buf, 1)
        g, off = _read_doubles(buf, 33, n * rank)
        h, end = _read_doubles(buf, off, n * rank)
        result = ToeplitzLikeMap(g.reshape(n, rank), h.reshape(n, rank), rows, cols)
    if end != len(buf):
        raise ValueError(f"trailing bytes in serialized {kind} map")
    return result


def make_map(kind, rng, rows, cols, rank=None, init_range=0.02):
    """Construct a freshly initialised map of the named kind."""
    if kind == "dense":
        return DenseMap.init(rng, rows, cols, init_range)
    if rank is None or rank < 1:
        raise ValueError(f"{kind} map needs a positive rank, got {rank}")
    if kind == "lowrank":
        return LowRankMap.init(rng, rows, cols, rank, init_range)
    if kind == "hashed":
        return HashedMap.init(rng, rows, cols, rank, init_range)
    if kind == "toeplitz":
        return ToeplitzLikeMap.init(rng, rows, cols, rank, init_range)
    raise ValueError(f"unknown map kind {kind!r}")


def count_for(kind, rows, cols, rank=None):
    """Parameter count of a map without allocating it."""
    if kind == "dense":
        return rows * cols
    if kind in ("lowrank", "hashed"):
        return rank * (rows + cols)
    if kind == "toeplitz":
        return 2 * max(rows, cols) * rank
    raise ValueError(f"unknown map kind {kind!r}")
