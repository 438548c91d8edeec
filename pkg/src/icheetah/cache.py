"""Ciphertext caching strategies for pixel-domain encryption.

A pixel only takes 256 values, so most RLWE work during image encryption is
redundant.  Three strategies trade precomputation for per-pixel cost:

    radix  cache Enc(r^i) for every power r^i <= 255; a pixel is the digit
           combination sum(d_i * Enc(r^i)) of its base-r decomposition
    scan   cache Enc(v) for exactly the values present in a reference image;
           per pixel, binary-search the sorted value table
    full   cache Enc(v) for all 256 values; per pixel, direct indexing

Cached ciphertexts are deterministic per value, so a cache hit alone would
leak pixel equality.  Randomness injection restores semantic hiding:

    radix      telescoping identity: with an independent coin per adjacent
               power pair, add Enc(r^i) and subtract r copies of Enc(r^(i-1)),
               a net encryption of zero folded into the digit coefficients
    scan/full  add a zero ciphertext drawn from a working pool; after each
               draw the drawn entry is refreshed in place by adding an entry
               of an immutable reserve of fresh zeros, so no two draws ever
               coincide

Refreshing from a frozen reserve (rather than from the evolving pool itself)
keeps entry noise a random walk: it grows with the square root of the number
of refreshes instead of compounding, so decryption error stays bounded for
any realistic draw volume.  Within one round, draw indices are sampled
without replacement so the refresh can be vectorized; batches larger than
the pool are processed in rounds.

Per-pixel cached paths perform zero fresh RLWE encryptions; this is
observable through the key set's operation counters.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ntt
from .ckks import Ciphertext, CtBatch, KeySet, encrypt_scalars_batch
from .errors import (
    CacheMissError,
    DomainError,
    FormatError,
    KeyMismatchError,
    ParameterError,
    PoolError,
    UnsupportedOperationError,
)
from .params import CkksParams
from .wire import (
    FORMAT_VERSION,
    MAGIC_CACHE,
    atomic_write,
    cell_from_bytes,
    cell_to_bytes,
    read_exact,
)

STRATEGY_NONE = "none"
STRATEGY_RADIX = "radix"
STRATEGY_SCAN = "scan"
STRATEGY_FULL = "full"
STRATEGIES = (STRATEGY_NONE, STRATEGY_RADIX, STRATEGY_SCAN, STRATEGY_FULL)
_STRATEGY_TAG = {s: i for i, s in enumerate(STRATEGIES)}
_TAG_STRATEGY = {i: s for s, i in _STRATEGY_TAG.items()}

POOL_SIZE_ENV = "ICHEETAH_POOL_SIZE"
DEFAULT_POOL_SIZE = 1024

_CACHE_HEAD = struct.Struct("<4sH")
_CACHE_META = struct.Struct("<32sBBH")
_ENTRY_HEAD = struct.Struct("<H")


def pool_size_from_env(explicit: int | None = None) -> int:
    if explicit is not None:
        size = explicit
    else:
        raw = os.environ.get(POOL_SIZE_ENV)
        try:
            size = int(raw) if raw else DEFAULT_POOL_SIZE
        except ValueError:
            raise PoolError(f"{POOL_SIZE_ENV}={raw!r} is not an integer") from None
    if size < 2:
        raise PoolError(f"zero pool needs at least 2 entries, got {size}")
    return size


def radix_powers(r: int) -> np.ndarray:
    """Powers of r up to the pixel ceiling 255, ascending."""
    if not 2 <= r <= 255:
        raise ParameterError(f"radix must be in [2, 255], got {r}")
    out = []
    p = 1
    while p <= 255:
        out.append(p)
        p *= r
    return np.asarray(out, dtype=np.int64)


def radix_decompose(value: int, r: int) -> np.ndarray:
    """Base-r digits of a pixel value, aligned to radix_powers(r)."""
    if not 0 <= value <= 255:
        raise DomainError(f"pixel value {value} outside [0, 255]")
    k = len(radix_powers(r))
    digits = np.zeros(k, dtype=np.int64)
    v = int(value)
    for i in range(k):
        digits[i] = v % r
        v //= r
    return digits


def _digit_matrix(values: np.ndarray, r: int, k: int) -> np.ndarray:
    v = values.astype(np.int64)
    digs = np.empty((v.size, k), dtype=np.int64)
    for i in range(k):
        digs[:, i] = v % r
        v = v // r
    return digs


# ---------------------------------------------------------------------------
# fused kernels over flattened cells
#
# A cell is viewed as (D, N) rows with D = 2 * limbs; row d reduces modulo
# row_primes[d].  This lets one kernel sweep a whole cell without caring
# which part or limb a row belongs to.
# ---------------------------------------------------------------------------

if ntt.HAVE_NUMBA:
    import numba

    @numba.njit(cache=True)
    def _cached_combine_kernel(cache3, vidx, pool3, pidx, res3, rdx, row_primes, out3):
        # out[b] = cache[v_b] + pool[p_b]; then pool[p_b] += reserve[r_b]
        b_sz, d_sz, n = out3.shape
        for b in range(b_sz):
            cv = vidx[b]
            pi = pidx[b]
            for d in range(d_sz):
                p = row_primes[d]
                co = cache3[cv, d]
                po = pool3[pi, d]
                ou = out3[b, d]
                for j in range(n):
                    r = co[j] + po[j]
                    if r >= p:
                        r -= p
                    ou[j] = r
        for b in range(b_sz):
            pi = pidx[b]
            pj = rdx[b]
            for d in range(d_sz):
                p = row_primes[d]
                pa = pool3[pi, d]
                pb = res3[pj, d]
                for j in range(n):
                    r = pa[j] + pb[j]
                    if r >= p:
                        r -= p
                    pa[j] = r

    @numba.njit(cache=True)
    def _lincomb_kernel(cache3, cpos, cneg, row_primes, out3):
        # out[b] = sum_i cpos[b,i]*cache[i] - cneg[b,i]*cache[i]  (mod row prime)
        # coefficients are < 2^8 and K <= 8, so the u64 accumulator never wraps
        b_sz, d_sz, n = out3.shape
        k = cpos.shape[1]
        for b in range(b_sz):
            for d in range(d_sz):
                p = row_primes[d]
                ou = out3[b, d]
                for j in range(n):
                    ou[j] = 0
                for i in range(k):
                    cp = cpos[b, i]
                    cn = cneg[b, i]
                    if cp == 0 and cn == 0:
                        continue
                    src = cache3[i, d]
                    if cn == 0:
                        for j in range(n):
                            ou[j] += cp * src[j]
                    elif cp == 0:
                        for j in range(n):
                            ou[j] += cn * (p - src[j])
                    else:
                        for j in range(n):
                            ou[j] += cp * src[j] + cn * (p - src[j])
                for j in range(n):
                    ou[j] = ou[j] % p


def _row_primes(params: CkksParams, level: int) -> np.ndarray:
    primes = params.active_primes(level)
    return np.asarray(list(primes) * 2, dtype=np.uint64)


def _flat_cells(data: np.ndarray) -> np.ndarray:
    # (B, 2, limbs, N) -> (B, 2*limbs, N) without copying
    b, parts, limbs, n = data.shape
    return data.reshape(b, parts * limbs, n)


# ---------------------------------------------------------------------------
# zero pool
# ---------------------------------------------------------------------------

RESERVE_CAP = 256  # fresh zeros kept frozen for pool refreshes


@dataclass
class ZeroPool:
    """Zero encryptions for randomness injection.

    batch is the working pool (mutated by refreshes); reserve is a frozen
    block of fresh zeros that refreshes draw from, so entry noise follows a
    random walk over independent fresh-noise terms.
    """

    batch: CtBatch
    reserve: np.ndarray  # (R, 2, limbs, N) uint64, never mutated
    fresh_noise: float
    draws: int = 0

    def __len__(self) -> int:
        return len(self.batch)

    @property
    def noise(self) -> float:
        walk = math.sqrt(1.0 + self.draws / max(len(self), 1))
        return self.fresh_noise * walk


def build_zero_pool(
    keys: KeySet,
    rng: np.random.Generator,
    *,
    size: int | None = None,
    scale: float | None = None,
    level: int | None = None,
) -> ZeroPool:
    """Encrypt pool + reserve zeros and verify they are pairwise distinct."""
    z = pool_size_from_env(size)
    r = min(z, RESERVE_CAP)
    batch = encrypt_scalars_batch(np.zeros(z + r), keys, rng, scale=scale, level=level)
    digests = {
        hashlib.sha256(batch.data[i].tobytes()).digest() for i in range(z + r)
    }
    if len(digests) != z + r:
        raise PoolError("zero pool contains byte-identical entries")
    reserve = batch.data[z:].copy()
    working = CtBatch(
        batch.data[:z].copy(), batch.scale, batch.level, batch.params, batch.noise
    )
    return ZeroPool(working, reserve, batch.noise)


def _draw_indices(pool: ZeroPool, rng: np.random.Generator, count: int):
    """Draw indices without replacement; the caller refreshes drawn entries.

    Within one round no index repeats, so all outputs built from it differ;
    across rounds the refresh has already changed the entry.  Callers split
    batches larger than the pool into rounds.
    """
    z = len(pool)
    if count > z:
        raise PoolError(f"round of {count} exceeds pool size {z}")  # pragma: no cover
    idx = rng.choice(z, size=count, replace=False).astype(np.int64)
    rdx = rng.integers(0, pool.reserve.shape[0], size=count)
    pool.draws += count
    return idx, rdx


# ---------------------------------------------------------------------------
# pixel cache
# ---------------------------------------------------------------------------

@dataclass
class PixelCache:
    """Precomputed ciphertexts for one caching strategy.

    values holds the cached plaintext values (sorted for scan, 0..255 for
    full, the radix powers for radix); batch holds the aligned ciphertexts.
    """

    strategy: str
    params: CkksParams
    fingerprint: bytes  # key set the entries were encrypted under
    values: np.ndarray
    batch: CtBatch | None
    radix: int = 2
    pool: ZeroPool | None = None
    randomize: bool = True
    fallback_fresh: bool = False
    radix_zero_pool: bool = False
    hits: int = 0
    misses: int = 0
    _row_primes: np.ndarray | None = field(default=None, repr=False)

    @property
    def scale(self) -> float:
        return self.batch.scale if self.batch is not None else self.params.scale

    @property
    def level(self) -> int:
        return self.batch.level if self.batch is not None else self.params.max_level

    def row_primes(self) -> np.ndarray:
        if self._row_primes is None:
            self._row_primes = _row_primes(self.params, self.level)
        return self._row_primes


def build_cache(
    strategy: str,
    keys: KeySet,
    rng: np.random.Generator,
    *,
    radix: int = 2,
    reference: np.ndarray | None = None,
    pool_size: int | None = None,
    randomize: bool = True,
    fallback_fresh: bool = False,
    radix_zero_pool: bool = False,
    scale: float | None = None,
    level: int | None = None,
) -> PixelCache:
    """Build the cache (and, where the strategy needs one, the zero pool).

    scan needs `reference`: the pixel array whose distinct values to cache.
    All entries are fresh encryptions at a common scale and level; the cost
    shows up here, once, instead of per pixel.
    """
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown strategy {strategy!r}; pick from {STRATEGIES}")
    cache = PixelCache(
        strategy=strategy,
        params=keys.params,
        fingerprint=keys.fingerprint,
        values=np.empty(0, dtype=np.int64),
        batch=None,
        radix=radix,
        randomize=randomize,
        fallback_fresh=fallback_fresh,
        radix_zero_pool=radix_zero_pool,
    )
    if strategy == STRATEGY_NONE:
        return cache

    if strategy == STRATEGY_RADIX:
        values = radix_powers(radix)
    elif strategy == STRATEGY_SCAN:
        if reference is None:
            raise ParameterError("scan caching needs a reference pixel array")
        ref = np.asarray(reference)
        if ref.size == 0:
            raise ParameterError("scan reference is empty")
        if ref.min() < 0 or ref.max() > 255:
            raise DomainError("scan reference values must lie in [0, 255]")
        values = np.unique(ref.astype(np.int64))
    else:
        values = np.arange(256, dtype=np.int64)

    cache.values = values
    cache.batch = encrypt_scalars_batch(
        values.astype(np.float64), keys, rng, scale=scale, level=level
    )
    needs_pool = randomize and (
        strategy in (STRATEGY_SCAN, STRATEGY_FULL)
        or (strategy == STRATEGY_RADIX and radix_zero_pool)
    )
    if needs_pool:
        cache.pool = build_zero_pool(
            keys, rng, size=pool_size, scale=cache.scale, level=cache.level
        )
    return cache


def attach_pool(
    cache: PixelCache,
    keys: KeySet,
    rng: np.random.Generator,
    *,
    size: int | None = None,
) -> None:
    """Build and attach a zero pool (for caches loaded from disk)."""
    if keys.fingerprint != cache.fingerprint:
        raise KeyMismatchError("cache entries belong to a different key set")
    cache.pool = build_zero_pool(keys, rng, size=size, scale=cache.scale, level=cache.level)


# ---------------------------------------------------------------------------
# encryption through the cache
# ---------------------------------------------------------------------------

def _check_values(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values).ravel()
    if v.size and (v.min() < 0 or v.max() > 255):
        raise DomainError("pixel values must lie in [0, 255]")
    return v.astype(np.int64)


def _empty_batch(cache: PixelCache) -> CtBatch:
    limbs = cache.level + 1
    return CtBatch(
        np.empty((0, 2, limbs, cache.params.n), dtype=np.uint64),
        cache.scale,
        cache.level,
        cache.params,
        0.0,
    )


def _combine_lookup(cache: PixelCache, idx: np.ndarray, rng: np.random.Generator) -> CtBatch:
    """Gather cache entries by index, with optional pool randomization."""
    src = cache.batch
    if not cache.randomize:
        data = src.data[idx]
        return CtBatch(data, src.scale, src.level, src.params, src.noise)
    if cache.pool is None:
        raise PoolError("randomization requested but no zero pool is attached")
    pool = cache.pool
    out = np.empty((idx.size,) + src.data.shape[1:], dtype=np.uint64)
    rp = cache.row_primes()
    flat_out = _flat_cells(out)
    flat_cache = _flat_cells(src.data)
    flat_pool = _flat_cells(pool.batch.data)
    flat_res = _flat_cells(pool.reserve)
    z = len(pool)
    for lo in range(0, idx.size, z):
        seg = idx[lo : lo + z].astype(np.int64)
        pidx, rdx = _draw_indices(pool, rng, seg.size)
        if ntt.HAVE_NUMBA:
            _cached_combine_kernel(
                flat_cache, seg, flat_pool, pidx, flat_res, rdx, rp,
                flat_out[lo : lo + seg.size],
            )
        else:
            for d in range(flat_out.shape[1]):
                q = int(rp[d])
                flat_out[lo : lo + seg.size, d, :] = ntt.add_mod(
                    flat_cache[seg, d, :], flat_pool[pidx, d, :], q
                )
                flat_pool[pidx, d, :] = ntt.add_mod(
                    flat_pool[pidx, d, :], flat_res[rdx, d, :], q
                )
    return CtBatch(out, src.scale, src.level, src.params, src.noise + pool.noise)


def _radix_coefficients(
    cache: PixelCache, values: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    k = len(cache.values)
    digs = _digit_matrix(values, cache.radix, k)
    if cache.randomize:
        if k < 2:
            raise UnsupportedOperationError(
                "telescoping randomization needs at least two cached powers"
            )
        # coin per adjacent power pair: add Enc(r^i), subtract r copies of
        # Enc(r^(i-1)); net contribution encrypts zero
        coins = rng.integers(0, 2, size=(values.size, k - 1), dtype=np.int64)
        digs[:, 1:] += coins
        digs[:, :-1] -= cache.radix * coins
    cpos = np.where(digs > 0, digs, 0).astype(np.uint64)
    cneg = np.where(digs < 0, -digs, 0).astype(np.uint64)
    return cpos, cneg


def _combine_radix(cache: PixelCache, values: np.ndarray, rng: np.random.Generator) -> CtBatch:
    src = cache.batch
    cpos, cneg = _radix_coefficients(cache, values, rng)
    out = np.empty((values.size,) + src.data.shape[1:], dtype=np.uint64)
    rp = cache.row_primes()
    if ntt.HAVE_NUMBA:
        _lincomb_kernel(_flat_cells(src.data), cpos, cneg, rp, _flat_cells(out))
    else:
        flat_out = _flat_cells(out)
        flat_cache = _flat_cells(src.data)
        for d in range(flat_out.shape[1]):
            q = int(rp[d])
            acc = np.zeros((values.size, flat_out.shape[2]), dtype=np.uint64)
            for i in range(cpos.shape[1]):
                row = flat_cache[i, d, :]
                term = ntt.mul_mod(cpos[:, i][:, None], row[None, :], q)
                acc = ntt.add_mod(acc, term, q)
                term = ntt.mul_mod(cneg[:, i][:, None], ntt.neg_mod(row, q)[None, :], q)
                acc = ntt.add_mod(acc, term, q)
            flat_out[:, d, :] = acc
    noise = src.noise * (cache.radix * len(cache.values) + 1)
    batch = CtBatch(out, src.scale, src.level, src.params, noise)
    if cache.randomize and cache.radix_zero_pool:
        if cache.pool is None:
            raise PoolError("radix_zero_pool is set but no zero pool is attached")
        idx = np.arange(values.size, dtype=np.int64)
        inner = PixelCache(
            strategy=STRATEGY_FULL,
            params=cache.params,
            fingerprint=cache.fingerprint,
            values=idx,
            batch=batch,
            pool=cache.pool,
            randomize=True,
        )
        return _combine_lookup(inner, idx, rng)
    return batch


def encrypt_pixels(
    cache: PixelCache,
    values: np.ndarray,
    keys: KeySet,
    rng: np.random.Generator,
) -> CtBatch:
    """Encrypt a flat array of pixel values through the cache.

    The baseline strategy falls through to fresh encryption; every other
    strategy only combines precomputed ciphertexts.
    """
    if keys.fingerprint != cache.fingerprint and cache.strategy != STRATEGY_NONE:
        raise KeyMismatchError("cache entries belong to a different key set")
    v = _check_values(values)
    if v.size == 0:
        return _empty_batch(cache)

    if cache.strategy == STRATEGY_NONE:
        return encrypt_scalars_batch(v.astype(np.float64), keys, rng)

    if cache.strategy == STRATEGY_RADIX:
        cache.hits += v.size
        return _combine_radix(cache, v, rng)

    if cache.strategy == STRATEGY_FULL:
        cache.hits += v.size
        return _combine_lookup(cache, v, rng)

    # scan: translate values through the sorted table
    idx = np.searchsorted(cache.values, v)
    idx = np.minimum(idx, len(cache.values) - 1)
    hit = cache.values[idx] == v
    if np.all(hit):
        cache.hits += v.size
        return _combine_lookup(cache, idx, rng)
    cache.misses += int(np.count_nonzero(~hit))
    cache.hits += int(np.count_nonzero(hit))
    if not cache.fallback_fresh:
        missing = np.unique(v[~hit])
        raise CacheMissError(
            f"values {missing.tolist()} not in the scan cache; "
            "rebuild from a covering reference or enable fallback_fresh"
        )
    out = np.empty(
        (v.size,) + cache.batch.data.shape[1:], dtype=np.uint64
    )
    if np.any(hit):
        got = _combine_lookup(cache, idx[hit], rng)
        out[np.flatnonzero(hit)] = got.data
    fresh = encrypt_scalars_batch(
        v[~hit].astype(np.float64), keys, rng, scale=cache.scale, level=cache.level
    )
    out[np.flatnonzero(~hit)] = fresh.data
    noise = max(cache.batch.noise, fresh.noise)
    return CtBatch(out, cache.scale, cache.level, cache.params, noise)


def encrypt_pixel(
    cache: PixelCache, value: int, keys: KeySet, rng: np.random.Generator
) -> Ciphertext:
    """Single-pixel convenience wrapper around encrypt_pixels."""
    batch = encrypt_pixels(cache, np.asarray([value]), keys, rng)
    return batch.cell(0, copy=True)


# ---------------------------------------------------------------------------
# ICHC persistence (entries only; pools are ephemeral by design)
# ---------------------------------------------------------------------------

def save_cache(cache: PixelCache, path: str | Path) -> None:
    if cache.strategy == STRATEGY_NONE or cache.batch is None:
        raise UnsupportedOperationError("the baseline strategy has nothing to persist")
    if len(cache.values) > 0xFFFF:
        raise FormatError("cache entry count exceeds the u16 field")  # pragma: no cover
    out = [_CACHE_HEAD.pack(MAGIC_CACHE, FORMAT_VERSION)]
    out.append(cache.params.header_bytes())
    out.append(
        _CACHE_META.pack(
            cache.fingerprint,
            _STRATEGY_TAG[cache.strategy],
            cache.radix,
            len(cache.values),
        )
    )
    for i, v in enumerate(cache.values):
        out.append(_ENTRY_HEAD.pack(int(v)))
        out.append(cell_to_bytes(cache.batch.cell(i)))
    atomic_write(path, b"".join(out))


def load_cache(path: str | Path) -> PixelCache:
    """Load cache entries; attach_pool() before randomized encryption."""
    buf = Path(path).read_bytes()
    (magic, version), off = read_exact(buf, 0, _CACHE_HEAD)
    if magic != MAGIC_CACHE:
        raise FormatError(f"not a cache file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported cache format version {version}")
    params, off = CkksParams.from_header_bytes(buf, off)
    params.validate()
    (fingerprint, tag, radix, count), off = read_exact(buf, off, _CACHE_META)
    if tag not in _TAG_STRATEGY or _TAG_STRATEGY[tag] == STRATEGY_NONE:
        raise FormatError(f"bad strategy tag {tag}")
    strategy = _TAG_STRATEGY[tag]
    values = np.empty(count, dtype=np.int64)
    cells = []
    for i in range(count):
        (values[i],), off = read_exact(buf, off, _ENTRY_HEAD)
        ct, off = cell_from_bytes(buf, off, params)
        cells.append(ct)
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    if not cells:
        raise FormatError("cache file has no entries")
    level = cells[0].level
    scale = cells[0].scale
    data = np.empty((count, 2, level + 1, params.n), dtype=np.uint64)
    for i, ct in enumerate(cells):
        if ct.level != level or ct.scale != scale or ct.degree != 1:
            raise FormatError("cache entries must share degree, level, and scale")
        data[i, 0] = ct.parts[0].res
        data[i, 1] = ct.parts[1].res
    batch = CtBatch(data, scale, level, params, 0.0)
    return PixelCache(
        strategy=strategy,
        params=params,
        fingerprint=fingerprint,
        values=values,
        batch=batch,
        radix=radix,
    )
