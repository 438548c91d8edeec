"""Negacyclic number-theoretic transforms and exact vectorized modular math.

One transform per RNS limb: for each chain prime p (p = 1 mod 2N) we
precompute the powers of a primitive 2N-th root of unity in bit-reversed
order, plus Shoup companions (floor(w * 2^64 / p)) so the compiled butterfly
loops need only 64-bit multiplies.  Pointwise products in the transformed
representation realize negacyclic convolution, i.e. multiplication in
Z_p[X]/(X^N + 1).

The innermost loops are numba-compiled when numba is importable; a pure-numpy
implementation of the same butterflies (float-assisted exact reduction) is the
fallback.  An O(N^2) schoolbook multiply is retained behind a test flag as the
correctness oracle for the transform path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - sandbox always has numba
    HAVE_NUMBA = False

# Test flag: route negacyclic_mul() through the naive reference instead of the
# transform path.  Exists for oracle comparisons; never enable in production.
USE_SCHOOLBOOK = False

_U64 = np.uint64


# ---------------------------------------------------------------------------
# exact vectorized modular arithmetic (p < 2^48)
# ---------------------------------------------------------------------------

def add_mod(a, b, p: int):
    r = np.asarray(a, dtype=_U64) + np.asarray(b, dtype=_U64)
    return np.where(r >= _U64(p), r - _U64(p), r)


def sub_mod(a, b, p: int):
    r = np.asarray(a, dtype=_U64) + _U64(p) - np.asarray(b, dtype=_U64)
    return np.where(r >= _U64(p), r - _U64(p), r)


def neg_mod(a, p: int):
    a = np.asarray(a, dtype=_U64)
    return np.where(a == 0, _U64(0), _U64(p) - a)


def mul_mod(a, b, p: int):
    """Exact (a * b) mod p for uint64 operands below p < 2^48.

    The quotient is estimated in float64 and the remainder recovered with
    wrap-around uint64 arithmetic; the estimate is off by at most 2, fixed by
    the correction passes.  No 128-bit integers, no per-element division.
    """
    a = np.asarray(a, dtype=_U64)
    b = np.asarray(b, dtype=_U64)
    pu = _U64(p)
    with np.errstate(over="ignore"):  # wrap-around mod 2^64 is the point
        q = (a.astype(np.float64) * b.astype(np.float64) * (1.0 / p)).astype(_U64)
        r = a * b - q * pu
        for _ in range(2):  # true remainder may sit in (-2p, 0)
            r = np.where(r.astype(np.int64) < 0, r + pu, r)
    for _ in range(2):  # or in [p, 3p)
        r = np.where(r >= pu, r - pu, r)
    return r


# ---------------------------------------------------------------------------
# root tables
# ---------------------------------------------------------------------------

def _bit_reverse(i: int, bits: int) -> int:
    out = 0
    for _ in range(bits):
        out = (out << 1) | (i & 1)
        i >>= 1
    return out


def _find_psi(p: int, n: int) -> int:
    """Smallest primitive 2N-th root of unity mod p (deterministic)."""
    order = 2 * n
    for g in range(2, 1 << 20):
        c = pow(g, (p - 1) // order, p)
        if pow(c, n, p) == p - 1:
            return c
    raise ValueError(f"no primitive {order}-th root mod {p}")  # pragma: no cover


def _shoup(values: list[int], p: int) -> np.ndarray:
    return np.array([(v << 64) // p for v in values], dtype=_U64)


@dataclass(frozen=True)
class NttTables:
    """Per-prime transform tables (bit-reversed psi powers + Shoup pairs)."""

    p: int
    n: int
    w: np.ndarray        # psi^bitrev(i)
    w_shoup: np.ndarray
    iw: np.ndarray       # psi^-bitrev(i)
    iw_shoup: np.ndarray
    n_inv: int
    n_inv_shoup: int


_TABLE_CACHE: dict[tuple[int, int], NttTables] = {}


def get_tables(p: int, n: int) -> NttTables:
    key = (p, n)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        psi = _find_psi(p, n)
        ipsi = pow(psi, p - 2, p)
        bits = n.bit_length() - 1
        order = [_bit_reverse(i, bits) for i in range(n)]
        w = [pow(psi, r, p) for r in order]
        iw = [pow(ipsi, r, p) for r in order]
        n_inv = pow(n, p - 2, p)
        tab = NttTables(
            p=p,
            n=n,
            w=np.array(w, dtype=_U64),
            w_shoup=_shoup(w, p),
            iw=np.array(iw, dtype=_U64),
            iw_shoup=_shoup(iw, p),
            n_inv=n_inv,
            n_inv_shoup=(n_inv << 64) // p,
        )
        _TABLE_CACHE[key] = tab
    return tab


# ---------------------------------------------------------------------------
# compiled butterflies (Cooley-Tukey forward / Gentleman-Sande inverse)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(numba.uint64(numba.uint64, numba.uint64), cache=True, inline="always")
    def _mulhi(a, b):
        mask = numba.uint64(0xFFFFFFFF)
        a_lo = a & mask
        a_hi = a >> numba.uint64(32)
        b_lo = b & mask
        b_hi = b >> numba.uint64(32)
        lo = a_lo * b_lo
        m1 = a_hi * b_lo + (lo >> numba.uint64(32))
        m2 = a_lo * b_hi + (m1 & mask)
        return a_hi * b_hi + (m1 >> numba.uint64(32)) + (m2 >> numba.uint64(32))

    @numba.njit(cache=True)
    def _fwd_kernel(a, w, ws, p):
        rows, n = a.shape
        for r in range(rows):
            t = n
            m = 1
            while m < n:
                t >>= 1
                for i in range(m):
                    s = w[m + i]
                    ss = ws[m + i]
                    j1 = 2 * i * t
                    for j in range(j1, j1 + t):
                        u = a[r, j]
                        v = a[r, j + t]
                        q = _mulhi(v, ss)
                        tv = v * s - q * p
                        if tv >= p:
                            tv -= p
                        x = u + tv
                        if x >= p:
                            x -= p
                        y = u + p - tv
                        if y >= p:
                            y -= p
                        a[r, j] = x
                        a[r, j + t] = y
                m <<= 1

    @numba.njit(cache=True)
    def _inv_kernel(a, iw, iws, n_inv, n_inv_s, p):
        rows, n = a.shape
        for r in range(rows):
            t = 1
            m = n
            while m > 1:
                h = m >> 1
                j1 = 0
                for i in range(h):
                    s = iw[h + i]
                    ss = iws[h + i]
                    for j in range(j1, j1 + t):
                        u = a[r, j]
                        v = a[r, j + t]
                        x = u + v
                        if x >= p:
                            x -= p
                        d = u + p - v  # < 2p; Shoup reduction tolerates that
                        q = _mulhi(d, ss)
                        y = d * s - q * p
                        if y >= p:
                            y -= p
                        a[r, j] = x
                        a[r, j + t] = y
                    j1 += 2 * t
                t <<= 1
                m = h
            for j in range(n):
                v = a[r, j]
                q = _mulhi(v, n_inv_s)
                x = v * n_inv - q * p
                if x >= p:
                    x -= p
                a[r, j] = x


# ---------------------------------------------------------------------------
# numpy fallback butterflies
# ---------------------------------------------------------------------------

def _fwd_numpy(a: np.ndarray, tab: NttTables) -> None:
    rows, n = a.shape
    p = tab.p
    t, m = n, 1
    while m < n:
        t >>= 1
        view = a.reshape(rows, m, 2, t)
        u = view[:, :, 0, :]
        v = view[:, :, 1, :]
        tw = tab.w[m : 2 * m].reshape(1, m, 1)
        tv = mul_mod(v, tw, p)
        x = add_mod(u, tv, p)
        y = sub_mod(u, tv, p)
        view[:, :, 0, :] = x
        view[:, :, 1, :] = y
        m <<= 1


def _inv_numpy(a: np.ndarray, tab: NttTables) -> None:
    rows, n = a.shape
    p = tab.p
    m = n
    while m > 1:
        h = m >> 1
        t = n // m
        view = a.reshape(rows, h, 2, t)
        u = view[:, :, 0, :]
        v = view[:, :, 1, :]
        tw = tab.iw[h : 2 * h].reshape(1, h, 1)
        x = add_mod(u, v, p)
        y = mul_mod(sub_mod(u, v, p), tw, p)
        view[:, :, 0, :] = x
        view[:, :, 1, :] = y
        m = h
    a[:] = mul_mod(a, _U64(tab.n_inv), p)


# ---------------------------------------------------------------------------
# public transform entry points
# ---------------------------------------------------------------------------

def _rows_for_inplace(a: np.ndarray) -> tuple[np.ndarray, bool]:
    """2-D contiguous row view of `a`, plus whether it aliases `a`'s buffer."""
    if a.dtype != _U64:
        raise TypeError(f"transforms operate on uint64 residues, got {a.dtype}")
    rows = a.reshape(1, -1) if a.ndim == 1 else a.reshape(-1, a.shape[-1])
    if not rows.flags.c_contiguous:
        return np.ascontiguousarray(rows), False
    return rows, np.shares_memory(rows, a)


def ntt_forward(a: np.ndarray, tab: NttTables) -> None:
    """In-place coefficient -> evaluation transform over the trailing axis."""
    rows, aliased = _rows_for_inplace(a)
    if HAVE_NUMBA:
        _fwd_kernel(rows, tab.w, tab.w_shoup, _U64(tab.p))
    else:
        _fwd_numpy(rows, tab)
    if not aliased:
        a[...] = rows.reshape(a.shape)


def ntt_inverse(a: np.ndarray, tab: NttTables) -> None:
    """In-place evaluation -> coefficient transform over the trailing axis."""
    rows, aliased = _rows_for_inplace(a)
    if HAVE_NUMBA:
        _inv_kernel(
            rows, tab.iw, tab.iw_shoup, _U64(tab.n_inv), _U64(tab.n_inv_shoup), _U64(tab.p)
        )
    else:
        _inv_numpy(rows, tab)
    if not aliased:
        a[...] = rows.reshape(a.shape)


def eval_slot0(a: np.ndarray, tab: NttTables) -> np.ndarray:
    """Coefficient 0 (mod p) straight from the evaluation representation.

    The constant coefficient equals n^-1 times the sum over all evaluation
    points, independent of their order, so no inverse transform is needed.
    Accepts (..., N); returns the leading shape.
    """
    s = np.asarray(a, dtype=_U64).sum(axis=-1) % _U64(tab.p)
    return mul_mod(s, _U64(tab.n_inv), tab.p)


# ---------------------------------------------------------------------------
# reference path
# ---------------------------------------------------------------------------

def negacyclic_mul_schoolbook(a, b, p: int) -> np.ndarray:
    """O(N^2) big-integer negacyclic product; the oracle for the transforms."""
    av = [int(x) for x in np.asarray(a).ravel()]
    bv = [int(x) for x in np.asarray(b).ravel()]
    n = len(av)
    out = [0] * n
    for i, ai in enumerate(av):
        if ai == 0:
            continue
        for j, bj in enumerate(bv):
            k = i + j
            v = ai * bj
            if k >= n:
                out[k - n] -= v
            else:
                out[k] += v
    return np.array([v % p for v in out], dtype=_U64)


def negacyclic_mul(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """Coefficient-domain product in Z_p[X]/(X^N+1).

    Transform path by default; the schoolbook reference when USE_SCHOOLBOOK
    is set (test flag).
    """
    if USE_SCHOOLBOOK:
        return negacyclic_mul_schoolbook(a, b, p)
    n = a.shape[-1]
    tab = get_tables(p, n)
    fa = np.array(a, dtype=_U64)
    fb = np.array(b, dtype=_U64)
    ntt_forward(fa, tab)
    ntt_forward(fb, tab)
    fc = mul_mod(fa, fb, p)
    ntt_inverse(fc, tab)
    return fc
