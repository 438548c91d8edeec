"""Approximate homomorphic encryption over Z[X]/(X^N + 1) (CKKS style).

Public-key RLWE with the convention
    pk = (pk0, pk1) = (-a*s + e, a)
    ct = (v*pk0 + m + e0, v*pk1 + e1)
    decrypt: ct0 + ct1*s  (+ ct2*s^2 for degree-2)
so decryption yields m plus small noise without sign gymnastics.

Ciphertext and plaintext polynomials live in the evaluation (NTT) domain;
additions and products are pointwise per RNS limb.  Rescaling and
relinearization round-trip through the coefficient domain where the CRT
structure is needed.

Scalars use the constant-polynomial fast path: the evaluation vector of a
constant polynomial is that constant in every slot, so scalar encode costs
nothing and scalar decode is one O(N) sum per limb.  Vector encode/decode
goes through the canonical embedding (evaluations at primitive 2N-th roots).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import ntt
from .errors import (
    DomainError,
    EncodingOverflowError,
    KeyMismatchError,
    LevelExhaustedError,
    LevelMismatchError,
    ParameterError,
    ScaleMismatchError,
    UnsupportedOperationError,
)
from .ntt import get_tables, ntt_forward
from .params import CkksParams, params_digest
from .poly import (
    COEFF,
    EVAL,
    Poly,
    poly_add,
    poly_mul,
    poly_neg,
    poly_scalar_mul,
    poly_sub,
    poly_zero,
    residues_rows,
    sample_gaussian,
    sample_ternary,
    sample_uniform,
    to_coeff,
    to_eval,
)

RELIN_LOG2_BASE = 16  # digit decomposition base 2^16 for key switching
SCALE_RTOL = 2.0 ** -20  # relative tolerance when matching operand scales


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def fresh_noise_bound(params: CkksParams) -> float:
    """Documented bound on fresh-encryption noise: 2^6 * sigma * sqrt(N)."""
    return 64.0 * params.sigma * math.sqrt(params.n)


@dataclass
class OpCounters:
    """Instrumentation: fresh RLWE encryptions and decryptions performed."""

    encryptions: int = 0
    decryptions: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add_encryptions(self, k: int) -> None:
        with self._lock:
            self.encryptions += k

    def add_decryptions(self, k: int) -> None:
        with self._lock:
            self.decryptions += k


@dataclass
class Plaintext:
    poly: Poly
    scale: float
    level: int


@dataclass
class Ciphertext:
    parts: list[Poly]  # 2 (degree 1) or 3 (degree 2), evaluation domain
    scale: float
    level: int
    params: CkksParams
    noise: float  # coarse upper estimate of coefficient noise, pre-scale

    @property
    def degree(self) -> int:
        return len(self.parts) - 1

    def copy(self) -> "Ciphertext":
        return Ciphertext(
            [p.copy() for p in self.parts], self.scale, self.level, self.params, self.noise
        )

    def to_bytes(self) -> bytes:
        from .wire import cell_to_bytes

        return cell_to_bytes(self)


@dataclass(frozen=True)
class RelinKey:
    """Key-switching key for s^2 -> s, one pair per base-2^16 digit."""

    digits: tuple[tuple[Poly, Poly], ...]
    log2_base: int
    params_fingerprint: bytes


@dataclass
class KeySet:
    """Key material; secret and relin parts are None when not loaded."""

    params: CkksParams
    secret: np.ndarray | None  # (N,) int8 ternary coefficients
    s_hat: Poly | None  # NTT(s), all limbs
    s2_hat: Poly | None  # NTT-domain s^2
    pk0: Poly
    pk1: Poly
    relin_key: RelinKey | None
    seed: int | None
    counters: OpCounters = field(default_factory=OpCounters)
    _fingerprint: bytes | None = field(default=None, repr=False)

    @property
    def fingerprint(self) -> bytes:
        """sha256 over params header + public-key residues (32 bytes).

        Identifies the key set, not just the parameter set, so material from
        a different keygen run is rejected even under identical params.
        """
        if self._fingerprint is None:
            import hashlib

            h = hashlib.sha256()
            h.update(self.params.header_bytes())
            h.update(self.pk0.res.tobytes())
            h.update(self.pk1.res.tobytes())
            self._fingerprint = h.digest()
        return self._fingerprint


# ---------------------------------------------------------------------------
# CRT / rescale constant caches
# ---------------------------------------------------------------------------

_CRT_CACHE: dict[tuple[int, ...], tuple[int, list[int], list[int]]] = {}


def _crt_consts(primes: tuple[int, ...]) -> tuple[int, list[int], list[int]]:
    c = _CRT_CACHE.get(primes)
    if c is None:
        prod = 1
        for q in primes:
            prod *= q
        ms = [prod // q for q in primes]
        ys = [pow(m % q, q - 2, q) for m, q in zip(ms, primes)]
        c = (prod, ms, ys)
        _CRT_CACHE[primes] = c
    return c


def crt_lift(residues, primes: tuple[int, ...]) -> int:
    """Integer in [0, P) from one residue per prime."""
    prod, ms, ys = _crt_consts(primes)
    x = 0
    for r, m, y, q in zip(residues, ms, ys, primes):
        x += (int(r) * y % q) * m
    return x % prod


def crt_center(residues, primes: tuple[int, ...]) -> int:
    """Centered integer in (-P/2, P/2] from one residue per prime."""
    prod, _, _ = _crt_consts(primes)
    x = crt_lift(residues, primes)
    if x > prod // 2:
        x -= prod
    return x


_RESCALE_CACHE: dict[tuple[int, ...], list[int]] = {}


def _rescale_consts(primes: tuple[int, ...]) -> list[int]:
    """Inverse of the dropped (last) prime mod each remaining prime."""
    c = _RESCALE_CACHE.get(primes)
    if c is None:
        q_last = primes[-1]
        c = [pow(q_last, q - 2, q) for q in primes[:-1]]
        _RESCALE_CACHE[primes] = c
    return c


# ---------------------------------------------------------------------------
# key generation
# ---------------------------------------------------------------------------

def keygen(params: CkksParams, seed: int | None = None) -> KeySet:
    """Generate secret, public, and relinearization keys.

    Deterministic for a fixed seed (single-threaded sampling).  The secret is
    uniform ternary with nonzero Hamming weight; errors follow the discrete
    Gaussian truncated at six sigma.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    n, chain = params.n, params.chain

    s = sample_ternary(n, rng)
    while not np.any(s):  # an all-zero secret would be degenerate
        s = sample_ternary(n, rng)
    s_hat = Poly(residues_rows(s, chain), COEFF)
    for i, q in enumerate(chain):
        ntt_forward(s_hat.res[i], get_tables(q, n))
    s_hat.domain = EVAL

    def gaussian_hat() -> Poly:
        e = sample_gaussian(n, params.sigma, rng)
        p = Poly(residues_rows(e, chain), COEFF)
        for i, q in enumerate(chain):
            ntt_forward(p.res[i], get_tables(q, n))
        p.domain = EVAL
        return p

    def uniform_hat() -> Poly:
        # the NTT of a uniform ring element is uniform, so sample directly in
        # the evaluation domain
        p = sample_uniform(chain, n, rng)
        p.domain = EVAL
        return p

    a = uniform_hat()
    e_hat = gaussian_hat()
    pk0 = poly_add(poly_neg(poly_mul(a, s_hat, chain), chain), e_hat, chain)
    pk1 = a
    s2_hat = poly_mul(s_hat, s_hat, chain)

    # relinearization key: evk_j = (-a_j*s + e_j + T^j * s^2, a_j)
    top_bits = params.modulus_product.bit_length()
    digit_count = -(-top_bits // RELIN_LOG2_BASE)
    digits = []
    for j in range(digit_count):
        aj = uniform_hat()
        ej = gaussian_hat()
        tj = [pow(2, RELIN_LOG2_BASE * j, q) for q in chain]
        body = poly_add(
            poly_add(poly_neg(poly_mul(aj, s_hat, chain), chain), ej, chain),
            poly_scalar_mul(s2_hat, tj, chain),
            chain,
        )
        digits.append((body, aj))
    rk = RelinKey(tuple(digits), RELIN_LOG2_BASE, params_digest(params))

    return KeySet(
        params=params,
        secret=s,
        s_hat=s_hat,
        s2_hat=s2_hat,
        pk0=pk0,
        pk1=pk1,
        relin_key=rk,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------

def _resolve_scale_level(params: CkksParams, scale: float | None, level: int | None):
    if scale is None:
        scale = params.scale
    if level is None:
        level = params.max_level
    if not 0 <= level <= params.max_level:
        raise LevelMismatchError(f"level {level} outside chain [0, {params.max_level}]")
    if not (scale > 0 and math.isfinite(scale)):
        raise DomainError(f"scale must be positive and finite, got {scale}")
    return float(scale), int(level)


def encode_scalar(
    value: float, params: CkksParams, *, scale: float | None = None, level: int | None = None
) -> Plaintext:
    """Encode one real number as a constant polynomial at the given scale."""
    if not math.isfinite(value):
        raise DomainError(f"cannot encode non-finite value {value}")
    scale, level = _resolve_scale_level(params, scale, level)
    m0 = round_half_away(value * scale)
    if 2 * abs(m0) >= params.active_product(level):
        raise EncodingOverflowError(
            f"|{value} * {scale:g}| overflows the level-{level} modulus product"
        )
    primes = params.active_primes(level)
    rows = np.empty((len(primes), params.n), dtype=np.uint64)
    for i, q in enumerate(primes):
        rows[i] = m0 % q
    # a constant polynomial evaluates to the constant at every root: this is
    # already the evaluation-domain representation
    return Plaintext(Poly(rows, EVAL), scale, level)


def _slot_twist(n: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) / n)


def encode_vector(
    values: np.ndarray,
    params: CkksParams,
    *,
    scale: float | None = None,
    level: int | None = None,
) -> Plaintext:
    """Encode up to N/2 complex slots via the inverse canonical embedding."""
    scale, level = _resolve_scale_level(params, scale, level)
    n = params.n
    v = np.asarray(values, dtype=np.complex128).ravel()
    if v.size > n // 2:
        raise DomainError(f"at most {n // 2} slots, got {v.size}")
    slots = np.zeros(n // 2, dtype=np.complex128)
    slots[: v.size] = v * scale
    # slot k is the evaluation at zeta^(2k+1); its conjugate root sits at
    # index N-1-k, which keeps the recovered coefficients real
    evals = np.empty(n, dtype=np.complex128)
    evals[: n // 2] = slots
    evals[n // 2 :] = np.conj(slots[::-1])
    d = np.fft.fft(evals) / n
    coeffs = np.real(d * np.conj(_slot_twist(n)))
    rounded = np.floor(np.abs(coeffs) + 0.5) * np.sign(coeffs)
    peak = float(np.max(np.abs(rounded), initial=0.0))
    if peak >= 2.0 ** 62:
        raise EncodingOverflowError("encoded coefficients exceed the 63-bit embedding limit")
    if 2 * int(peak) >= params.active_product(level):
        raise EncodingOverflowError("encoded coefficients overflow the modulus product")
    primes = params.active_primes(level)
    p = Poly(residues_rows(rounded.astype(np.int64), primes), COEFF)
    return Plaintext(to_eval(p, primes), scale, level)


def _centered_coeffs(pt: Plaintext, params: CkksParams) -> np.ndarray:
    primes = params.active_primes(pt.level)
    cpoly = to_coeff(pt.poly, primes)
    out = np.empty(params.n, dtype=np.float64)
    cols = cpoly.res
    for j in range(params.n):
        out[j] = float(crt_center(cols[:, j], primes))
    return out


def decode(pt: Plaintext, params: CkksParams) -> np.ndarray:
    """Canonical-embedding decode to N/2 complex slots."""
    n = params.n
    c = _centered_coeffs(pt, params)
    evals = np.fft.ifft(c * _slot_twist(n)) * n
    return evals[: n // 2] / pt.scale


def decode_scalar(pt: Plaintext, params: CkksParams) -> float:
    """Constant-coefficient decode (the scalar fast path).

    The constant coefficient equals N^-1 times the sum of the evaluation
    vector, so no inverse transform is needed.
    """
    primes = params.active_primes(pt.level)
    if pt.poly.domain == EVAL:
        residues = [
            int(ntt.eval_slot0(pt.poly.res[i], get_tables(q, params.n)))
            for i, q in enumerate(primes)
        ]
    else:
        residues = [int(pt.poly.res[i, 0]) for i in range(len(primes))]
    return crt_center(residues, primes) / pt.scale


# ---------------------------------------------------------------------------
# batched fresh encryption (the pixel hot path)
# ---------------------------------------------------------------------------

def _small_residues(x: np.ndarray, q: int) -> np.ndarray:
    """Residues of small signed ints without per-element division."""
    xi = x.astype(np.int64, copy=False)
    return np.where(xi < 0, xi + q, xi).astype(np.uint64)


if ntt.HAVE_NUMBA:
    import numba

    @numba.njit(cache=True)
    def _enc_combine_kernel(vhat, e0hat, e1hat, pk0, pk1, mres, p, c0, c1):
        # c0 = v*pk0 + e0 + m ; c1 = v*pk1 + e1, all mod p, one memory sweep.
        # The quotient of each product is estimated in float64 (exact for
        # p < 2^48) and corrected with conditional subtractions.
        rows, n = vhat.shape
        pinv = 1.0 / p
        twop = p + p
        for b in range(rows):
            mb = mres[b]
            for j in range(n):
                vv = vhat[b, j]
                w = pk0[j]
                q = np.uint64(np.float64(vv) * np.float64(w) * pinv)
                r = vv * w + twop - q * p
                if r >= twop:
                    r -= twop
                if r >= p:
                    r -= p
                if r >= p:
                    r -= p
                r += e0hat[b, j]
                if r >= p:
                    r -= p
                r += mb
                if r >= p:
                    r -= p
                c0[b, j] = r
                w = pk1[j]
                q = np.uint64(np.float64(vv) * np.float64(w) * pinv)
                r = vv * w + twop - q * p
                if r >= twop:
                    r -= twop
                if r >= p:
                    r -= p
                if r >= p:
                    r -= p
                r += e1hat[b, j]
                if r >= p:
                    r -= p
                c1[b, j] = r

    @numba.njit(cache=True)
    def _dec_slot0_kernel(c0, c1, s_row, p, n_inv, out):
        # constant coefficient of c0 + c1*s per row: n_inv * sum of evals
        rows, n = c0.shape
        pinv = 1.0 / p
        twop = p + p
        for b in range(rows):
            acc = np.uint64(0)
            for j in range(n):
                vv = c1[b, j]
                w = s_row[j]
                q = np.uint64(np.float64(vv) * np.float64(w) * pinv)
                r = vv * w + twop - q * p
                if r >= twop:
                    r -= twop
                if r >= p:
                    r -= p
                if r >= p:
                    r -= p
                r += c0[b, j]
                if r >= p:
                    r -= p
                acc += r  # n * p < 2^61: no wrap before the final reduction
            acc = acc % p
            q = np.uint64(np.float64(acc) * np.float64(n_inv) * pinv)
            r = acc * n_inv + twop - q * p
            if r >= twop:
                r -= twop
            if r >= p:
                r -= p
            if r >= p:
                r -= p
            out[b] = r


@dataclass
class CtBatch:
    """A chunk of degree-1 ciphertexts in one stacked array.

    data has shape (B, 2, limbs, N): batch, part, limb, coefficient.  Cell b
    serializes as data[b].tobytes() which matches the wire cell layout.
    """

    data: np.ndarray
    scale: float
    level: int
    params: CkksParams
    noise: float

    def __len__(self) -> int:
        return self.data.shape[0]

    def cell(self, b: int, copy: bool = False) -> Ciphertext:
        part0 = self.data[b, 0]
        part1 = self.data[b, 1]
        if copy:
            part0, part1 = part0.copy(), part1.copy()
        return Ciphertext(
            [Poly(part0, EVAL), Poly(part1, EVAL)],
            self.scale,
            self.level,
            self.params,
            self.noise,
        )

    def cells(self, copy: bool = False) -> list[Ciphertext]:
        return [self.cell(b, copy) for b in range(len(self))]


def encrypt_scalars_batch(
    values: np.ndarray,
    keys: KeySet,
    rng: np.random.Generator,
    *,
    scale: float | None = None,
    level: int | None = None,
) -> CtBatch:
    """Fresh encryptions of a vector of real scalars (one ciphertext each).

    Identical cryptography to calling encrypt() per value (independent v, e0,
    e1 per ciphertext); the transforms and modular sweeps are batched.
    """
    params = keys.params
    scale, level = _resolve_scale_level(params, scale, level)
    primes = params.active_primes(level)
    limbs = len(primes)
    n = params.n
    vals = np.asarray(values, dtype=np.float64).ravel()
    b_sz = vals.size
    if b_sz == 0:
        return CtBatch(np.empty((0, 2, limbs, n), dtype=np.uint64), scale, level, params, 0.0)

    m0 = (np.floor(np.abs(vals) * scale + 0.5) * np.sign(vals)).astype(np.int64)
    if 2 * int(np.max(np.abs(m0), initial=0)) >= params.active_product(level):
        raise EncodingOverflowError("scaled batch values overflow the modulus product")

    v = sample_ternary(n, rng, (b_sz,))
    e0 = sample_gaussian(n, params.sigma, rng, (b_sz,))
    e1 = sample_gaussian(n, params.sigma, rng, (b_sz,))

    out = np.empty((b_sz, 2, limbs, n), dtype=np.uint64)
    stack = np.empty((3 * b_sz, n), dtype=np.uint64)
    for i, q in enumerate(primes):
        tab = get_tables(q, n)
        stack[:b_sz] = _small_residues(v, q)
        stack[b_sz : 2 * b_sz] = _small_residues(e0, q)
        stack[2 * b_sz :] = _small_residues(e1, q)
        ntt_forward(stack, tab)
        m_col = (m0 % q).astype(np.uint64)
        c0 = out[:, 0, i, :]
        c1 = out[:, 1, i, :]
        if ntt.HAVE_NUMBA:
            _enc_combine_kernel(
                stack[:b_sz],
                stack[b_sz : 2 * b_sz],
                stack[2 * b_sz :],
                keys.pk0.res[i],
                keys.pk1.res[i],
                m_col,
                np.uint64(q),
                c0,
                c1,
            )
        else:
            vh = stack[:b_sz]
            t0 = ntt.mul_mod(vh, keys.pk0.res[i], q)
            t0 = ntt.add_mod(t0, stack[b_sz : 2 * b_sz], q)
            c0[:] = ntt.add_mod(t0, m_col[:, None], q)
            t1 = ntt.mul_mod(vh, keys.pk1.res[i], q)
            c1[:] = ntt.add_mod(t1, stack[2 * b_sz :], q)
    keys.counters.add_encryptions(b_sz)
    return CtBatch(out, scale, level, params, fresh_noise_bound(params))


def decrypt_slot0_batch(batch: CtBatch, keys: KeySet) -> np.ndarray:
    """Decrypt a batch of degree-1 scalar ciphertexts to float values."""
    if keys.s_hat is None:
        raise KeyMismatchError("decryption requires the secret key")
    if batch.params != keys.params:
        raise KeyMismatchError("ciphertext batch was produced under different parameters")
    primes = keys.params.active_primes(batch.level)
    n = keys.params.n
    b_sz = len(batch)
    res = np.empty((len(primes), b_sz), dtype=np.uint64)
    for i, q in enumerate(primes):
        tab = get_tables(q, n)
        c0 = np.ascontiguousarray(batch.data[:, 0, i, :])
        c1 = np.ascontiguousarray(batch.data[:, 1, i, :])
        if ntt.HAVE_NUMBA:
            _dec_slot0_kernel(
                c0, c1, keys.s_hat.res[i], np.uint64(q), np.uint64(tab.n_inv), res[i]
            )
        else:
            m = ntt.add_mod(c0, ntt.mul_mod(c1, keys.s_hat.res[i], q), q)
            res[i] = ntt.eval_slot0(m, tab)
    keys.counters.add_decryptions(b_sz)
    out = np.empty(b_sz, dtype=np.float64)
    cols = res.T
    for b in range(b_sz):
        out[b] = crt_center(cols[b], primes) / batch.scale
    return out


# ---------------------------------------------------------------------------
# encrypt / decrypt (single ciphertext)
# ---------------------------------------------------------------------------

def zero_ciphertext(
    params: CkksParams, *, scale: float | None = None, level: int | None = None
) -> Ciphertext:
    """The trivial all-zero ciphertext (decrypts to 0; carries no randomness)."""
    scale, level = _resolve_scale_level(params, scale, level)
    limbs = level + 1
    return Ciphertext(
        [poly_zero(limbs, params.n), poly_zero(limbs, params.n)], scale, level, params, 0.0
    )


def encrypt(pt: Plaintext, keys: KeySet, rng: np.random.Generator) -> Ciphertext:
    """Fresh public-key encryption of one plaintext."""
    params = keys.params
    primes = params.active_primes(pt.level)
    limbs = len(primes)
    n = params.n

    v_hat = to_eval(Poly(residues_rows(sample_ternary(n, rng), primes), COEFF), primes)
    e0_hat = to_eval(
        Poly(residues_rows(sample_gaussian(n, params.sigma, rng), primes), COEFF), primes
    )
    e1_hat = to_eval(
        Poly(residues_rows(sample_gaussian(n, params.sigma, rng), primes), COEFF), primes
    )

    pk0 = Poly(keys.pk0.res[:limbs], EVAL)
    pk1 = Poly(keys.pk1.res[:limbs], EVAL)
    m_hat = pt.poly if pt.poly.domain == EVAL else to_eval(pt.poly, primes)
    c0 = poly_add(poly_add(poly_mul(v_hat, pk0, primes), e0_hat, primes), m_hat, primes)
    c1 = poly_add(poly_mul(v_hat, pk1, primes), e1_hat, primes)
    keys.counters.add_encryptions(1)
    return Ciphertext([c0, c1], pt.scale, pt.level, params, fresh_noise_bound(params))


def decrypt(ct: Ciphertext, keys: KeySet) -> Plaintext:
    """Decrypt a degree-1 or degree-2 ciphertext to a noisy plaintext."""
    if keys.s_hat is None:
        raise KeyMismatchError("decryption requires the secret key")
    if ct.params != keys.params:
        raise KeyMismatchError("ciphertext was produced under different parameters")
    if ct.degree not in (1, 2):
        raise UnsupportedOperationError(f"cannot decrypt degree-{ct.degree} ciphertext")
    primes = keys.params.active_primes(ct.level)
    limbs = len(primes)
    s1 = Poly(keys.s_hat.res[:limbs], EVAL)
    m = poly_add(ct.parts[0], poly_mul(ct.parts[1], s1, primes), primes)
    if ct.degree == 2:
        s2 = Poly(keys.s2_hat.res[:limbs], EVAL)
        m = poly_add(m, poly_mul(ct.parts[2], s2, primes), primes)
    keys.counters.add_decryptions(1)
    return Plaintext(m, ct.scale, ct.level)


# ---------------------------------------------------------------------------
# homomorphic operations
# ---------------------------------------------------------------------------

def _check_pair(a: Ciphertext, b: Ciphertext) -> None:
    if a.params != b.params:
        raise KeyMismatchError("operands use different parameter sets")
    if a.level != b.level:
        raise LevelMismatchError(f"levels differ: {a.level} vs {b.level}")


def _check_scales(sa: float, sb: float) -> None:
    if abs(sa - sb) > SCALE_RTOL * max(sa, sb):
        raise ScaleMismatchError(f"scales differ beyond tolerance: {sa:g} vs {sb:g}")


def _padded_parts(a: Ciphertext, b: Ciphertext) -> tuple[list[Poly], list[Poly], int]:
    deg = max(len(a.parts), len(b.parts))
    limbs = a.level + 1
    n = a.params.n
    pa = list(a.parts) + [poly_zero(limbs, n) for _ in range(deg - len(a.parts))]
    pb = list(b.parts) + [poly_zero(limbs, n) for _ in range(deg - len(b.parts))]
    return pa, pb, deg


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition; degree-2 operands are padded as needed."""
    _check_pair(a, b)
    _check_scales(a.scale, b.scale)
    primes = a.params.active_primes(a.level)
    pa, pb, _ = _padded_parts(a, b)
    parts = [poly_add(x, y, primes) for x, y in zip(pa, pb)]
    return Ciphertext(parts, a.scale, a.level, a.params, a.noise + b.noise)


def sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic subtraction (a - b)."""
    _check_pair(a, b)
    _check_scales(a.scale, b.scale)
    primes = a.params.active_primes(a.level)
    pa, pb, _ = _padded_parts(a, b)
    parts = [poly_sub(x, y, primes) for x, y in zip(pa, pb)]
    return Ciphertext(parts, a.scale, a.level, a.params, a.noise + b.noise)


def add_plain(ct: Ciphertext, pt: Plaintext) -> Ciphertext:
    """Add an encoded constant; scale and level must match the ciphertext."""
    if ct.level != pt.level:
        raise LevelMismatchError(f"levels differ: {ct.level} vs {pt.level}")
    _check_scales(ct.scale, pt.scale)
    primes = ct.params.active_primes(ct.level)
    p = pt.poly if pt.poly.domain == EVAL else to_eval(pt.poly, primes)
    parts = [poly_add(ct.parts[0], p, primes)] + [q.copy() for q in ct.parts[1:]]
    return Ciphertext(parts, ct.scale, ct.level, ct.params, ct.noise + 0.5)


def mul_plain(ct: Ciphertext, pt: Plaintext) -> Ciphertext:
    """Multiply by an encoded constant; the scales multiply."""
    if ct.level != pt.level:
        raise LevelMismatchError(f"levels differ: {ct.level} vs {pt.level}")
    primes = ct.params.active_primes(ct.level)
    p = pt.poly if pt.poly.domain == EVAL else to_eval(pt.poly, primes)
    parts = [poly_mul(q, p, primes) for q in ct.parts]
    # noise heuristic assumes |encoded value| <= 256 (the pixel domain)
    noise = ct.noise * 256.0 * pt.scale
    return Ciphertext(parts, ct.scale * pt.scale, ct.level, ct.params, noise)


def mul(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Ciphertext-ciphertext product; yields a degree-2 ciphertext."""
    _check_pair(a, b)
    if a.degree != 1 or b.degree != 1:
        raise UnsupportedOperationError(
            "product needs degree-1 operands: relinearize first"
        )
    primes = a.params.active_primes(a.level)
    a0, a1 = a.parts
    b0, b1 = b.parts
    d0 = poly_mul(a0, b0, primes)
    d1 = poly_add(poly_mul(a0, b1, primes), poly_mul(a1, b0, primes), primes)
    d2 = poly_mul(a1, b1, primes)
    noise = a.noise * 256.0 * b.scale + b.noise * 256.0 * a.scale + a.noise * b.noise
    return Ciphertext([d0, d1, d2], a.scale * b.scale, a.level, a.params, noise)


def relinearize(ct: Ciphertext, rk: RelinKey) -> Ciphertext:
    """Reduce a degree-2 ciphertext back to degree 1 via digit key-switching.

    The c2 part is CRT-lifted to [0, P), split into base-2^16 digits, and each
    digit is paired with its key-switch key.  Degree-1 input is a no-op copy.
    """
    if ct.degree == 1:
        return ct.copy()
    if ct.degree != 2:
        raise UnsupportedOperationError(f"cannot relinearize degree-{ct.degree}")
    if rk.params_fingerprint != params_digest(ct.params):
        raise KeyMismatchError("relinearization key belongs to different parameters")
    params = ct.params
    primes = params.active_primes(ct.level)
    limbs = len(primes)
    n = params.n
    base = rk.log2_base
    digit_count = -(-params.active_product(ct.level).bit_length() // base)
    if digit_count > len(rk.digits):
        raise ParameterError("relinearization key has too few digits")  # pragma: no cover

    c2 = to_coeff(ct.parts[2], primes)
    cols = c2.res
    digs = np.zeros((digit_count, n), dtype=np.uint64)
    mask = (1 << base) - 1
    for j in range(n):
        x = crt_lift(cols[:, j], primes)
        t = 0
        while x:
            digs[t, j] = x & mask
            x >>= base
            t += 1

    acc0 = poly_zero(limbs, n)
    acc1 = poly_zero(limbs, n)
    for t in range(digit_count):
        dp = Poly(np.tile(digs[t], (limbs, 1)), COEFF)
        dp = to_eval(dp, primes)
        b0, b1 = rk.digits[t]
        acc0 = poly_add(acc0, poly_mul(dp, Poly(b0.res[:limbs], EVAL), primes), primes)
        acc1 = poly_add(acc1, poly_mul(dp, Poly(b1.res[:limbs], EVAL), primes), primes)

    parts = [
        poly_add(ct.parts[0], acc0, primes),
        poly_add(ct.parts[1], acc1, primes),
    ]
    extra = digit_count * (2.0 ** base) * params.sigma * 8.0 * math.sqrt(n)
    return Ciphertext(parts, ct.scale, ct.level, params, ct.noise + extra)


def rescale(ct: Ciphertext) -> Ciphertext:
    """Drop the last active prime, dividing value and scale by it."""
    if ct.level == 0:
        raise LevelExhaustedError("no prime left to drop at level 0")
    params = ct.params
    primes = params.active_primes(ct.level)
    q_last = primes[-1]
    inv = _rescale_consts(primes)
    new_parts = []
    for part in ct.parts:
        cp = to_coeff(part, primes)
        x_last = cp.res[-1]
        centered = x_last.astype(np.int64)
        centered = np.where(x_last > q_last // 2, centered - q_last, centered)
        rows = np.empty((len(primes) - 1, params.n), dtype=np.uint64)
        for i, q in enumerate(primes[:-1]):
            d = (cp.res[i].astype(np.int64) - centered) % q
            rows[i] = ntt.mul_mod(d.astype(np.uint64), np.uint64(inv[i]), q)
            ntt_forward(rows[i], get_tables(q, params.n))
        new_parts.append(Poly(rows, EVAL))
    noise = ct.noise / q_last + 2.0 * math.sqrt(params.n)
    return Ciphertext(new_parts, ct.scale / q_last, ct.level - 1, params, noise)
