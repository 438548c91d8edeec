"""RNS ring elements and the samplers behind keys and fresh encryptions.

A Poly holds one residue row per active chain prime, shape (limbs, N) uint64.
All rows represent the same integer polynomial mod the product of the active
primes (CRT).  Arithmetic helpers take the active prime tuple explicitly;
nothing here knows about levels or scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ntt import add_mod, get_tables, mul_mod, neg_mod, ntt_forward, ntt_inverse, sub_mod

COEFF = "coeff"
EVAL = "eval"


@dataclass
class Poly:
    res: np.ndarray  # (limbs, n) uint64
    domain: str

    @property
    def limbs(self) -> int:
        return self.res.shape[0]

    @property
    def n(self) -> int:
        return self.res.shape[-1]

    def copy(self) -> "Poly":
        return Poly(self.res.copy(), self.domain)


def poly_zero(limbs: int, n: int, domain: str = EVAL) -> Poly:
    return Poly(np.zeros((limbs, n), dtype=np.uint64), domain)


def poly_from_signed(coeffs: np.ndarray, primes: tuple[int, ...], domain: str = COEFF) -> Poly:
    """Embed small signed integer coefficients as residue rows."""
    c = np.asarray(coeffs, dtype=np.int64)
    rows = np.empty((len(primes), c.shape[-1]), dtype=np.uint64)
    for i, q in enumerate(primes):
        rows[i] = (c % q).astype(np.uint64)
    return Poly(rows, domain)


def residues_rows(coeffs: np.ndarray, primes: tuple[int, ...]) -> np.ndarray:
    """Residue rows for a batch: (..., n) signed ints -> (limbs, ..., n)."""
    c = np.asarray(coeffs, dtype=np.int64)
    out = np.empty((len(primes),) + c.shape, dtype=np.uint64)
    for i, q in enumerate(primes):
        out[i] = (c % q).astype(np.uint64)
    return out


def _binary(a: Poly, b: Poly, primes, fn) -> Poly:
    if a.domain != b.domain:
        raise ValueError(f"domain mismatch: {a.domain} vs {b.domain}")
    if a.res.shape != b.res.shape:
        raise ValueError(f"shape mismatch: {a.res.shape} vs {b.res.shape}")
    rows = np.empty_like(a.res)
    for i, q in enumerate(primes):
        rows[i] = fn(a.res[i], b.res[i], q)
    return Poly(rows, a.domain)


def poly_add(a: Poly, b: Poly, primes: tuple[int, ...]) -> Poly:
    return _binary(a, b, primes, add_mod)


def poly_sub(a: Poly, b: Poly, primes: tuple[int, ...]) -> Poly:
    return _binary(a, b, primes, sub_mod)


def poly_neg(a: Poly, primes: tuple[int, ...]) -> Poly:
    rows = np.empty_like(a.res)
    for i, q in enumerate(primes):
        rows[i] = neg_mod(a.res[i], q)
    return Poly(rows, a.domain)


def poly_mul(a: Poly, b: Poly, primes: tuple[int, ...]) -> Poly:
    """Pointwise product; both operands must be in the evaluation domain."""
    if a.domain != EVAL or b.domain != EVAL:
        raise ValueError("pointwise product needs evaluation-domain operands")
    return _binary(a, b, primes, mul_mod)


def poly_scalar_mul(a: Poly, scalars: list[int], primes: tuple[int, ...]) -> Poly:
    """Multiply by a constant given as one residue per limb."""
    rows = np.empty_like(a.res)
    for i, q in enumerate(primes):
        rows[i] = mul_mod(a.res[i], np.uint64(scalars[i] % q), q)
    return Poly(rows, a.domain)


def to_eval(a: Poly, primes: tuple[int, ...]) -> Poly:
    if a.domain == EVAL:
        return a.copy()
    rows = a.res.copy()
    for i, q in enumerate(primes):
        ntt_forward(rows[i], get_tables(q, a.n))
    return Poly(rows, EVAL)


def to_coeff(a: Poly, primes: tuple[int, ...]) -> Poly:
    if a.domain == COEFF:
        return a.copy()
    rows = a.res.copy()
    for i, q in enumerate(primes):
        ntt_inverse(rows[i], get_tables(q, a.n))
    return Poly(rows, COEFF)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_ternary(n: int, rng: np.random.Generator, shape: tuple[int, ...] = ()) -> np.ndarray:
    """Uniform coefficients over {-1, 0, 1}, int8."""
    return (rng.integers(0, 3, shape + (n,), dtype=np.int8) - 1).astype(np.int8)


_GAUSS_TABLES: dict[float, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_table(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    tab = _GAUSS_TABLES.get(sigma)
    if tab is None:
        # inverse-CDF table for the centered discrete Gaussian, truncated at
        # six standard deviations
        tail = int(6.0 * sigma)
        support = np.arange(-tail, tail + 1)
        weights = np.exp(-(support.astype(np.float64) ** 2) / (2.0 * sigma * sigma))
        cdf = np.cumsum(weights / weights.sum())
        cdf[-1] = 1.0  # guard against accumulated rounding above/below 1
        tab = (cdf, support.astype(np.int64))
        _GAUSS_TABLES[sigma] = tab
    return tab


def sample_gaussian(
    n: int, sigma: float, rng: np.random.Generator, shape: tuple[int, ...] = ()
) -> np.ndarray:
    """Centered discrete Gaussian via inverse-CDF lookup, int64."""
    cdf, support = _gauss_table(sigma)
    u = rng.random(shape + (n,))
    return support[np.searchsorted(cdf, u, side="right")]


def sample_uniform(
    primes: tuple[int, ...], n: int, rng: np.random.Generator
) -> Poly:
    """Uniform ring element mod the prime product, sampled limb-wise.

    Independent uniform residues per limb are exactly a uniform element of
    Z_Q (CRT is a bijection), so no big-integer sampling is needed.
    """
    rows = np.empty((len(primes), n), dtype=np.uint64)
    for i, q in enumerate(primes):
        rows[i] = rng.integers(0, q, n, dtype=np.uint64)
    return Poly(rows, COEFF)
