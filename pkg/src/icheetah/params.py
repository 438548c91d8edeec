"""CKKS parameter sets and the residue-number-system modulus chain.

A parameter set fixes the power-of-two ring degree N, the chain of NTT-friendly
primes q_0..q_L (rescaling drops primes from the end), the scaling factor
Delta (stored as log2), the error width sigma, and an informational security
label.  Arithmetic is done limb-wise mod each prime; the integer a polynomial
coefficient represents is recovered by CRT over the active primes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import reduce

from .errors import ParameterError

# Largest prime the modular backend accepts.  The float-assisted reduction in
# the numpy fallback is exact only while quotients stay well below 2^49.
MAX_PRIME_BITS = 48

_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_WITNESSES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def find_ntt_primes(bits: int, n: int, count: int) -> list[int]:
    """Largest `count` primes of `bits` bits congruent to 1 mod 2N."""
    if bits > MAX_PRIME_BITS:
        raise ParameterError(f"prime size {bits} bits exceeds backend limit {MAX_PRIME_BITS}")
    step = 2 * n
    out: list[int] = []
    k = (1 << bits) // step
    while len(out) < count and k > 0:
        p = k * step + 1
        if p < 1 << (bits - 1):
            break
        if is_prime(p):
            out.append(p)
        k -= 1
    if len(out) < count:
        raise ParameterError(f"could not find {count} NTT primes of {bits} bits for N={n}")
    return out


@dataclass(frozen=True)
class CkksParams:
    """Immutable CKKS parameter set.

    n            ring degree, power of two >= 16
    chain        modulus chain (q_0, ..., q_L); rescale drops from the end
    log2_scale   log2 of the scaling factor Delta
    sigma        std-dev of the centered discrete Gaussian error
    security_bits  informational label only; nothing is enforced beyond docs
    """

    n: int
    chain: tuple[int, ...]
    log2_scale: int
    sigma: float = 3.2
    security_bits: int = 128

    def __post_init__(self) -> None:
        object.__setattr__(self, "chain", tuple(int(q) for q in self.chain))
        self.validate()

    def validate(self) -> None:
        n, chain = self.n, self.chain
        if n < 16 or n & (n - 1) != 0:
            raise ParameterError(f"ring degree must be a power of two >= 16, got {n}")
        if not chain:
            raise ParameterError("modulus chain is empty")
        if len(set(chain)) != len(chain):
            raise ParameterError("modulus chain primes must be distinct")
        for q in chain:
            if q.bit_length() > MAX_PRIME_BITS:
                raise ParameterError(f"chain prime {q} exceeds {MAX_PRIME_BITS} bits")
            if q % (2 * n) != 1:
                raise ParameterError(f"chain prime {q} is not 1 mod 2N (no length-{n} NTT)")
            if not is_prime(q):
                raise ParameterError(f"chain entry {q} is not prime")
        if self.log2_scale < 1:
            raise ParameterError("scaling factor must be at least 2")
        # headroom: product of chain primes >= Delta^2 * 2^16
        if self.modulus_product < (1 << (2 * self.log2_scale + 16)):
            raise ParameterError("chain product below Delta^2 * 2^16 headroom")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")

    @property
    def scale(self) -> float:
        return float(2 ** self.log2_scale)

    @property
    def max_level(self) -> int:
        """Highest level index; fresh ciphertexts start here."""
        return len(self.chain) - 1

    @property
    def modulus_product(self) -> int:
        return reduce(lambda a, b: a * b, self.chain, 1)

    def active_primes(self, level: int) -> tuple[int, ...]:
        if not 0 <= level <= self.max_level:
            raise ParameterError(f"level {level} outside [0, {self.max_level}]")
        return self.chain[: level + 1]

    def active_product(self, level: int) -> int:
        return reduce(lambda a, b: a * b, self.active_primes(level), 1)

    def header_bytes(self) -> bytes:
        """Canonical binary form shared by the key/cache/image containers."""
        head = struct.pack("<IB", self.n, len(self.chain))
        head += b"".join(struct.pack("<Q", q) for q in self.chain)
        head += struct.pack("<Bd", self.log2_scale, self.sigma)
        return head

    @classmethod
    def from_header_bytes(cls, buf: bytes, offset: int = 0) -> tuple["CkksParams", int]:
        """Parse header_bytes() output at offset; returns (params, next offset)."""
        from .errors import FormatError

        if len(buf) < offset + 5:
            raise FormatError("truncated parameter header")
        n, chain_len = struct.unpack_from("<IB", buf, offset)
        off = offset + 5
        need = off + 8 * chain_len + 9
        if len(buf) < need:
            raise FormatError("truncated parameter header")
        chain = struct.unpack_from(f"<{chain_len}Q", buf, off)
        off += 8 * chain_len
        log2_scale, sigma = struct.unpack_from("<Bd", buf, off)
        off += 9
        try:
            params = cls(n=n, chain=tuple(chain), log2_scale=log2_scale, sigma=sigma)
        except ParameterError as exc:
            raise FormatError(f"invalid parameters in header: {exc}") from exc
        return params, off


# Default set: N = 2^12 with a three-prime chain whose product is ~2^109
# (37 + 36 + 36 bits), two multiplication levels, Delta = 2^40.  The primes are
# the largest of their size congruent to 1 mod 2N, frozen here so every run
# and every serialized artifact agrees.
DEFAULT_CHAIN = (137438822401, 68719403009, 68719230977)

# Exhaustive-test set.  N = 16 is far below any meaningful lattice hardness,
# hence the name; never use it outside tests.
TOY_INSECURE_CHAIN = (1048193, 1048129)


def default_params() -> CkksParams:
    """Production preset: N=4096, ~109-bit chain, Delta=2^40, sigma=3.2."""
    return CkksParams(n=4096, chain=DEFAULT_CHAIN, log2_scale=40)


def toy_insecure_params() -> CkksParams:
    """Tiny preset for exhaustive unit tests: N=16, two 20-bit primes, Delta=2^10.

    Offers no security whatsoever (the name is the warning).
    """
    return CkksParams(n=16, chain=TOY_INSECURE_CHAIN, log2_scale=10)


PRESETS = {
    "default": default_params,
    "toy": toy_insecure_params,
}


def preset(name: str) -> CkksParams:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ParameterError(f"unknown parameter preset {name!r}") from None


_DIGEST_CACHE: dict[tuple, bytes] = {}


def params_digest(params: CkksParams) -> bytes:
    """sha256 of the canonical parameter header (32 bytes)."""
    import hashlib

    key = (params.n, params.chain, params.log2_scale, params.sigma)
    d = _DIGEST_CACHE.get(key)
    if d is None:
        d = hashlib.sha256(params.header_bytes()).digest()
        _DIGEST_CACHE[key] = d
    return d
