"""Key persistence: the ICHK container.

A key set is three files sharing one stem:

    <stem>.pub.ichk   public key (pk0, pk1), full chain
    <stem>.sec.ichk   ternary secret coefficients
    <stem>.rlk.ichk   relinearization key digits

Layout, all little-endian:

    magic   "ICHK"
    version u16
    role    u8        1 = public, 2 = secret, 3 = relin
    params  N u32, chain length u8, primes u64 each, log2(scale) u8, sigma f64
    body    role-specific

The secret and relin files carry the 32-byte fingerprint of the public key
they belong to; loaders reject mismatched material instead of decrypting
garbage.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .ckks import KeySet, RelinKey
from .errors import FormatError, KeyMismatchError
from .ntt import get_tables, ntt_forward
from .params import CkksParams, params_digest
from .poly import COEFF, EVAL, Poly, poly_mul, residues_rows
from .wire import (
    FORMAT_VERSION,
    MAGIC_KEY,
    atomic_write,
    poly_from_bytes,
    poly_to_bytes,
    read_exact,
)

ROLE_PUBLIC = 1
ROLE_SECRET = 2
ROLE_RELIN = 3

_PREFIX = struct.Struct("<4sHB")
_RELIN_HEAD = struct.Struct("<32sBB")
_FLAG = struct.Struct("<32s")

PUBLIC_SUFFIX = ".pub.ichk"
SECRET_SUFFIX = ".sec.ichk"
RELIN_SUFFIX = ".rlk.ichk"


def key_paths(stem: str | Path) -> tuple[Path, Path, Path]:
    stem = Path(stem)
    base = stem.parent / stem.name
    return (
        base.with_name(base.name + PUBLIC_SUFFIX),
        base.with_name(base.name + SECRET_SUFFIX),
        base.with_name(base.name + RELIN_SUFFIX),
    )


def _header(role: int, params: CkksParams) -> bytes:
    return _PREFIX.pack(MAGIC_KEY, FORMAT_VERSION, role) + params.header_bytes()


def _parse_header(buf) -> tuple[int, CkksParams, int]:
    (magic, version, role), off = read_exact(buf, 0, _PREFIX)
    if magic != MAGIC_KEY:
        raise FormatError(f"not a key file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported key format version {version}")
    params, off = CkksParams.from_header_bytes(buf, off)
    return role, params, off


def save_keyset(keys: KeySet, stem: str | Path) -> tuple[Path, Path, Path]:
    """Write the three key files; returns (public, secret, relin) paths."""
    pub_path, sec_path, rlk_path = key_paths(stem)
    params = keys.params

    pub = _header(ROLE_PUBLIC, params) + poly_to_bytes(keys.pk0) + poly_to_bytes(keys.pk1)
    atomic_write(pub_path, pub)

    sec = (
        _header(ROLE_SECRET, params)
        + _FLAG.pack(keys.fingerprint)
        + keys.secret.astype(np.int8).tobytes()
    )
    atomic_write(sec_path, sec)

    rk = keys.relin_key
    body = [_header(ROLE_RELIN, params)]
    body.append(_RELIN_HEAD.pack(keys.fingerprint, len(rk.digits), rk.log2_base))
    for b0, b1 in rk.digits:
        body.append(poly_to_bytes(b0))
        body.append(poly_to_bytes(b1))
    atomic_write(rlk_path, b"".join(body))
    return pub_path, sec_path, rlk_path


def load_params(path: str | Path) -> CkksParams:
    """Read only the parameter header from any key file."""
    _, params, _ = _parse_header(Path(path).read_bytes())
    params.validate()
    return params


def _load_public(path: Path) -> tuple[CkksParams, Poly, Poly]:
    buf = path.read_bytes()
    role, params, off = _parse_header(buf)
    if role != ROLE_PUBLIC:
        raise FormatError(f"{path} is not a public key file")
    params.validate()
    limbs, n = len(params.chain), params.n
    pk0, off = poly_from_bytes(buf, off, limbs, n, params.chain)
    pk1, off = poly_from_bytes(buf, off, limbs, n, params.chain)
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return params, pk0, pk1


def _load_secret(path: Path, params: CkksParams) -> tuple[bytes, np.ndarray]:
    buf = path.read_bytes()
    role, p2, off = _parse_header(buf)
    if role != ROLE_SECRET:
        raise FormatError(f"{path} is not a secret key file")
    if p2 != params:
        raise KeyMismatchError(f"{path}: parameter header differs from public key")
    (owner,), off = read_exact(buf, off, _FLAG)
    if off + params.n != len(buf):
        raise FormatError(f"{path}: secret body must be exactly N bytes")
    s = np.frombuffer(buf, dtype=np.int8, count=params.n, offset=off).copy()
    if not np.all(np.isin(s, (-1, 0, 1))):
        raise FormatError(f"{path}: secret coefficients must be ternary")
    return owner, s


def _load_relin(path: Path, params: CkksParams) -> tuple[bytes, RelinKey]:
    buf = path.read_bytes()
    role, p2, off = _parse_header(buf)
    if role != ROLE_RELIN:
        raise FormatError(f"{path} is not a relinearization key file")
    if p2 != params:
        raise KeyMismatchError(f"{path}: parameter header differs from public key")
    (owner, count, log2_base), off = read_exact(buf, off, _RELIN_HEAD)
    limbs, n = len(params.chain), params.n
    digits = []
    for _ in range(count):
        b0, off = poly_from_bytes(buf, off, limbs, n, params.chain)
        b1, off = poly_from_bytes(buf, off, limbs, n, params.chain)
        digits.append((b0, b1))
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return owner, RelinKey(tuple(digits), log2_base, params_digest(params))


def load_keyset(stem: str | Path, *, require_secret: bool = False) -> KeySet:
    """Load whichever key files exist under the stem.

    The public file is mandatory.  Secret and relin files are attached when
    present (or when require_secret demands the secret); their embedded
    fingerprint must match the loaded public key.
    """
    pub_path, sec_path, rlk_path = key_paths(stem)
    if not pub_path.exists():
        raise FormatError(f"missing public key file {pub_path}")
    params, pk0, pk1 = _load_public(pub_path)

    keys = KeySet(
        params=params,
        secret=None,
        s_hat=None,
        s2_hat=None,
        pk0=pk0,
        pk1=pk1,
        relin_key=None,
        seed=None,
    )
    if require_secret and not sec_path.exists():
        raise FormatError(f"missing secret key file {sec_path}")
    if sec_path.exists():
        owner, s = _load_secret(sec_path, params)
        if owner != keys.fingerprint:
            raise KeyMismatchError(f"{sec_path} belongs to a different public key")
        keys.secret = s
        s_hat = Poly(residues_rows(s, params.chain), COEFF)
        for i, q in enumerate(params.chain):
            ntt_forward(s_hat.res[i], get_tables(q, params.n))
        s_hat.domain = EVAL
        keys.s_hat = s_hat
        keys.s2_hat = poly_mul(s_hat, s_hat, params.chain)
    if rlk_path.exists():
        owner, rk = _load_relin(rlk_path, params)
        if owner != keys.fingerprint:
            raise KeyMismatchError(f"{rlk_path} belongs to a different public key")
        keys.relin_key = rk
    return keys


def roundtrip_check(keys: KeySet, stem: str | Path) -> bool:
    """True when saving then loading reproduces byte-identical key material."""
    save_keyset(keys, stem)
    loaded = load_keyset(stem, require_secret=True)
    return (
        loaded.params == keys.params
        and np.array_equal(loaded.secret, keys.secret)
        and np.array_equal(loaded.pk0.res, keys.pk0.res)
        and np.array_equal(loaded.pk1.res, keys.pk1.res)
        and len(loaded.relin_key.digits) == len(keys.relin_key.digits)
        and all(
            np.array_equal(x0.res, y0.res) and np.array_equal(x1.res, y1.res)
            for (x0, x1), (y0, y1) in zip(loaded.relin_key.digits, keys.relin_key.digits)
        )
    )
