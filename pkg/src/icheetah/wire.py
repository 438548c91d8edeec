"""Binary layouts shared by the key, cache, and image containers.

All integers are little-endian.  A ciphertext cell is

    degree  u8      (1 or 2)
    level   u8
    scale   f64
    parts   (degree+1) x (level+1) x N  u64 residues, limb-major

so a cell is self-describing given the parameter set (N and the prime chain
come from the container header).  Writers go through atomic_write: the bytes
land in a same-directory temp file which is fsynced and renamed over the
destination, so readers never observe a half-written file.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .ckks import Ciphertext, CtBatch
from .errors import FormatError
from .params import CkksParams
from .poly import EVAL, Poly

_CELL_HEAD = struct.Struct("<BBd")

MAGIC_KEY = b"ICHK"
MAGIC_CACHE = b"ICHC"
MAGIC_IMAGE = b"ICHI"
FORMAT_VERSION = 1


def cell_nbytes(params: CkksParams, level: int, degree: int) -> int:
    return _CELL_HEAD.size + (degree + 1) * (level + 1) * params.n * 8


def cell_to_bytes(ct: Ciphertext) -> bytes:
    out = [_CELL_HEAD.pack(ct.degree, ct.level, ct.scale)]
    for part in ct.parts:
        out.append(part.res.astype("<u8", copy=False).tobytes())
    return b"".join(out)


def cell_from_bytes(buf, offset: int, params: CkksParams) -> tuple[Ciphertext, int]:
    """Parse one cell at offset; returns (ciphertext, next offset)."""
    mv = memoryview(buf)
    try:
        degree, level, scale = _CELL_HEAD.unpack_from(mv, offset)
    except struct.error as exc:
        raise FormatError(f"truncated cell header at offset {offset}") from exc
    if degree not in (1, 2):
        raise FormatError(f"cell degree must be 1 or 2, got {degree}")
    if level > params.max_level:
        raise FormatError(f"cell level {level} exceeds chain length")
    offset += _CELL_HEAD.size
    limbs = level + 1
    n = params.n
    parts = []
    for _ in range(degree + 1):
        nbytes = limbs * n * 8
        if offset + nbytes > len(mv):
            raise FormatError("truncated cell body")
        rows = np.frombuffer(mv, dtype="<u8", count=limbs * n, offset=offset)
        parts.append(Poly(rows.astype(np.uint64).reshape(limbs, n), EVAL))
        offset += nbytes
    for part, q_checks in zip(parts, [params.active_primes(level)] * len(parts)):
        for i, q in enumerate(q_checks):
            if part.res[i].max(initial=0) >= q:
                raise FormatError(f"cell residue out of range for prime {q}")
    return Ciphertext(parts, scale, level, params, 0.0), offset


def batch_to_bytes(batch: CtBatch) -> bytes:
    """Serialize a degree-1 batch as its cells, concatenated."""
    head = _CELL_HEAD.pack(1, batch.level, batch.scale)
    body = batch.data.astype("<u8", copy=False)
    return b"".join(head + body[b].tobytes() for b in range(len(batch)))


def poly_to_bytes(p: Poly) -> bytes:
    return p.res.astype("<u8", copy=False).tobytes()


def poly_from_bytes(buf, offset: int, limbs: int, n: int, primes) -> tuple[Poly, int]:
    nbytes = limbs * n * 8
    mv = memoryview(buf)
    if offset + nbytes > len(mv):
        raise FormatError("truncated polynomial block")
    rows = np.frombuffer(mv, dtype="<u8", count=limbs * n, offset=offset)
    rows = rows.astype(np.uint64).reshape(limbs, n)
    for i, q in enumerate(primes[:limbs]):
        if rows[i].max(initial=0) >= q:
            raise FormatError(f"polynomial residue out of range for prime {q}")
    return Poly(rows, EVAL), offset + nbytes


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write bytes so that the destination is never seen half-written."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def read_exact(buf, offset: int, fmt: struct.Struct):
    try:
        vals = fmt.unpack_from(buf, offset)
    except struct.error as exc:
        raise FormatError(f"truncated header at offset {offset}") from exc
    return vals, offset + fmt.size
