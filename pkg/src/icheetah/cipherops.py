"""Encrypted-domain image operations.

Everything here manipulates ciphertext cells without the secret key: local
mean filtering, brightness shifts, template matching scores, and an additive
watermark.  Only finalize_match and watermark_detect decrypt, and both take
the key set explicitly, marking the trust boundary in the API.

Matching scores:

    L1 accumulates encrypted signed differences per pixel; the absolute
    values can only be taken after decryption, so its MatchResult carries one
    difference ciphertext per pixel and finalization sums |d_i| in the clear.
    L2 squares each difference homomorphically and sums inside the
    encryption, so its MatchResult is a single degree-2 cell, relinearized
    once after the sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ckks
from .ckks import Ciphertext, KeySet, encode_scalar
from .errors import DimensionError, KeyMismatchError, UnsupportedOperationError
from .image import CipherImage, RasterImage, decrypt_cells_to_floats

DEFAULT_WATERMARK_STRENGTH = 5.0


def _like(cimg: CipherImage, cells: list[Ciphertext]) -> CipherImage:
    return CipherImage(
        width=cimg.width,
        height=cimg.height,
        channels=cimg.channels,
        strategy=cimg.strategy,
        fingerprint=cimg.fingerprint,
        params=cimg.params,
        cells=cells,
    )


def _cell_geometry(cimg: CipherImage) -> tuple[float, int]:
    first = cimg.cells[0]
    return first.scale, first.level


def brighten(cimg: CipherImage, delta: float) -> CipherImage:
    """Add a constant to every pixel; level-neutral.

    Values exceeding the pixel range are clamped at decryption, so a +50
    shift yields min(255, p + 50).
    """
    scale, level = _cell_geometry(cimg)
    pt = encode_scalar(delta, cimg.params, scale=scale, level=level)
    return _like(cimg, [ckks.add_plain(ct, pt) for ct in cimg.cells])


def mean_filter(cimg: CipherImage, size: int = 3) -> CipherImage:
    """Local mean over a size x size window with clamp-to-edge borders.

    Neighbor sums are ciphertext additions; the 1/size^2 factor is one
    plaintext multiplication followed by a rescale, so the result sits one
    level lower than the input.
    """
    if size < 1 or size % 2 == 0:
        raise DimensionError(f"window size must be odd and positive, got {size}")
    scale, level = _cell_geometry(cimg)
    if level == 0:
        raise UnsupportedOperationError(
            "mean filter needs one level of rescale headroom"
        )
    h, w = cimg.height, cimg.width
    half = size // 2
    inv = encode_scalar(1.0 / (size * size), cimg.params, level=level)
    out: list[Ciphertext] = []
    for c in range(cimg.channels):
        for y in range(h):
            for x in range(w):
                acc = None
                for dy in range(-half, half + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    for dx in range(-half, half + 1):
                        xx = min(max(x + dx, 0), w - 1)
                        ct = cimg.cell_at(c, yy, xx)
                        acc = ct.copy() if acc is None else ckks.add(acc, ct)
                acc = ckks.rescale(ckks.mul_plain(acc, inv))
                out.append(acc)
    return _like(cimg, out)


# ---------------------------------------------------------------------------
# template matching
# ---------------------------------------------------------------------------

@dataclass
class MatchResult:
    """Encrypted matching score, finalized with the secret key.

    norm "l2": score_cell holds the full squared-difference sum.
    norm "l1": diff_cells holds one signed difference per pixel.
    """

    norm: str
    fingerprint: bytes
    pixel_count: int
    score_cell: Ciphertext | None = None
    diff_cells: list[Ciphertext] = field(default_factory=list)


def _check_template(cimg: CipherImage, template: RasterImage) -> np.ndarray:
    if (template.channels, template.height, template.width) != (
        cimg.channels,
        cimg.height,
        cimg.width,
    ):
        raise DimensionError(
            f"template {template.pixels.shape} does not match image "
            f"({cimg.channels}, {cimg.height}, {cimg.width})"
        )
    return template.flat().astype(np.float64)


def _diff_cells(cimg: CipherImage, template: RasterImage) -> list[Ciphertext]:
    tvals = _check_template(cimg, template)
    scale, level = _cell_geometry(cimg)
    diffs = []
    for ct, tv in zip(cimg.cells, tvals):
        pt = encode_scalar(-float(tv), cimg.params, scale=scale, level=level)
        diffs.append(ckks.add_plain(ct, pt))
    return diffs


def match_l1(cimg: CipherImage, template: RasterImage) -> MatchResult:
    """Per-pixel encrypted differences for an L1 score."""
    return MatchResult(
        norm="l1",
        fingerprint=cimg.fingerprint,
        pixel_count=len(cimg.cells),
        diff_cells=_diff_cells(cimg, template),
    )


def match_l2(cimg: CipherImage, template: RasterImage, keys: KeySet) -> MatchResult:
    """Encrypted sum of squared differences, one cell.

    Each difference is squared (degree 2), the squares are summed, and the
    sum is relinearized once at the end; keys supplies the relinearization
    key only, never the secret.
    """
    if keys.fingerprint != cimg.fingerprint:
        raise KeyMismatchError("cipher image belongs to a different key set")
    if keys.relin_key is None:
        raise KeyMismatchError("L2 matching requires the relinearization key")
    diffs = _diff_cells(cimg, template)
    acc = None
    for d in diffs:
        sq = ckks.mul(d, d)
        acc = sq if acc is None else ckks.add(acc, sq)
    score = ckks.relinearize(acc, keys.relin_key)
    return MatchResult(
        norm="l2",
        fingerprint=cimg.fingerprint,
        pixel_count=len(cimg.cells),
        score_cell=score,
    )


def finalize_match(result: MatchResult, keys: KeySet) -> float:
    """Decrypt the matching score (requires the secret key)."""
    if keys.fingerprint != result.fingerprint:
        raise KeyMismatchError("match result belongs to a different key set")
    if result.norm == "l2":
        pt = ckks.decrypt(result.score_cell, keys)
        return float(ckks.decode_scalar(pt, keys.params))
    if result.norm == "l1":
        vals = decrypt_cells_to_floats(result.diff_cells, keys)
        return float(np.sum(np.abs(vals)))
    raise UnsupportedOperationError(f"unknown matching norm {result.norm!r}")


def match_score_plain(image: RasterImage, template: RasterImage, norm: str) -> float:
    """Plaintext oracle for the matching scores."""
    x = image.flat().astype(np.float64)
    t = template.flat().astype(np.float64)
    if x.shape != t.shape:
        raise DimensionError("image and template shapes differ")
    if norm == "l1":
        return float(np.sum(np.abs(x - t)))
    if norm == "l2":
        return float(np.sum((x - t) ** 2))
    raise UnsupportedOperationError(f"unknown matching norm {norm!r}")


# ---------------------------------------------------------------------------
# additive watermark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WatermarkSpec:
    """Additive watermark: strength added at the given (c, y, x) positions."""

    positions: tuple[tuple[int, int, int], ...]
    strength: float = DEFAULT_WATERMARK_STRENGTH

    @property
    def default_threshold(self) -> float:
        return self.strength / 2.0

    @classmethod
    def random(
        cls,
        shape: tuple[int, int, int],
        count: int,
        seed: int,
        strength: float = DEFAULT_WATERMARK_STRENGTH,
    ) -> "WatermarkSpec":
        c, h, w = shape
        rng = np.random.default_rng(seed)
        picks = rng.choice(c * h * w, size=count, replace=False)
        positions = tuple(
            (int(p // (h * w)), int(p % (h * w) // w), int(p % w)) for p in picks
        )
        return cls(positions=positions, strength=strength)


def watermark_embed(cimg: CipherImage, spec: WatermarkSpec) -> CipherImage:
    """Add the watermark strength at each marked position, in the ciphertext."""
    scale, level = _cell_geometry(cimg)
    pt = encode_scalar(spec.strength, cimg.params, scale=scale, level=level)
    cells = list(cimg.cells)
    for c, y, x in spec.positions:
        i = (c * cimg.height + y) * cimg.width + x
        cells[i] = ckks.add_plain(cells[i], pt)
    return _like(cimg, cells)


def watermark_detect(
    marked: CipherImage,
    reference: CipherImage,
    keys: KeySet,
    threshold: float,
) -> np.ndarray:
    """Boolean (c, h, w) mask of positions whose |marked - reference| >= threshold."""
    if marked.fingerprint != keys.fingerprint:
        raise KeyMismatchError("marked image belongs to a different key set")
    if reference.fingerprint != marked.fingerprint:
        raise KeyMismatchError("reference image belongs to a different key set")
    if len(marked.cells) != len(reference.cells):
        raise DimensionError("marked and reference images differ in size")
    diffs = [ckks.sub(a, b) for a, b in zip(marked.cells, reference.cells)]
    vals = decrypt_cells_to_floats(diffs, keys)
    mask = np.abs(vals) >= threshold
    return mask.reshape(marked.channels, marked.height, marked.width)
