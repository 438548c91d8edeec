"""Raster images, the in-repo BMP codec, and encrypted-image containers.

Pixel layout is channel-major: a RasterImage holds a (channels, height,
width) uint8 array, and encrypted cells follow the same order (all of channel
0 row by row, then channel 1, ...).  An encrypted image is enormous compared
to its plaintext (one ciphertext per pixel), so the file paths stream chunks
of pixels and never materialize a whole cipher image; the in-memory
CipherImage exists for the encrypted-domain operators and should be kept to
small or medium sizes.

BMP support is implemented here (8-bit palette and 24-bit BI_RGB, the two
classic uncompressed flavors); PNG decoding is delegated to Pillow.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cache import PixelCache, _STRATEGY_TAG, _TAG_STRATEGY, encrypt_pixels
from .ckks import Ciphertext, CtBatch, KeySet, decrypt, decrypt_slot0_batch, decode_scalar
from .errors import DimensionError, FormatError, KeyMismatchError
from .params import CkksParams
from .wire import (
    FORMAT_VERSION,
    MAGIC_IMAGE,
    atomic_write,
    cell_from_bytes,
    cell_to_bytes,
    read_exact,
)

# 64 cells keeps every transient batch a few MB, small enough for the
# allocator to recycle; 512-cell chunks refault ~100 MB of pages per call
# and measure 30-50% slower on the cached path
DEFAULT_CHUNK = 64
WORKERS_ENV = "ICHEETAH_WORKERS"


def workers_from_env(explicit: int | None = None) -> int:
    if explicit is not None:
        n = explicit
    else:
        raw = os.environ.get(WORKERS_ENV)
        n = int(raw) if raw else 1
    if n < 1:
        raise DimensionError(f"worker count must be positive, got {n}")
    return n


# ---------------------------------------------------------------------------
# plain raster images
# ---------------------------------------------------------------------------

@dataclass
class RasterImage:
    """uint8 pixels, channel-major (channels, height, width)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.pixels)
        if p.ndim == 2:
            p = p[None, :, :]
        if p.ndim != 3:
            raise DimensionError(f"expected 2-D or 3-D pixel array, got shape {p.shape}")
        if p.shape[0] not in (1, 3):
            raise DimensionError(f"expected 1 or 3 channels, got {p.shape[0]}")
        if p.shape[1] == 0 or p.shape[2] == 0:
            raise DimensionError("image has no pixels")
        if p.dtype != np.uint8:
            if p.min(initial=0) < 0 or p.max(initial=0) > 255:
                raise DimensionError("pixel values outside [0, 255]")
            p = p.astype(np.uint8)
        self.pixels = np.ascontiguousarray(p)

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        """Accept (h, w), (h, w, 1|3) channel-last, or (1|3, h, w)."""
        a = np.asarray(arr)
        if a.ndim == 3 and a.shape[2] in (1, 3) and a.shape[0] not in (1, 3):
            a = np.moveaxis(a, 2, 0)
        return cls(a)

    def to_array(self) -> np.ndarray:
        """Channel-last (h, w, c) copy, or (h, w) for grayscale."""
        if self.channels == 1:
            return self.pixels[0].copy()
        return np.moveaxis(self.pixels, 0, 2).copy()

    def flat(self) -> np.ndarray:
        """Channel-major flattened pixel vector."""
        return self.pixels.reshape(-1)


# ---------------------------------------------------------------------------
# BMP codec
# ---------------------------------------------------------------------------

_BMP_FILE = struct.Struct("<2sIHHI")
_BMP_INFO = struct.Struct("<IiiHHIIiiII")
_BI_RGB = 0


def save_bmp(img: RasterImage, path: str | Path) -> None:
    """Write 8-bit palette (grayscale) or 24-bit BI_RGB."""
    h, w = img.height, img.width
    if img.channels == 1:
        row_bytes = (w + 3) & ~3
        palette = b"".join(struct.pack("<BBBB", i, i, i, 0) for i in range(256))
        offset = _BMP_FILE.size + _BMP_INFO.size + len(palette)
        rows = np.zeros((h, row_bytes), dtype=np.uint8)
        rows[:, :w] = img.pixels[0]
        body = rows[::-1].tobytes()  # bottom-up
        info = _BMP_INFO.pack(40, w, h, 1, 8, _BI_RGB, len(body), 2835, 2835, 256, 0)
        head = _BMP_FILE.pack(b"BM", offset + len(body), 0, 0, offset)
        atomic_write(path, head + info + palette + body)
    else:
        row_bytes = (3 * w + 3) & ~3
        offset = _BMP_FILE.size + _BMP_INFO.size
        rows = np.zeros((h, row_bytes), dtype=np.uint8)
        bgr = img.pixels[::-1]  # RGB planes -> BGR order
        rows[:, : 3 * w] = np.moveaxis(bgr, 0, 2).reshape(h, 3 * w)
        body = rows[::-1].tobytes()
        info = _BMP_INFO.pack(40, w, h, 1, 24, _BI_RGB, len(body), 2835, 2835, 0, 0)
        head = _BMP_FILE.pack(b"BM", offset + len(body), 0, 0, offset)
        atomic_write(path, head + info + body)


def load_bmp(path: str | Path) -> RasterImage:
    buf = Path(path).read_bytes()
    (magic, _, _, _, data_offset), off = read_exact(buf, 0, _BMP_FILE)
    if magic != b"BM":
        raise FormatError(f"{path}: not a BMP file")
    (
        info_size,
        w,
        h,
        planes,
        bpp,
        compression,
        _,
        _,
        _,
        clr_used,
        _,
    ), _ = read_exact(buf, off, _BMP_INFO)
    if info_size < 40:
        raise FormatError(f"{path}: unsupported BMP header size {info_size}")
    if planes != 1:
        raise FormatError(f"{path}: planes must be 1, got {planes}")
    if compression != _BI_RGB:
        raise FormatError(f"{path}: compressed BMP not supported (type {compression})")
    if bpp not in (8, 24):
        raise FormatError(f"{path}: only 8-bit and 24-bit BMP supported, got {bpp}-bit")
    top_down = h < 0
    h = abs(h)
    if w <= 0 or h == 0:
        raise FormatError(f"{path}: bad dimensions {w}x{h}")

    if bpp == 8:
        n_colors = clr_used or 256
        pal_off = off + info_size
        pal = np.frombuffer(buf, dtype=np.uint8, count=4 * n_colors, offset=pal_off)
        pal = pal.reshape(n_colors, 4)[:, :3]  # BGR
        row_bytes = (w + 3) & ~3
        need = data_offset + row_bytes * h
        if len(buf) < need:
            raise FormatError(f"{path}: truncated pixel data")
        rows = np.frombuffer(buf, dtype=np.uint8, count=row_bytes * h, offset=data_offset)
        rows = rows.reshape(h, row_bytes)[:, :w]
        if not top_down:
            rows = rows[::-1]
        gray_palette = bool(np.all(pal[:, 0:1] == pal))
        if gray_palette:
            lut = pal[:, 0]
            return RasterImage(lut[rows][None, :, :])
        rgb = pal[:, ::-1][rows]  # (h, w, 3) RGB via palette
        return RasterImage(np.moveaxis(rgb, 2, 0))

    row_bytes = (3 * w + 3) & ~3
    need = data_offset + row_bytes * h
    if len(buf) < need:
        raise FormatError(f"{path}: truncated pixel data")
    rows = np.frombuffer(buf, dtype=np.uint8, count=row_bytes * h, offset=data_offset)
    rows = rows.reshape(h, row_bytes)[:, : 3 * w].reshape(h, w, 3)
    if not top_down:
        rows = rows[::-1]
    return RasterImage(np.moveaxis(rows[:, :, ::-1], 2, 0))  # BGR -> RGB planes


def load_png(path: str | Path) -> RasterImage:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im)
    return RasterImage.from_array(arr)


def load_image(path: str | Path) -> RasterImage:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"BM":
        return load_bmp(path)
    if magic == b"\x89PNG\r\n\x1a\n":
        return load_png(path)
    raise FormatError(f"{path}: unrecognized image format")


def save_image(img: RasterImage, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() != ".bmp":
        raise FormatError(
            f"{path}: only .bmp output is supported (PNG support is read-only)"
        )
    save_bmp(img, path)


# ---------------------------------------------------------------------------
# encrypted images
# ---------------------------------------------------------------------------

_ICHI_HEAD = struct.Struct("<4sHIIBB32s")


@dataclass
class CipherImage:
    """One ciphertext per pixel, channel-major then row-major order.

    fingerprint identifies the key set (parameters and public key) the cells
    were produced under; decryption rejects foreign key sets.
    """

    width: int
    height: int
    channels: int
    strategy: str
    fingerprint: bytes
    params: CkksParams
    cells: list[Ciphertext]

    def __post_init__(self) -> None:
        want = self.width * self.height * self.channels
        if len(self.cells) != want:
            raise DimensionError(f"expected {want} cells, got {len(self.cells)}")

    def cell_at(self, c: int, y: int, x: int) -> Ciphertext:
        return self.cells[(c * self.height + y) * self.width + x]

    def __len__(self) -> int:
        return len(self.cells)


def _chunk_spans(total: int, chunk: int):
    for lo in range(0, total, chunk):
        yield lo, min(lo + chunk, total)


def _encrypt_flat(
    flat: np.ndarray,
    keys: KeySet,
    cache: PixelCache,
    rng: np.random.Generator,
    chunk: int,
    workers: int,
):
    """Yield (lo, CtBatch) chunks in order.

    Cached strategies are stateful (pool refreshes), so they always run
    sequentially; only the fresh baseline can use worker threads.
    """
    spans = list(_chunk_spans(flat.size, chunk))
    if workers > 1 and cache.strategy == "none" and len(spans) > 1:
        child_rngs = rng.spawn(len(spans))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futures = [
                ex.submit(encrypt_pixels, cache, flat[lo:hi], keys, child_rngs[i])
                for i, (lo, hi) in enumerate(spans)
            ]
            for (lo, hi), fut in zip(spans, futures):
                yield lo, fut.result()
        return
    for lo, hi in spans:
        yield lo, encrypt_pixels(cache, flat[lo:hi], keys, rng)


def encrypt_image(
    img: RasterImage,
    keys: KeySet,
    cache: PixelCache,
    rng: np.random.Generator,
    *,
    chunk: int = DEFAULT_CHUNK,
    workers: int | None = None,
) -> CipherImage:
    """Encrypt to an in-memory CipherImage (one ciphertext per pixel)."""
    flat = img.flat()
    cells: list[Ciphertext] = []
    for _, batch in _encrypt_flat(flat, keys, cache, rng, chunk, workers_from_env(workers)):
        cells.extend(batch.cells())
    return CipherImage(
        width=img.width,
        height=img.height,
        channels=img.channels,
        strategy=cache.strategy,
        fingerprint=keys.fingerprint,
        params=keys.params,
        cells=cells,
    )


def _uniform_geometry(cells: list[Ciphertext]):
    first = cells[0]
    for ct in cells:
        if ct.degree != 1 or ct.level != first.level or ct.scale != first.scale:
            return None
    return first.level, first.scale


def decrypt_image(
    cimg: CipherImage, keys: KeySet, *, chunk: int = DEFAULT_CHUNK
) -> RasterImage:
    """Decrypt to uint8 pixels, rounding and clamping to [0, 255]."""
    if cimg.fingerprint != keys.fingerprint:
        raise KeyMismatchError("cipher image belongs to a different key set")
    vals = decrypt_cells_to_floats(cimg.cells, keys, chunk=chunk)
    shaped = vals.reshape(cimg.channels, cimg.height, cimg.width)
    return RasterImage(np.clip(np.rint(shaped), 0, 255).astype(np.uint8))


def decrypt_cells_to_floats(
    cells: list[Ciphertext], keys: KeySet, *, chunk: int = DEFAULT_CHUNK
) -> np.ndarray:
    """Batched scalar decryption of a cell list (pre-rounding values)."""
    geom = _uniform_geometry(cells)
    out = np.empty(len(cells), dtype=np.float64)
    if geom is None:
        for i, ct in enumerate(cells):
            out[i] = decode_scalar(decrypt(ct, keys), keys.params)
        return out
    level, scale = geom
    limbs = level + 1
    n = keys.params.n
    for lo, hi in _chunk_spans(len(cells), chunk):
        data = np.empty((hi - lo, 2, limbs, n), dtype=np.uint64)
        for i, ct in enumerate(cells[lo:hi]):
            data[i, 0] = ct.parts[0].res
            data[i, 1] = ct.parts[1].res
        batch = CtBatch(data, scale, level, keys.params, 0.0)
        out[lo:hi] = decrypt_slot0_batch(batch, keys)
    return out


# ---------------------------------------------------------------------------
# ICHI container (streaming)
# ---------------------------------------------------------------------------

def _ichi_header(img_shape, strategy: str, fingerprint: bytes) -> bytes:
    channels, height, width = img_shape
    return _ICHI_HEAD.pack(
        MAGIC_IMAGE,
        FORMAT_VERSION,
        width,
        height,
        channels,
        _STRATEGY_TAG[strategy],
        fingerprint,
    )


def encrypt_image_to_path(
    img: RasterImage,
    keys: KeySet,
    cache: PixelCache,
    rng: np.random.Generator,
    path: str | Path,
    *,
    chunk: int = DEFAULT_CHUNK,
    workers: int | None = None,
) -> None:
    """Stream-encrypt to an ICHI file without materializing the cipher image.

    The output appears atomically: chunks accumulate in a same-directory temp
    file that is fsynced and renamed once complete.
    """
    import tempfile

    path = Path(path)
    flat = img.flat()
    head = _ichi_header(img.pixels.shape, cache.strategy, keys.fingerprint)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head)
            for _, batch in _encrypt_flat(
                flat, keys, cache, rng, chunk, workers_from_env(workers)
            ):
                cell_head = struct.pack("<BBd", 1, batch.level, batch.scale)
                data = batch.data.astype("<u8", copy=False)
                for b in range(len(batch)):
                    fh.write(cell_head)
                    fh.write(data[b].tobytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_cipher_image(cimg: CipherImage, path: str | Path) -> None:
    """Write a materialized CipherImage; byte-compatible with the streamer."""
    out = [_ichi_header((cimg.channels, cimg.height, cimg.width), cimg.strategy,
                        cimg.fingerprint)]
    for ct in cimg.cells:
        out.append(cell_to_bytes(ct))
    atomic_write(path, b"".join(out))


def load_cipher_image(path: str | Path, params: CkksParams) -> CipherImage:
    """Read a whole ICHI file into memory; intended for small images."""
    buf = Path(path).read_bytes()
    (magic, version, width, height, channels, tag, fingerprint), off = read_exact(
        buf, 0, _ICHI_HEAD
    )
    if magic != MAGIC_IMAGE:
        raise FormatError(f"{path}: not an encrypted image file")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if tag not in _TAG_STRATEGY:
        raise FormatError(f"{path}: bad strategy tag {tag}")
    total = width * height * channels
    cells = []
    for _ in range(total):
        ct, off = cell_from_bytes(buf, off, params)
        cells.append(ct)
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return CipherImage(
        width=width,
        height=height,
        channels=channels,
        strategy=_TAG_STRATEGY[tag],
        fingerprint=fingerprint,
        params=params,
        cells=cells,
    )


def read_cipher_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read(_ICHI_HEAD.size)
    (magic, version, width, height, channels, tag, fingerprint), _ = read_exact(
        buf, 0, _ICHI_HEAD
    )
    if magic != MAGIC_IMAGE:
        raise FormatError(f"{path}: not an encrypted image file")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if tag not in _TAG_STRATEGY:
        raise FormatError(f"{path}: bad strategy tag {tag}")
    return {
        "width": width,
        "height": height,
        "channels": channels,
        "strategy": _TAG_STRATEGY[tag],
        "fingerprint": fingerprint,
    }


def decrypt_image_from_path(
    path: str | Path, keys: KeySet, *, chunk: int = DEFAULT_CHUNK
) -> RasterImage:
    """Stream-decrypt an ICHI file chunk by chunk."""
    head = read_cipher_header(path)
    if head["fingerprint"] != keys.fingerprint:
        raise KeyMismatchError(f"{path} belongs to a different key set")
    total = head["width"] * head["height"] * head["channels"]
    vals = np.empty(total, dtype=np.float64)
    n = keys.params.n
    cell_head = struct.Struct("<BBd")
    with open(path, "rb") as fh:
        fh.seek(_ICHI_HEAD.size)
        done = 0
        while done < total:
            want = min(chunk, total - done)
            hb = fh.read(cell_head.size)
            if len(hb) < cell_head.size:
                raise FormatError(f"{path}: truncated at cell {done}")
            degree, level, scale = cell_head.unpack(hb)
            if degree != 1:
                raise FormatError(f"{path}: streaming reader expects degree-1 cells")
            limbs = level + 1
            cell_body = 2 * limbs * n * 8
            # read this cell plus as many same-shaped cells as fit the chunk
            stride = cell_head.size + cell_body
            blob = fh.read(cell_body + (want - 1) * stride)
            if len(blob) < cell_body + (want - 1) * stride:
                raise FormatError(f"{path}: truncated at cell {done}")
            data = np.empty((want, 2, limbs, n), dtype=np.uint64)
            raw = np.frombuffer(blob, dtype=np.uint8)
            first = np.frombuffer(blob, dtype="<u8", count=2 * limbs * n)
            data[0] = first.astype(np.uint64).reshape(2, limbs, n)
            for i in range(1, want):
                off = cell_body + (i - 1) * stride
                d2, l2, s2 = cell_head.unpack_from(raw, off)
                if (d2, l2, s2) != (degree, level, scale):
                    raise FormatError(f"{path}: cell {done + i} geometry differs")
                cells = np.frombuffer(
                    blob, dtype="<u8", count=2 * limbs * n, offset=off + cell_head.size
                )
                data[i] = cells.astype(np.uint64).reshape(2, limbs, n)
            batch = CtBatch(data, scale, level, keys.params, 0.0)
            vals[done : done + want] = decrypt_slot0_batch(batch, keys)
            done += want
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last cell")
    shaped = vals.reshape(head["channels"], head["height"], head["width"])
    return RasterImage(np.clip(np.rint(shaped), 0, 255).astype(np.uint8))


def roundtrip_pixels(
    img: RasterImage,
    keys: KeySet,
    cache: PixelCache,
    rng: np.random.Generator,
    *,
    chunk: int = DEFAULT_CHUNK,
    workers: int | None = None,
) -> np.ndarray:
    """Encrypt-then-decrypt without disk or a materialized cipher image.

    Returns the recovered float pixels (channel-major flat order), the
    memory-safe way to measure round-trip quality at large sizes.
    """
    flat = img.flat()
    out = np.empty(flat.size, dtype=np.float64)
    for lo, batch in _encrypt_flat(flat, keys, cache, rng, chunk, workers_from_env(workers)):
        out[lo : lo + len(batch)] = decrypt_slot0_batch(batch, keys)
    return out
