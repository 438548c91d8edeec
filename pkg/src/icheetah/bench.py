"""Benchmark harness: per-strategy encryption timing and round-trip quality.

Each (strategy, size) combination builds its cache fresh (build time reported
in its own column, never mixed into per-pixel timing), runs one untimed
quality pass that doubles as warmup, then times `reps` encryption passes over
the same image and reports the median.  Speedup is against the fresh-encrypt
baseline at the same size.

Reports go to an output directory: a CSV with a fixed column set, a markdown
table, and rendered figures.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ckks, metrics
from .cache import STRATEGIES, STRATEGY_NONE, STRATEGY_SCAN, build_cache
from .errors import ParameterError, QualityGateError
from .image import DEFAULT_CHUNK, RasterImage, load_image, roundtrip_pixels, _encrypt_flat
from .params import CkksParams, preset

CSV_HEADER = "strategy,size,reps,median_ms,speedup,cache_build_ms,mse,psnr"


@dataclass
class BenchConfig:
    sizes: tuple[int, ...] = (8, 16, 32, 64)
    strategies: tuple[str, ...] = STRATEGIES
    reps: int = 3
    preset_name: str = "default"
    seed: int = 0
    radix: int = 2
    pool_size: int | None = None
    images_dir: str | None = None  # natural corpus; synthetic when None
    mse_gate: float | None = 1.0
    chunk: int = DEFAULT_CHUNK
    workers: int | None = None

    def validate(self) -> None:
        if not self.sizes:
            raise ParameterError("no benchmark sizes given")
        for s in self.sizes:
            if not 1 <= s <= 4096:
                raise ParameterError(f"benchmark size {s} outside [1, 4096]")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ParameterError(f"unknown strategy {s!r}")
        if self.reps < 1:
            raise ParameterError("reps must be at least 1")


def synthetic_image(size: int, seed: int) -> RasterImage:
    """Deterministic natural-ish test image: gradients, patches, noise."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size]
    base = 60.0 + 120.0 * (x + y) / max(2 * size - 2, 1)
    for _ in range(max(3, size // 8)):
        h = int(rng.integers(1, max(2, size // 2)))
        w = int(rng.integers(1, max(2, size // 2)))
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        base[y0 : y0 + h, x0 : x0 + w] = float(rng.integers(0, 256))
    base += rng.normal(0.0, 8.0, size=base.shape)
    return RasterImage(np.clip(np.rint(base), 0, 255).astype(np.uint8))


def _luma(img: RasterImage) -> np.ndarray:
    if img.channels == 1:
        return img.pixels[0]
    r, g, b = img.pixels.astype(np.float64)
    return np.clip(np.rint(0.299 * r + 0.587 * g + 0.114 * b), 0, 255).astype(np.uint8)


def corpus_image(images_dir: str, size: int, index: int = 0) -> RasterImage:
    """Grayscale crop (tiled if needed) of the index-th corpus image."""
    paths = sorted(
        p for p in Path(images_dir).iterdir() if p.suffix.lower() in (".bmp", ".png")
    )
    if not paths:
        raise ParameterError(f"no .bmp or .png images under {images_dir}")
    plane = _luma(load_image(paths[index % len(paths)]))
    reps_y = -(-size // plane.shape[0])
    reps_x = -(-size // plane.shape[1])
    tiled = np.tile(plane, (reps_y, reps_x))
    return RasterImage(tiled[:size, :size])


def bench_image(cfg: BenchConfig, size: int) -> RasterImage:
    if cfg.images_dir:
        return corpus_image(cfg.images_dir, size)
    return synthetic_image(size, cfg.seed + size)


@dataclass
class BenchRow:
    strategy: str
    size: int
    reps: int
    median_ms: float
    speedup: float
    cache_build_ms: float
    mse: float
    psnr: float


def run_bench(cfg: BenchConfig, keys: ckks.KeySet | None = None) -> list[BenchRow]:
    """Run the full matrix; baseline rows come first so speedups resolve."""
    cfg.validate()
    params = preset(cfg.preset_name)
    if keys is None:
        keys = ckks.keygen(params, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    strategies = list(cfg.strategies)
    if STRATEGY_NONE not in strategies:
        strategies = [STRATEGY_NONE] + strategies  # speedup needs the baseline
    strategies.sort(key=lambda s: s != STRATEGY_NONE)

    rows: list[BenchRow] = []
    base_ms: dict[int, float] = {}
    for strategy in strategies:
        for size in cfg.sizes:
            img = bench_image(cfg, size)
            flat = img.flat()

            t0 = time.perf_counter()
            cch = build_cache(
                strategy,
                keys,
                rng,
                radix=cfg.radix,
                reference=flat if strategy == STRATEGY_SCAN else None,
                pool_size=cfg.pool_size,
            )
            build_ms = (time.perf_counter() - t0) * 1e3

            # untimed quality pass; also warms JIT paths
            got = roundtrip_pixels(
                img, keys, cch, rng, chunk=cfg.chunk, workers=cfg.workers
            )
            row_mse = metrics.mse(got.reshape(img.pixels.shape), img.pixels)
            row_psnr = metrics.psnr_from_mse(row_mse)
            if cfg.mse_gate is not None and row_mse > cfg.mse_gate:
                raise QualityGateError(
                    f"{strategy} at {size}x{size}: round-trip MSE {row_mse:.4g} "
                    f"exceeds the gate {cfg.mse_gate:.4g}"
                )

            samples = []
            for _ in range(cfg.reps):
                t0 = time.perf_counter()
                for _, _batch in _encrypt_flat(
                    flat, keys, cch, rng, cfg.chunk, 1 if cfg.workers is None else cfg.workers
                ):
                    pass
                samples.append((time.perf_counter() - t0) * 1e3)
            median_ms = float(np.median(samples))

            if strategy == STRATEGY_NONE:
                base_ms[size] = median_ms
            speedup = base_ms[size] / median_ms if median_ms > 0 else float("inf")
            rows.append(
                BenchRow(
                    strategy=strategy,
                    size=size,
                    reps=cfg.reps,
                    median_ms=median_ms,
                    speedup=speedup,
                    cache_build_ms=build_ms,
                    mse=row_mse,
                    psnr=row_psnr,
                )
            )
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for r in rows:
        writer.writerow(
            [
                r.strategy,
                r.size,
                r.reps,
                f"{r.median_ms:.3f}",
                f"{r.speedup:.3f}",
                f"{r.cache_build_ms:.3f}",
                f"{r.mse:.6g}",
                "inf" if r.psnr == float("inf") else f"{r.psnr:.3f}",
            ]
        )
    return buf.getvalue()


def rows_to_markdown(rows: list[BenchRow]) -> str:
    head = CSV_HEADER.split(",")
    lines = [
        "# Encryption benchmark",
        "",
        "| " + " | ".join(head) + " |",
        "|" + "|".join("---" for _ in head) + "|",
    ]
    for r in rows:
        lines.append(
            f"| {r.strategy} | {r.size} | {r.reps} | {r.median_ms:.3f} "
            f"| {r.speedup:.3f} | {r.cache_build_ms:.3f} | {r.mse:.6g} "
            f"| {'inf' if r.psnr == float('inf') else f'{r.psnr:.3f}'} |"
        )
    lines.append("")
    return "\n".join(lines)


def report_emit(rows: list[BenchRow], out_dir: str | Path) -> dict[str, Path]:
    """Write CSV, markdown, and figures; returns the created paths."""
    from .figures import render_bench_figures
    from .wire import atomic_write

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "bench.csv",
        "markdown": out / "bench_report.md",
    }
    atomic_write(paths["csv"], rows_to_csv(rows).encode())
    atomic_write(paths["markdown"], rows_to_markdown(rows).encode())
    paths.update(render_bench_figures(rows, out))
    return paths
