import numpy as np
import pytest

from icheetah.bench import (
    CSV_HEADER,
    BenchConfig,
    BenchRow,
    bench_image,
    corpus_image,
    report_emit,
    rows_to_csv,
    rows_to_markdown,
    run_bench,
    synthetic_image,
)
from icheetah.errors import ParameterError, QualityGateError
from icheetah.image import save_bmp


def _toy_cfg(**kw):
    base = dict(
        sizes=(4,),
        strategies=("none", "full"),
        reps=1,
        preset_name="toy",
        seed=3,
        pool_size=8,
    )
    base.update(kw)
    return BenchConfig(**base)


def test_synthetic_image_deterministic():
    a = synthetic_image(16, seed=5)
    b = synthetic_image(16, seed=5)
    c = synthetic_image(16, seed=6)
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)
    assert a.pixels.shape == (1, 16, 16)
    assert a.pixels.std() > 10  # has actual structure, not a flat field


def test_corpus_image_tiles(tmp_path, rng):
    src = rng.integers(0, 256, (1, 10, 10)).astype(np.uint8)
    from icheetah.image import RasterImage

    save_bmp(RasterImage(src), tmp_path / "img.bmp")
    out = corpus_image(str(tmp_path), 16)
    assert out.pixels.shape == (1, 16, 16)
    # crop smaller than the source is a plain corner crop
    small = corpus_image(str(tmp_path), 4)
    assert np.array_equal(small.pixels, src[:, :4, :4])


def test_corpus_image_empty_dir(tmp_path):
    with pytest.raises(ParameterError):
        corpus_image(str(tmp_path), 8)


def test_bench_image_respects_images_dir(tmp_path, rng):
    from icheetah.image import RasterImage

    src = rng.integers(0, 256, (1, 8, 8)).astype(np.uint8)
    save_bmp(RasterImage(src), tmp_path / "img.bmp")
    cfg = _toy_cfg(images_dir=str(tmp_path))
    assert np.array_equal(bench_image(cfg, 8).pixels, src)
    cfg2 = _toy_cfg()
    assert bench_image(cfg2, 8).pixels.shape == (1, 8, 8)


def test_config_validation():
    with pytest.raises(ParameterError):
        _toy_cfg(sizes=()).validate()
    with pytest.raises(ParameterError):
        _toy_cfg(sizes=(0,)).validate()
    with pytest.raises(ParameterError):
        _toy_cfg(sizes=(8192,)).validate()
    with pytest.raises(ParameterError):
        _toy_cfg(strategies=("warp",)).validate()
    with pytest.raises(ParameterError):
        _toy_cfg(reps=0).validate()


def test_run_bench_toy_matrix():
    # mse gate off: toy-scale noise is not what this test is about
    rows = run_bench(_toy_cfg(sizes=(4, 8), strategies=("none", "full", "radix"), mse_gate=None))
    assert [(r.strategy, r.size) for r in rows] == [
        ("none", 4),
        ("none", 8),
        ("full", 4),
        ("full", 8),
        ("radix", 4),
        ("radix", 8),
    ]
    for r in rows:
        assert r.median_ms > 0
        assert r.reps == 1
        if r.strategy == "none":
            assert r.speedup == 1.0
            assert r.cache_build_ms < 5.0  # nothing to build
        else:
            assert r.speedup > 0
            assert r.cache_build_ms > 0
        assert np.isfinite(r.mse)


def test_run_bench_adds_baseline_when_missing():
    rows = run_bench(_toy_cfg(strategies=("full",), mse_gate=None))
    assert rows[0].strategy == "none"  # injected for the speedup denominator
    assert rows[1].strategy == "full"


def test_quality_gate_trips():
    with pytest.raises(QualityGateError):
        run_bench(_toy_cfg(mse_gate=1e-12))


def test_rows_to_csv_header_and_shape():
    rows = [
        BenchRow("none", 8, 3, 12.5, 1.0, 0.0, 0.25, 54.2),
        BenchRow("full", 8, 3, 2.5, 5.0, 100.0, 0.0, float("inf")),
    ]
    text = rows_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert lines[1] == "none,8,3,12.500,1.000,0.000,0.25,54.200"
    assert lines[2] == "full,8,3,2.500,5.000,100.000,0,inf"


def test_rows_to_markdown_table():
    rows = [BenchRow("scan", 16, 2, 5.0, 3.0, 20.0, 0.1, 58.1)]
    text = rows_to_markdown(rows)
    assert "| strategy | size |" in text
    assert "| scan | 16 | 2 |" in text


def test_report_emit_files(tmp_path):
    rows = run_bench(_toy_cfg(mse_gate=None))
    paths = report_emit(rows, tmp_path / "rep")
    assert sorted(paths) == ["csv", "markdown", "speedup_figure", "times_figure"]
    for p in paths.values():
        assert p.exists() and p.stat().st_size > 0
    assert paths["csv"].read_text().startswith(CSV_HEADER)
    assert paths["times_figure"].suffix == ".png"
    assert paths["times_figure"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
