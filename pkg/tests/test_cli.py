import numpy as np
import pytest

from icheetah.cli import EXIT_FORMAT, EXIT_KEYS, EXIT_OK, EXIT_QUALITY, EXIT_USAGE, main
from icheetah.image import RasterImage, load_bmp, save_bmp


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared toy keyset and a small test image on disk."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["keygen", "--out", str(d / "k"), "--preset", "toy", "--seed", "1"]) == EXIT_OK
    arr = np.random.default_rng(2).integers(0, 256, (1, 6, 8)).astype(np.uint8)
    save_bmp(RasterImage(arr), d / "in.bmp")
    return d


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert capsys.readouterr().out.startswith("icheetah ")


def test_no_command_is_usage_error():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == EXIT_USAGE


def test_keygen_writes_three_files(workdir):
    for suffix in (".pub.ichk", ".sec.ichk", ".rlk.ichk"):
        assert (workdir / ("k" + suffix)).exists()


def test_keygen_refuses_overwrite(workdir, capsys):
    assert main(["keygen", "--out", str(workdir / "k"), "--preset", "toy"]) == EXIT_USAGE
    assert "refusing to overwrite" in capsys.readouterr().err
    # --force replaces them
    assert (
        main(["keygen", "--out", str(workdir / "k"), "--preset", "toy", "--seed", "1", "--force"])
        == EXIT_OK
    )


def test_encrypt_decrypt_cycle(workdir):
    enc = workdir / "img.ichi"
    assert (
        main(
            ["encrypt", "--key", str(workdir / "k"), "--in", str(workdir / "in.bmp"),
             "--out", str(enc), "--strategy", "full", "--pool-size", "16", "--seed", "9"]
        )
        == EXIT_OK
    )
    assert enc.exists()
    out = workdir / "out.bmp"
    assert main(["decrypt", "--key", str(workdir / "k"), "--in", str(enc), "--out", str(out)]) == EXIT_OK
    assert np.array_equal(load_bmp(out).pixels, load_bmp(workdir / "in.bmp").pixels)


def test_metrics_output(workdir, capsys):
    assert (
        main(["metrics", "--ref", str(workdir / "in.bmp"), "--test", str(workdir / "in.bmp")])
        == EXIT_OK
    )
    out = capsys.readouterr().out
    assert "mse 0.000000" in out
    assert "psnr inf" in out
    assert "ssim 1.000000" in out


def test_process_brighten(workdir):
    enc = workdir / "b_in.ichi"
    assert (
        main(
            ["encrypt", "--key", str(workdir / "k"), "--in", str(workdir / "in.bmp"),
             "--out", str(enc), "--strategy", "scan", "--pool-size", "16", "--seed", "4"]
        )
        == EXIT_OK
    )
    proc = workdir / "b_out.ichi"
    assert (
        main(
            ["process", "--key", str(workdir / "k"), "--in", str(enc), "--out", str(proc),
             "--op", "brighten", "--delta", "30"]
        )
        == EXIT_OK
    )
    out = workdir / "bright.bmp"
    assert main(["decrypt", "--key", str(workdir / "k"), "--in", str(proc), "--out", str(out)]) == EXIT_OK
    got = load_bmp(out).pixels.astype(int)
    want = np.minimum(255, load_bmp(workdir / "in.bmp").pixels.astype(int) + 30)
    assert np.max(np.abs(got - want)) <= 1  # toy-scale noise can tip a rounding


def test_process_mean(workdir):
    enc = workdir / "m_in.ichi"
    main(
        ["encrypt", "--key", str(workdir / "k"), "--in", str(workdir / "in.bmp"),
         "--out", str(enc), "--strategy", "full", "--pool-size", "16", "--seed", "5"]
    )
    proc = workdir / "m_out.ichi"
    assert (
        main(["process", "--key", str(workdir / "k"), "--in", str(enc), "--out", str(proc),
              "--op", "mean", "--window", "3"])
        == EXIT_OK
    )
    out = workdir / "mean.bmp"
    assert main(["decrypt", "--key", str(workdir / "k"), "--in", str(proc), "--out", str(out)]) == EXIT_OK
    # smoothing must shrink the variance
    assert load_bmp(out).pixels.std() < load_bmp(workdir / "in.bmp").pixels.std()


def test_match_command(workdir, capsys):
    enc = workdir / "match_in.ichi"
    main(
        ["encrypt", "--key", str(workdir / "k"), "--in", str(workdir / "in.bmp"),
         "--out", str(enc), "--strategy", "full", "--pool-size", "16", "--seed", "6"]
    )
    assert (
        main(["match", "--key", str(workdir / "k"), "--in", str(enc),
              "--template", str(workdir / "in.bmp"), "--norm", "l1"])
        == EXIT_OK
    )
    score = float(capsys.readouterr().out.split()[-1])
    assert score < 100.0  # toy noise only; a mismatched template would be ~10^4


def test_decrypt_wrong_key_exits_4(workdir):
    main(["keygen", "--out", str(workdir / "other"), "--preset", "toy", "--seed", "77"])
    enc = workdir / "wk.ichi"
    main(
        ["encrypt", "--key", str(workdir / "k"), "--in", str(workdir / "in.bmp"),
         "--out", str(enc), "--strategy", "full", "--pool-size", "16", "--seed", "7"]
    )
    assert (
        main(["decrypt", "--key", str(workdir / "other"), "--in", str(enc),
              "--out", str(workdir / "never.bmp")])
        == EXIT_KEYS
    )


def test_garbage_input_exits_3(workdir):
    bad = workdir / "garbage.ichi"
    bad.write_bytes(b"nothing good in here")
    assert (
        main(["decrypt", "--key", str(workdir / "k"), "--in", str(bad),
              "--out", str(workdir / "no.bmp")])
        == EXIT_FORMAT
    )
    missing = workdir / "does-not-exist.ichi"
    assert (
        main(["decrypt", "--key", str(workdir / "k"), "--in", str(missing),
              "--out", str(workdir / "no.bmp")])
        == EXIT_FORMAT
    )


def test_encrypt_rejects_unwritable_strategy_args(workdir):
    # radix outside [2, 255] surfaces as a usage error
    assert (
        main(["encrypt", "--key", str(workdir / "k"), "--in", str(workdir / "in.bmp"),
              "--out", str(workdir / "r.ichi"), "--strategy", "radix", "--radix", "1"])
        == EXIT_USAGE
    )


def test_bench_command_writes_report(workdir):
    rep = workdir / "rep"
    assert (
        main(["bench", "--out", str(rep), "--sizes", "4", "--strategies", "none,full",
              "--reps", "1", "--preset", "toy", "--pool-size", "8", "--mse-gate", "none"])
        == EXIT_OK
    )
    assert (rep / "bench.csv").exists()
    assert (rep / "bench_report.md").exists()
    assert (rep / "bench_times.png").exists()
    assert (rep / "bench_speedup.png").exists()


def test_bench_quality_gate_exits_5(workdir):
    rep = workdir / "rep5"
    assert (
        main(["bench", "--out", str(rep), "--sizes", "4", "--strategies", "none",
              "--reps", "1", "--preset", "toy", "--mse-gate", "1e-9"])
        == EXIT_QUALITY
    )
