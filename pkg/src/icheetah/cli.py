"""Command-line interface.

Exit codes: 0 success, 2 usage or parameter problems, 3 malformed files,
4 key mismatches, 5 benchmark quality-gate failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, cache, cipherops, image, keyio, metrics
from .cache import STRATEGIES, STRATEGY_NONE, STRATEGY_SCAN
from .ckks import keygen as ckks_keygen
from .errors import (
    FormatError,
    IcheetahError,
    KeyMismatchError,
    QualityGateError,
)
from .params import PRESETS, preset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_KEYS = 4
EXIT_QUALITY = 5


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="icheetah",
        description="Pixel-level homomorphic image encryption with ciphertext caching.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a key set (three .ichk files)")
    p.add_argument("--out", required=True, help="output stem for the key files")
    p.add_argument("--preset", default="default", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true", help="overwrite existing key files")

    p = sub.add_parser("encrypt", help="encrypt an image to an .ichi file")
    p.add_argument("--key", required=True, help="key stem from keygen")
    p.add_argument("--in", dest="input", required=True, help="input .bmp or .png")
    p.add_argument("--out", required=True, help="output .ichi path")
    p.add_argument("--strategy", default=STRATEGY_NONE, choices=STRATEGIES)
    p.add_argument("--radix", type=int, default=2)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--no-randomize", action="store_true",
                   help="disable randomness injection on cached strategies")
    p.add_argument("--radix-zero-pool", action="store_true",
                   help="also draw pool zeros on the radix path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chunk", type=int, default=image.DEFAULT_CHUNK)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("decrypt", help="decrypt an .ichi file to a .bmp")
    p.add_argument("--key", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output .bmp path")
    p.add_argument("--chunk", type=int, default=image.DEFAULT_CHUNK)

    p = sub.add_parser("process", help="run an encrypted-domain operation")
    p.add_argument("--key", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output .ichi path")
    p.add_argument("--op", required=True, choices=("mean", "brighten"))
    p.add_argument("--window", type=int, default=3, help="mean filter window size")
    p.add_argument("--delta", type=float, default=50.0, help="brighten amount")

    p = sub.add_parser("match", help="score an encrypted image against a template")
    p.add_argument("--key", required=True)
    p.add_argument("--in", dest="input", required=True, help="encrypted probe .ichi")
    p.add_argument("--template", required=True, help="plain template image")
    p.add_argument("--norm", default="l2", choices=("l1", "l2"))

    p = sub.add_parser("metrics", help="compare two plain images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("bench", help="benchmark caching strategies")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--sizes", default="8,16,32,64",
                   help="comma-separated image sides")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--preset", default="default", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radix", type=int, default=2)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--images", default=None, help="directory of corpus images")
    p.add_argument("--mse-gate", default="1.0",
                   help="round-trip MSE gate, or 'none' to disable")
    p.add_argument("--workers", type=int, default=None)
    return ap


def _cmd_keygen(args) -> int:
    paths = keyio.key_paths(args.out)
    existing = [p for p in paths if p.exists()]
    if existing and not args.force:
        names = ", ".join(str(p) for p in existing)
        print(f"refusing to overwrite {names} (use --force)", file=sys.stderr)
        return EXIT_USAGE
    keys = ckks_keygen(preset(args.preset), seed=args.seed)
    pub, sec, rlk = keyio.save_keyset(keys, args.out)
    for p in (pub, sec, rlk):
        print(p)
    return EXIT_OK


def _load_keys_for(args, *, require_secret: bool):
    return keyio.load_keyset(args.key, require_secret=require_secret)


def _cmd_encrypt(args) -> int:
    keys = _load_keys_for(args, require_secret=False)
    img = image.load_image(args.input)
    rng = np.random.default_rng(args.seed)
    cch = cache.build_cache(
        args.strategy,
        keys,
        rng,
        radix=args.radix,
        reference=img.flat() if args.strategy == STRATEGY_SCAN else None,
        pool_size=args.pool_size,
        randomize=not args.no_randomize,
        radix_zero_pool=args.radix_zero_pool,
    )
    image.encrypt_image_to_path(
        img, keys, cch, rng, args.out, chunk=args.chunk, workers=args.workers
    )
    print(args.out)
    return EXIT_OK


def _cmd_decrypt(args) -> int:
    keys = _load_keys_for(args, require_secret=True)
    img = image.decrypt_image_from_path(args.input, keys, chunk=args.chunk)
    image.save_image(img, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_process(args) -> int:
    keys = _load_keys_for(args, require_secret=False)
    cimg = image.load_cipher_image(args.input, keys.params)
    if cimg.fingerprint != keys.fingerprint:
        raise KeyMismatchError(f"{args.input} belongs to a different key set")
    if args.op == "mean":
        out = cipherops.mean_filter(cimg, size=args.window)
    else:
        out = cipherops.brighten(cimg, args.delta)
    image.save_cipher_image(out, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_match(args) -> int:
    keys = _load_keys_for(args, require_secret=True)
    cimg = image.load_cipher_image(args.input, keys.params)
    if cimg.fingerprint != keys.fingerprint:
        raise KeyMismatchError(f"{args.input} belongs to a different key set")
    template = image.load_image(args.template)
    if args.norm == "l2":
        result = cipherops.match_l2(cimg, template, keys)
    else:
        result = cipherops.match_l1(cimg, template)
    score = cipherops.finalize_match(result, keys)
    print(f"{args.norm} {score:.6f}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    ref = image.load_image(args.ref)
    test = image.load_image(args.test)
    m = metrics.mse(ref.pixels, test.pixels)
    p = metrics.psnr_from_mse(m)
    s = metrics.ssim(ref.pixels, test.pixels)
    print(f"mse {m:.6f}")
    print("psnr inf" if p == float("inf") else f"psnr {p:.4f}")
    print(f"ssim {s:.6f}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    gate = None if args.mse_gate.lower() == "none" else float(args.mse_gate)
    cfg = bench.BenchConfig(
        sizes=tuple(int(s) for s in args.sizes.split(",") if s),
        strategies=tuple(s for s in args.strategies.split(",") if s),
        reps=args.reps,
        preset_name=args.preset,
        seed=args.seed,
        radix=args.radix,
        pool_size=args.pool_size,
        images_dir=args.images,
        mse_gate=gate,
        workers=args.workers,
    )
    rows = bench.run_bench(cfg)
    paths = bench.report_emit(rows, args.out)
    for p in paths.values():
        print(p)
    return EXIT_OK


_COMMANDS = {
    "keygen": _cmd_keygen,
    "encrypt": _cmd_encrypt,
    "decrypt": _cmd_decrypt,
    "process": _cmd_process,
    "match": _cmd_match,
    "metrics": _cmd_metrics,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except QualityGateError as exc:
        print(f"quality gate: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    except KeyMismatchError as exc:
        print(f"key mismatch: {exc}", file=sys.stderr)
        return EXIT_KEYS
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except IcheetahError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
