"""Pixel-level homomorphic image encryption with ciphertext caching.

Approximate homomorphic encryption sized for desk-scale hardware, three
ciphertext caching strategies that amortize per-pixel encryption cost,
encrypted-domain image operators, and a benchmark harness.
"""

__version__ = "0.1.0"

from .cache import (
    PixelCache,
    ZeroPool,
    build_cache,
    build_zero_pool,
    encrypt_pixel,
    encrypt_pixels,
    load_cache,
    radix_decompose,
    radix_powers,
    save_cache,
)
from .ckks import (
    Ciphertext,
    CtBatch,
    KeySet,
    OpCounters,
    Plaintext,
    add,
    add_plain,
    decode,
    decode_scalar,
    decrypt,
    decrypt_slot0_batch,
    encode_scalar,
    encode_vector,
    encrypt,
    encrypt_scalars_batch,
    keygen,
    mul,
    mul_plain,
    relinearize,
    rescale,
    sub,
)
from .cipherops import (
    MatchResult,
    WatermarkSpec,
    brighten,
    finalize_match,
    match_l1,
    match_l2,
    match_score_plain,
    mean_filter,
    watermark_detect,
    watermark_embed,
)
from .errors import (
    CacheMissError,
    DimensionError,
    DomainError,
    EncodingOverflowError,
    FormatError,
    IcheetahError,
    KeyMismatchError,
    LevelExhaustedError,
    LevelMismatchError,
    ParameterError,
    PoolError,
    QualityGateError,
    ScaleMismatchError,
    UnsupportedOperationError,
)
from .image import (
    CipherImage,
    RasterImage,
    decrypt_image,
    decrypt_image_from_path,
    encrypt_image,
    encrypt_image_to_path,
    load_bmp,
    load_cipher_image,
    load_image,
    roundtrip_pixels,
    save_bmp,
    save_cipher_image,
    save_image,
)
from .keyio import load_keyset, load_params, save_keyset
from .metrics import mse, psnr, psnr_from_mse, ssim
from .params import CkksParams, default_params, preset, toy_insecure_params

__all__ = [name for name in dir() if not name.startswith("_")]
