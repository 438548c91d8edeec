import numpy as np
import pytest

from icheetah.ckks import decode_scalar, decrypt, encode_scalar, encrypt, keygen, mul, relinearize
from icheetah.errors import FormatError, KeyMismatchError
from icheetah.keyio import (
    key_paths,
    load_keyset,
    load_params,
    roundtrip_check,
    save_keyset,
)


@pytest.fixture(scope="module")
def saved(toy_params, tmp_path_factory):
    keys = keygen(toy_params, seed=207)
    stem = tmp_path_factory.mktemp("keys") / "k"
    save_keyset(keys, stem)
    return keys, stem


def test_key_paths_suffixes(tmp_path):
    pub, sec, rlk = key_paths(tmp_path / "alpha")
    assert pub.name == "alpha.pub.ichk"
    assert sec.name == "alpha.sec.ichk"
    assert rlk.name == "alpha.rlk.ichk"


def test_save_creates_three_files(saved):
    _, stem = saved
    for p in key_paths(stem):
        assert p.exists()
        assert p.read_bytes()[:4] == b"ICHK"


def test_roundtrip_byte_exact(saved, tmp_path):
    keys, stem = saved
    assert roundtrip_check(keys, tmp_path / "rt")


def test_roundtrip_byte_exact_default_params(big_keys, tmp_path):
    assert roundtrip_check(big_keys, tmp_path / "rt")


def test_loaded_keys_decrypt(saved, toy_params, rng):
    keys, stem = saved
    loaded = load_keyset(stem)
    assert loaded.fingerprint == keys.fingerprint
    ct = encrypt(encode_scalar(41.5, toy_params), keys, rng)
    assert decode_scalar(decrypt(ct, loaded), toy_params) == pytest.approx(41.5, abs=0.5)


def test_loaded_relin_key_works(saved, toy_params, rng):
    keys, stem = saved
    loaded = load_keyset(stem)
    prod = mul(
        encrypt(encode_scalar(3.0, toy_params), loaded, rng),
        encrypt(encode_scalar(5.0, toy_params), loaded, rng),
    )
    lin = relinearize(prod, loaded.relin_key)
    direct = decode_scalar(decrypt(prod, loaded), toy_params)
    # key switching at the toy scale (Delta = 2^10) costs a few units of noise
    assert decode_scalar(decrypt(lin, loaded), toy_params) == pytest.approx(direct, abs=4.0)


def test_load_params(saved, toy_params):
    _, stem = saved
    pub, sec, rlk = key_paths(stem)
    for p in (pub, sec, rlk):
        assert load_params(p) == toy_params


def test_public_only_load(saved, tmp_path):
    keys, stem = saved
    pub, _, _ = key_paths(stem)
    solo = tmp_path / "solo"
    spub, _, _ = key_paths(solo)
    spub.write_bytes(pub.read_bytes())
    loaded = load_keyset(solo)
    assert loaded.secret is None
    assert loaded.relin_key is None
    assert loaded.fingerprint == keys.fingerprint
    with pytest.raises(FormatError):
        load_keyset(solo, require_secret=True)


def test_missing_public_rejected(tmp_path):
    with pytest.raises(FormatError):
        load_keyset(tmp_path / "absent")


def test_foreign_secret_rejected(saved, toy_params, tmp_path):
    # Graft a secret from another keygen run onto this public key.
    _, stem = saved
    other = keygen(toy_params, seed=3000)
    other_stem = tmp_path / "other"
    save_keyset(other, other_stem)
    mixed = tmp_path / "mixed"
    mpub, msec, _ = key_paths(mixed)
    pub, _, _ = key_paths(stem)
    _, osec, _ = key_paths(other_stem)
    mpub.write_bytes(pub.read_bytes())
    msec.write_bytes(osec.read_bytes())
    with pytest.raises(KeyMismatchError):
        load_keyset(mixed)


def test_foreign_relin_rejected(saved, toy_params, tmp_path):
    _, stem = saved
    other = keygen(toy_params, seed=3001)
    other_stem = tmp_path / "other"
    save_keyset(other, other_stem)
    mixed = tmp_path / "mixed"
    mpub, _, mrlk = key_paths(mixed)
    pub, _, _ = key_paths(stem)
    _, _, orlk = key_paths(other_stem)
    mpub.write_bytes(pub.read_bytes())
    mrlk.write_bytes(orlk.read_bytes())
    with pytest.raises(KeyMismatchError):
        load_keyset(mixed)


def test_corrupt_magic_rejected(saved, tmp_path):
    _, stem = saved
    pub, _, _ = key_paths(stem)
    bad = tmp_path / "bad"
    bpub, _, _ = key_paths(bad)
    blob = bytearray(pub.read_bytes())
    blob[:4] = b"JUNK"
    bpub.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_keyset(bad)


def test_truncated_file_rejected(saved, tmp_path):
    _, stem = saved
    pub, _, _ = key_paths(stem)
    bad = tmp_path / "bad"
    bpub, _, _ = key_paths(bad)
    bpub.write_bytes(pub.read_bytes()[:-7])
    with pytest.raises(FormatError):
        load_keyset(bad)


def test_wrong_role_rejected(saved, tmp_path):
    # A secret-key file renamed to the public slot must not parse.
    _, stem = saved
    _, sec, _ = key_paths(stem)
    bad = tmp_path / "bad"
    bpub, _, _ = key_paths(bad)
    bpub.write_bytes(sec.read_bytes())
    with pytest.raises(FormatError):
        load_keyset(bad)


def test_trailing_garbage_rejected(saved, tmp_path):
    _, stem = saved
    pub, _, _ = key_paths(stem)
    bad = tmp_path / "bad"
    bpub, _, _ = key_paths(bad)
    bpub.write_bytes(pub.read_bytes() + b"\x00extra")
    with pytest.raises(FormatError):
        load_keyset(bad)


def test_loaded_secret_rebuilds_ntt_forms(saved):
    keys, stem = saved
    loaded = load_keyset(stem, require_secret=True)
    assert np.array_equal(loaded.secret, keys.secret)
    assert np.array_equal(loaded.s_hat.res, keys.s_hat.res)
    assert np.array_equal(loaded.s2_hat.res, keys.s2_hat.res)
