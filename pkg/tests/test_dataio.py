import json

import numpy as np
import pytest

from relightcc.color import Domain, LinearImage, correct, unprocess_srgb
from relightcc.dataio import (CCRAW_HEADER, Manifest, SampleRecord, decode_ccraw, encode_ccraw,
                              import_ppm_as_uip, kfold_split, load_manifest, preprocess, read_ccraw, read_ppm,
                              synth_mondrian, write_ccraw, write_ppm)
from relightcc.errors import BadMagicError, FormatError, InvalidInputError, InvalidMetadataError, \
    UnsupportedFormatError
from relightcc.evaluation import gray_world, evaluate, BaselineEstimator


def test_ccraw_size_arithmetic(tmp_path):
    img = np.array([[[0, 0.5, 1], [1, 0, 0.25]]], dtype=np.float64)  # H=1, W=2
    path = tmp_path / "a.ccraw"
    write_ccraw(path, img)
    blob = path.read_bytes()
    assert CCRAW_HEADER == 14
    assert len(blob) == 14 + 24
    assert blob[:6] == b"CCRW1\n"
    assert blob[6:14] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little")
    np.testing.assert_array_equal(read_ccraw(path).pixels, img)


def test_ccraw_bit_exact_round_trip(tmp_path, rng):
    px = rng.uniform(size=(7, 5, 3)).astype(np.float32)
    path = tmp_path / "b.ccraw"
    write_ccraw(path, px)
    back = read_ccraw(path)
    assert back.pixels.astype(np.float32).tobytes() == px.tobytes()
    assert encode_ccraw(back.pixels) == path.read_bytes()


def test_ccraw_errors(tmp_path, rng):
    blob = encode_ccraw(rng.uniform(size=(2, 2, 3)))
    with pytest.raises(FormatError):
        decode_ccraw(blob[:-1])
    with pytest.raises(FormatError):
        decode_ccraw(blob + b"\0")
    bad = bytearray(blob)
    bad[CCRAW_HEADER:CCRAW_HEADER + 4] = np.float32(np.nan).tobytes()
    with pytest.raises(FormatError):
        decode_ccraw(bytes(bad))
    with pytest.raises(FormatError):
        encode_ccraw(np.full((1, 1, 3), np.inf))
    ppm = tmp_path / "x.ppm"
    write_ppm(ppm, np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(BadMagicError):
        read_ccraw(ppm)


def _ppm(tmp_path, value, name="c.ppm"):
    path = tmp_path / name
    write_ppm(path, np.full((3, 4, 3), value, np.uint8))
    return path


def test_ppm_import_endpoints(tmp_path):
    ones = import_ppm_as_uip(_ppm(tmp_path, 255))
    assert ones.domain is Domain.UIP
    np.testing.assert_allclose(ones.pixels, 1.0, atol=1e-12)
    np.testing.assert_array_equal(import_ppm_as_uip(_ppm(tmp_path, 0)).pixels, 0.0)


def test_ppm_import_mid_gray_scalar_oracle(tmp_path):
    y = (128 / 255) ** 2.2
    expected = 0.5 - np.sin(np.arcsin(1 - 2 * y) / 3)
    np.testing.assert_allclose(import_ppm_as_uip(_ppm(tmp_path, 128)).pixels, expected, atol=1e-12)
    assert float(unprocess_srgb(np.array(128 / 255))) == pytest.approx(expected, abs=1e-12)


def test_ppm_header_comments_and_rejections(tmp_path):
    p = tmp_path / "cmt.ppm"
    p.write_bytes(b"P6\n# a comment\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    np.testing.assert_array_equal(read_ppm(p), [[[1, 2, 3], [4, 5, 6]]])
    p3 = tmp_path / "ascii.ppm"
    p3.write_bytes(b"P3\n1 1\n255\n1 2 3\n")
    with pytest.raises(UnsupportedFormatError):
        read_ppm(p3)
    p16 = tmp_path / "deep.ppm"
    p16.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(UnsupportedFormatError):
        read_ppm(p16)
    short = tmp_path / "short.ppm"
    short.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError):
        read_ppm(short)


def _record(tmp_path, px, **kw):
    path = tmp_path / "r.ccraw"
    write_ccraw(path, np.asarray(px, dtype=np.float64))
    return SampleRecord(str(path), (1, 1, 1), "cam", **kw)


def test_preprocess_identity(tmp_path, rng):
    px = rng.uniform(size=(4, 4, 3)).astype(np.float32)
    out = preprocess(_record(tmp_path, px))
    assert out.domain is Domain.RAW
    np.testing.assert_array_equal(out.pixels, px.astype(np.float64))


def test_preprocess_black_and_saturation(tmp_path):
    out = preprocess(_record(tmp_path, np.full((2, 2, 3), 0.5), black_level=0.1, saturation=0.9))
    np.testing.assert_allclose(out.pixels, 0.5, atol=1e-7)


def test_preprocess_clips_and_masks(tmp_path, rng):
    px = rng.uniform(0, 2, size=(6, 6, 3))
    out = preprocess(_record(tmp_path, px, mask_rect=(1, 2, 3, 2)))
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1
    assert out.mask[2:4, 1:4].all() and out.mask.sum() == 6
    assert np.all(out.pixels[2:4, 1:4] == 0.0)


def test_preprocess_bad_metadata(tmp_path):
    with pytest.raises(InvalidMetadataError):
        preprocess(_record(tmp_path, np.ones((2, 2, 3)), black_level=0.5, saturation=0.5))


def test_manifest_round_trip(tmp_path):
    man, _ = synth_mondrian(4, 2, 0.0, 1.0, np.random.default_rng(0), out_dir=tmp_path, size=8)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert set(doc) == {"name", "fold_count", "records"}
    assert set(doc["records"][0]) == {"image", "label", "sensor_id", "black_level", "saturation", "mask_rect"}
    again = load_manifest(tmp_path)
    assert len(again) == 4
    for a, b in zip(man.records, again.records):
        np.testing.assert_array_equal(a.load().pixels, b.load().pixels)
        assert a.label == b.label


def test_manifest_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        Manifest([])
    (tmp_path / "manifest.json").write_text('{"records": [{"label": [1,1,1]}]}')
    with pytest.raises(FormatError):
        load_manifest(tmp_path)


def test_mondrian_forced_gray_patch():
    man, scenes = synth_mondrian(10, 4, 0.0, 1.0, np.random.default_rng(5), size=16)
    for s in scenes:
        flat = s.reshape(-1, 3)
        assert np.any((flat[:, 0] == flat[:, 1]) & (flat[:, 1] == flat[:, 2]))


def test_mondrian_construction_identity(tmp_path):
    man, scenes = synth_mondrian(5, 3, 0.4, 0.5, np.random.default_rng(2), out_dir=tmp_path, size=12)
    for rec, scene in zip(man.records, scenes):
        np.testing.assert_allclose(correct(rec.load(), rec.label).pixels, scene, atol=1e-6)
        stored = read_ccraw(tmp_path / "awb" / rec.image_path.split("/")[-1], Domain.AWB)
        np.testing.assert_allclose(stored.pixels, scene, atol=1e-7)


def test_mondrian_bias_hurts_gray_world():
    def gw_mean(bias):
        man, _ = synth_mondrian(200, 6, bias, 0.0, np.random.default_rng(17), size=24)
        return evaluate(BaselineEstimator("grayworld"), man).mean
    assert gw_mean(0.4) > 2 * gw_mean(0.0)


def test_mondrian_rejects_small_grid():
    with pytest.raises(InvalidInputError):
        synth_mondrian(1, 1, 0.0, 0.0, np.random.default_rng(0))


def _manifest(n):
    return Manifest([SampleRecord(f"r{i}", (1, 1, 1), "cam") for i in range(n)])


def test_kfold_partition():
    folds = kfold_split(_manifest(9), 3, seed=4)
    tests = [set(t.tolist()) for _, t in folds]
    assert [len(t) for t in tests] == [3, 3, 3]
    assert set().union(*tests) == set(range(9))
    assert all(not (a & b) for i, a in enumerate(tests) for b in tests[i + 1:])
    for train, test in folds:
        assert set(train.tolist()) == set(range(9)) - set(test.tolist())


def test_kfold_sizes_deterministic_and_errors():
    folds = kfold_split(_manifest(10), 3, seed=1)
    sizes = [len(t) for _, t in folds]
    assert max(sizes) - min(sizes) <= 1
    again = kfold_split(_manifest(10), 3, seed=1)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))
    with pytest.raises(InvalidInputError):
        kfold_split(_manifest(5), 1)
    with pytest.raises(InvalidInputError):
        kfold_split(_manifest(2), 3)
