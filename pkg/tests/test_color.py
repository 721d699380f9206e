import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relightcc.color import (Domain, Illuminant, LinearImage, angular_error, clip_counter, correct, gamma_decode,
                             gamma_encode, inverse_tone_map, normalize, relight, reprocess, tone_map,
                             unprocess_srgb)
from relightcc.errors import DivisionGuardError, InvalidInputError

from conftest import awb, const_image

positive = st.floats(0.01, 10.0, allow_nan=False)
triples = st.tuples(positive, positive, positive)


def test_relight_constant_image():
    out = relight(const_image(1.0, 2, 2), (0.6, 0.48, 0.64))
    assert out.domain is Domain.RAW
    np.testing.assert_allclose(out.pixels, np.broadcast_to([0.6, 0.48, 0.64], (2, 2, 3)))


def test_relight_by_white_scales_uniformly(rng):
    img = awb(rng.uniform(size=(3, 5, 3)))
    out = relight(img, np.ones(3) / math.sqrt(3))
    np.testing.assert_allclose(out.pixels, img.pixels / math.sqrt(3), rtol=1e-12)


def test_correct_relight_round_trip(rng):
    img = awb(rng.uniform(size=(4, 4, 3)))
    ell = normalize(rng.uniform(0.1, 1.0, 3))
    back = correct(relight(img, ell), ell)
    assert back.domain is Domain.AWB
    np.testing.assert_allclose(back.pixels, img.pixels, atol=1e-6)


def test_correct_constant_half_by_white():
    out = correct(const_image(0.5, domain=Domain.RAW), np.ones(3) / math.sqrt(3))
    np.testing.assert_allclose(out.pixels, 0.5 * math.sqrt(3), rtol=1e-12)


def test_masked_pixels_stay_zero():
    mask = np.zeros((2, 2), bool)
    mask[0, 1] = True
    img = LinearImage(np.ones((2, 2, 3)), Domain.RAW, mask)
    for ell in [(0.1, 0.7, 0.2), (1, 1, 1)]:
        out = correct(img, ell)
        assert np.all(out.pixels[0, 1] == 0.0)
        assert np.array_equal(out.mask, mask)
    rel = relight(LinearImage(np.ones((2, 2, 3)), Domain.AWB, mask), (0.3, 0.5, 0.8))
    assert np.all(rel.pixels[0, 1] == 0.0)
    assert rel.pixels.shape == (2, 2, 3)


def test_relight_errors():
    with pytest.raises(InvalidInputError):
        relight(const_image(1.0), (0.0, 0.5, 0.5))
    with pytest.raises(InvalidInputError):
        relight(const_image(1.0, domain=Domain.RAW), (0.5, 0.5, 0.5))
    with pytest.raises(InvalidInputError):
        LinearImage(np.full((2, 2, 3), np.nan))


def test_correct_division_guard():
    with pytest.raises(DivisionGuardError):
        correct(const_image(0.5, domain=Domain.RAW), (1e-13, 0.5, 0.5))


def test_angular_error_anchors():
    assert angular_error((1, 2, 3), (1, 2, 3)) == 0.0
    assert angular_error((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0, abs=1e-12)
    expected = math.degrees(math.acos(2 / math.sqrt(6)))
    assert angular_error((1, 1, 1), (1, 1, 0)) == pytest.approx(expected, abs=1e-12)
    assert angular_error((1, 1, 1), (1, 1, 0)) == pytest.approx(35.2644, abs=1e-3)


def test_angular_error_zero_norm():
    with pytest.raises(InvalidInputError):
        angular_error((0, 0, 0), (1, 1, 1))


@settings(max_examples=200, deadline=None)
@given(triples, triples, st.floats(0.001, 1000.0))
def test_angular_error_scale_invariant_and_symmetric(a, b, s):
    e = angular_error(a, b)
    assert 0.0 <= e <= 180.0
    assert angular_error(b, a) == pytest.approx(e, abs=1e-9)
    assert angular_error(np.asarray(a) * s, b) == pytest.approx(e, abs=1e-9)
    assert angular_error(a, a) == 0.0


def test_gamma_scalars_and_fixed_points():
    assert gamma_encode(np.array(0.5)) == pytest.approx(0.5 ** (1 / 2.2), abs=1e-12)
    assert gamma_encode(np.array(0.5)) == pytest.approx(0.72974, abs=1e-5)
    for f in (gamma_encode, gamma_decode):
        np.testing.assert_array_equal(f(np.array([0.0, 1.0])), [0.0, 1.0])


def test_gamma_round_trip(rng):
    v = rng.uniform(size=100)
    assert np.max(np.abs(gamma_decode(gamma_encode(v)) - v)) < 1e-6


def test_gamma_negative_and_clip_counter():
    with pytest.raises(InvalidInputError):
        gamma_encode(np.array([-0.1]))
    before = clip_counter.count
    out = gamma_encode(np.array([1.5, 0.2]))
    assert out[0] == 1.0
    assert clip_counter.count == before + 1


def test_tone_curve_oracle():
    assert tone_map(0.25) == pytest.approx(0.15625, abs=1e-15)
    assert inverse_tone_map(0.15625) == pytest.approx(0.25, abs=1e-9)


def test_unprocess_endpoints_and_round_trip(rng):
    np.testing.assert_allclose(unprocess_srgb(np.array([0.0, 1.0])), [0.0, 1.0], atol=1e-12)
    v = rng.uniform(size=1000)
    assert np.max(np.abs(reprocess(unprocess_srgb(v)) - v)) < 1e-6


def test_unprocess_domain_and_range():
    img = LinearImage(np.full((2, 2, 3), 0.3), Domain.AWB)
    out = unprocess_srgb(img)
    assert out.domain is Domain.UIP
    with pytest.raises(InvalidInputError):
        unprocess_srgb(np.array([1.01]))
    with pytest.raises(InvalidInputError):
        unprocess_srgb(np.array([-0.01]))


def test_illuminant_normalized():
    ell = Illuminant(3.0, 4.0, 0.0).normalized()
    assert math.isclose(math.sqrt(ell.r ** 2 + ell.g ** 2 + ell.b ** 2), 1.0, abs_tol=1e-9)
    with pytest.raises(InvalidInputError):
        Illuminant(0, 0, 0).normalized()
