"""Response-curve and tone-mapping behavior."""

import math

import numpy as np
import pytest

from evsve.radiometry import Crf, RadianceImage, apply_crf, invert_crf, tone_map


class TestApplyCrf:
    def test_zero_exposure_maps_to_zero(self):
        assert apply_crf(Crf(), 0.0) == 0.0
        assert apply_crf(Crf(kind="gamma", gamma=2.2), 0.0) == 0.0

    def test_full_well_maps_to_one(self):
        crf = Crf(kind="identity-clip", saturation=3.5)
        assert apply_crf(crf, 3.5) == 1.0
        assert apply_crf(crf, 99.0) == 1.0

    def test_gamma_quarter_exposure(self):
        # (0.25)^(1/2) = 0.5
        crf = Crf(kind="gamma", gamma=2.0, saturation=1.0)
        assert apply_crf(crf, 0.25) == pytest.approx(0.5, abs=1e-12)

    def test_monotone_on_random_grid(self):
        rng = np.random.default_rng(7)
        e = np.sort(rng.uniform(0, 2.0, size=500))
        for crf in (Crf(), Crf(kind="gamma", gamma=2.2)):
            v = apply_crf(crf, e)
            assert np.all(np.diff(v) >= 0)
            assert v.min() >= 0 and v.max() <= 1

    def test_rejects_bad_exposure(self):
        with pytest.raises(ValueError):
            apply_crf(Crf(), -0.1)
        with pytest.raises(ValueError):
            apply_crf(Crf(), float("nan"))
        with pytest.raises(ValueError):
            apply_crf(Crf(), np.array([0.1, float("inf")]))


class TestInvertCrf:
    def test_zero_not_saturated(self):
        e, sat = invert_crf(Crf(), 0.0)
        assert e == 0.0 and sat is False

    def test_one_is_saturated_at_full_well(self):
        crf = Crf(saturation=2.0)
        e, sat = invert_crf(crf, 1.0)
        assert e == pytest.approx(2.0) and sat is True

    def test_round_trip_below_saturation(self):
        rng = np.random.default_rng(3)
        v = rng.uniform(0.0, 0.99, size=1000)
        for crf in (Crf(), Crf(kind="gamma", gamma=2.2, saturation=0.7)):
            e, sat = invert_crf(crf, v)
            assert not sat.any()
            assert np.max(np.abs(apply_crf(crf, e) - v)) < 1e-9

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            invert_crf(Crf(), 1.5)
        with pytest.raises(ValueError):
            invert_crf(Crf(), -0.01)


class TestToneMap:
    def test_constant_image_maps_to_ones(self):
        img = RadianceImage(data=np.full((4, 4), 37.0))
        assert np.allclose(tone_map(img), 1.0)

    def test_zero_pixels_stay_zero(self):
        img = np.array([[0.0, 1.0], [0.0, 2.0]])
        out = tone_map(img)
        assert out[0, 0] == 0.0 and out[1, 0] == 0.0

    def test_midpoint_value(self):
        # log(1 + 5000*0.5) / log(1 + 5000) = log(2501)/log(5001)
        img = np.array([[0.5, 1.0]])
        out = tone_map(img, mu=5000.0)
        expected = math.log(2501.0) / math.log(5001.0)
        assert out[0, 0] == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(0.9186, abs=5e-4)

    def test_all_zero_image_returns_zeros(self):
        out = tone_map(np.zeros((3, 3)))
        assert np.array_equal(out, np.zeros((3, 3)))

    def test_preserves_pixel_ordering(self):
        rng = np.random.default_rng(11)
        img = rng.uniform(0, 100.0, size=(16, 16))
        out = tone_map(img)
        flat_in, flat_out = img.ravel(), out.ravel()
        order = np.argsort(flat_in)
        assert np.all(np.diff(flat_out[order]) >= 0)
        assert out.min() >= 0 and out.max() <= 1


class TestValidation:
    def test_radiance_image_rejects_negative(self):
        with pytest.raises(ValueError):
            RadianceImage(data=np.array([[-1.0, 0.0]]))

    def test_crf_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            Crf(kind="srgb")

    def test_crf_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            Crf(kind="gamma", gamma=0.0)
