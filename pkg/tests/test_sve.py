"""Mosaic formation, demultiplexing round trips, and exposure merging."""

import numpy as np
import pytest

from evsve.radiometry import Crf, RadianceImage, invert_crf
from evsve.sve import (
    ExposureStack,
    SvePattern,
    classical_merge,
    demultiplex,
    exposure_normalize,
    mosaic_forward,
    remosaic,
)

LINEAR = Crf(kind="identity-clip", saturation=1.0)


def _scene(value, size=4):
    return RadianceImage(data=np.full((size, size), float(value)))


class TestMosaicForward:
    def test_unit_radiance_reveals_attenuation_factors(self):
        pat = SvePattern()
        scene = _scene(1.0 / pat.t_exp)
        frame = mosaic_forward(scene, pat, LINEAR, noise_sigma=0.0, seed=0)
        tl, tr, bl, br = pat.taus
        expected = np.array([[tl, tr, tl, tr],
                             [bl, br, bl, br],
                             [tl, tr, tl, tr],
                             [bl, br, bl, br]])
        np.testing.assert_allclose(frame.data, expected, atol=1e-12)

    def test_dark_scene_gives_zero_mosaic(self):
        frame = mosaic_forward(_scene(0.0), SvePattern(), LINEAR, 0.0, 0)
        assert np.array_equal(frame.data, np.zeros((4, 4)))

    def test_bright_scene_saturates_all_but_darkest_site(self):
        pat = SvePattern()
        scene = _scene(10.0 / pat.t_exp)
        frame = mosaic_forward(scene, pat, LINEAR, 0.0, 0)
        # clamp(10 * tau): 0.95, 0.45, 0.55 all clip at 1; 0.005 gives 0.05
        assert frame.data[0, 0] == 1.0
        assert frame.data[0, 1] == 1.0
        assert frame.data[1, 0] == 1.0
        assert frame.data[1, 1] == pytest.approx(0.05, abs=1e-12)

    def test_rejects_odd_dimensions(self):
        scene = RadianceImage(data=np.ones((5, 4)))
        with pytest.raises(ValueError):
            mosaic_forward(scene, SvePattern(), LINEAR, 0.0, 0)

    def test_noise_is_seed_deterministic(self):
        scene = _scene(5.0, size=8)
        a = mosaic_forward(scene, SvePattern(), LINEAR, 0.05, seed=42)
        b = mosaic_forward(scene, SvePattern(), LINEAR, 0.05, seed=42)
        c = mosaic_forward(scene, SvePattern(), LINEAR, 0.05, seed=43)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)
        assert a.data.min() >= 0 and a.data.max() <= 1


class TestDemultiplexRemosaic:
    def test_single_macro_pixel(self):
        pat = SvePattern()
        frame = mosaic_forward(_scene(0.0, size=2), pat, LINEAR, 0.0, 0)
        frame.data[:] = [[0.1, 0.2], [0.3, 0.4]]
        stack = demultiplex(frame)
        vals = [s[0, 0] for s in stack.subs]
        assert vals == [0.1, 0.2, 0.3, 0.4]
        assert all(s.shape == (1, 1) for s in stack.subs)

    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(5)
        pat = SvePattern()
        frame = mosaic_forward(_scene(0.0, size=8), pat, LINEAR, 0.0, 0)
        frame.data[:] = rng.uniform(0, 1, size=(8, 8))
        back = remosaic(demultiplex(frame))
        assert np.array_equal(back.data, frame.data)
        stack = demultiplex(frame)
        again = demultiplex(remosaic(stack))
        for a, b in zip(stack.subs, again.subs):
            assert np.array_equal(a, b)

    def test_parity_offsets_on_4x4(self):
        pat = SvePattern()
        frame = mosaic_forward(_scene(0.0), pat, LINEAR, 0.0, 0)
        frame.data[:] = np.arange(16, dtype=np.float64).reshape(4, 4) / 16.0
        stack = demultiplex(frame)
        m = frame.data
        np.testing.assert_array_equal(stack.subs[0], m[0::2, 0::2])
        np.testing.assert_array_equal(stack.subs[1], m[0::2, 1::2])
        np.testing.assert_array_equal(stack.subs[2], m[1::2, 0::2])
        np.testing.assert_array_equal(stack.subs[3], m[1::2, 1::2])

    def test_remosaic_rejects_mismatched_sizes(self):
        pat = SvePattern()
        subs = [np.zeros((2, 2))] * 3 + [np.zeros((2, 3))]
        with pytest.raises(ValueError):
            ExposureStack(subs=subs, pattern=pat)


class TestExposureNormalize:
    def test_constant_scene_gives_constant_reference(self):
        pat = SvePattern()
        scene = _scene(2.0, size=8)
        stack = demultiplex(mosaic_forward(scene, pat, LINEAR, 0.0, 0))
        i_ref, valid = exposure_normalize(stack, LINEAR)
        assert valid.all()
        assert np.ptp(i_ref) < 1e-12

    def test_step_scene_preserves_radiance_ratio(self):
        pat = SvePattern()
        # 4:1 radiance step, scaled so nothing saturates at any site
        hi, lo = 4.0, 1.0
        data = np.full((8, 8), lo)
        data[:, 4:] = hi
        stack = demultiplex(
            mosaic_forward(RadianceImage(data=data), pat, LINEAR, 0.0, 0)
        )
        i_ref, valid = exposure_normalize(stack, LINEAR)
        assert valid.all()
        ratio = i_ref[0, 3] / i_ref[0, 0]
        assert ratio == pytest.approx(4.0, rel=1e-9)

    def test_three_saturated_sites_fall_back_to_darkest(self):
        pat = SvePattern()
        # radiance where taus 0.95/0.45/0.55 clip but 0.005 does not
        scene = _scene(10.0 / pat.t_exp, size=4)
        stack = demultiplex(mosaic_forward(scene, pat, LINEAR, 0.0, 0))
        i_ref, valid = exposure_normalize(stack, LINEAR)
        assert valid.all()
        # surviving estimate comes from the 0.005 site: invert(0.05)/(0.005*t_exp)
        expected = 0.05 / (0.005 * pat.t_exp)
        # map rescales by its own max; constant scene so the max is the value
        assert np.ptp(i_ref) < 1e-12
        radiance = i_ref * expected  # rescale undone
        assert radiance[0, 0] == pytest.approx(expected, rel=1e-9)

    def test_validity_mask_clears_fully_saturated_pixels(self):
        pat = SvePattern()
        scene = _scene(300.0 / pat.t_exp, size=4)  # 300*0.005 = 1.5, clips
        stack = demultiplex(mosaic_forward(scene, pat, LINEAR, 0.0, 0))
        _, valid = exposure_normalize(stack, LINEAR)
        assert not valid.any()


class TestClassicalMerge:
    def test_recovers_radiance_without_saturation(self):
        pat = SvePattern()
        rng = np.random.default_rng(9)
        # merge lives at half resolution, so make each 2x2 macro-pixel
        # constant; keep every site in (0, 1): radiance * 0.95 * t_exp < 1
        half = rng.uniform(1.0, 50.0, size=(8, 8))
        data = np.kron(half, np.ones((2, 2)))
        scene = RadianceImage(data=data)
        stack = demultiplex(mosaic_forward(scene, pat, LINEAR, 0.0, 0))
        merged = classical_merge(stack, LINEAR)
        rel = np.abs(merged.data - half) / half
        assert rel.max() < 1e-6

    def test_zero_scene_merges_to_zero(self):
        pat = SvePattern()
        stack = demultiplex(mosaic_forward(_scene(0.0), pat, LINEAR, 0.0, 0))
        merged = classical_merge(stack, LINEAR)
        assert np.array_equal(merged.data, np.zeros((2, 2)))

    def test_only_darkest_site_counts_when_others_clip(self):
        pat = SvePattern()
        scene = _scene(10.0 / pat.t_exp, size=4)
        stack = demultiplex(mosaic_forward(scene, pat, LINEAR, 0.0, 0))
        merged = classical_merge(stack, LINEAR)
        e, _ = invert_crf(LINEAR, 0.05)
        expected = e / (0.005 * pat.t_exp)
        np.testing.assert_allclose(merged.data, expected, rtol=1e-9)


class TestPattern:
    def test_default_taus(self):
        pat = SvePattern()
        assert pat.taus == (0.95, 0.45, 0.55, 0.005)
        assert pat.t_exp == pytest.approx(0.016)

    def test_rejects_out_of_range_tau(self):
        with pytest.raises(ValueError):
            SvePattern(taus=(0.5, 0.5, 0.5, 1.5))
        with pytest.raises(ValueError):
            SvePattern(taus=(0.5, 0.0, 0.5, 0.5))
