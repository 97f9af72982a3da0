"""Feature matching, robust homography estimation, warping, edge loss."""

import numpy as np
import pytest

from evsve.alignment import (
    EstimationError,
    Homography,
    MatchSet,
    alignment_loss,
    detect_and_match,
    estimate_homography,
    warp,
    warp_events,
)
from evsve.events import AccumFrame, EventStream

MILD_H = np.array([
    [1.02, 0.012, 2.0],
    [-0.008, 0.99, -1.5],
    [1.0e-4, -8.0e-5, 1.0],
])


def _texture(seed=0, size=64):
    """Blocky random pattern: strong corners at every block junction."""
    rng = np.random.default_rng(seed)
    base = np.kron(rng.uniform(0, 1, size=(size // 8, size // 8)), np.ones((8, 8)))
    return base + 0.01 * rng.normal(size=(size, size))


def _project(h, pts):
    hom = np.column_stack([pts, np.ones(len(pts))])
    out = hom @ h.T
    return out[:, :2] / out[:, 2:3]


class TestDetectAndMatch:
    def test_identical_images_match_in_place(self):
        img = _texture(1)
        m = detect_and_match(img, img)
        assert len(m) >= 10
        # same integer cell for every pair; subpixel refinement may add
        # a few hundredths of a pixel
        disp = m.pts_b - m.pts_a
        assert np.max(np.abs(disp)) < 0.1

    def test_known_translation_recovered(self):
        img = _texture(2)
        shifted = np.zeros_like(img)
        shifted[:, 5:] = img[:, :-5]
        m = detect_and_match(img, shifted)
        assert len(m) >= 8
        med = np.median(m.pts_b - m.pts_a, axis=0)
        assert abs(med[0] - 5.0) <= 0.5
        assert abs(med[1]) <= 0.5

    def test_constant_images_yield_no_matches(self):
        flat = np.full((64, 64), 0.5)
        assert len(detect_and_match(flat, flat)) == 0

    def test_match_file_round_trip(self, tmp_path):
        img = _texture(3)
        m = detect_and_match(img, img)
        f = tmp_path / "matches.txt"
        m.to_file(f)
        back = MatchSet.from_file(f)
        np.testing.assert_allclose(back.pts_a, m.pts_a)
        np.testing.assert_allclose(back.pts_b, m.pts_b)


class TestEstimateHomography:
    def test_identity_matches_give_identity(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(5, 59, size=(30, 2))
        m = MatchSet(pts_a=pts, pts_b=pts.copy(), scores=np.ones(30))
        h, mask = estimate_homography(m)
        assert mask.all()
        assert np.max(np.abs(h.h - np.eye(3))) < 1e-6

    def test_recovers_known_homography_with_outliers(self):
        rng = np.random.default_rng(5)
        pts_a = rng.uniform(0, 64, size=(100, 2))
        pts_b = _project(MILD_H, pts_a) + rng.normal(0, 0.5, size=(100, 2))
        n_out = 30
        idx = rng.choice(100, size=n_out, replace=False)
        pts_b[idx] = rng.uniform(0, 64, size=(n_out, 2))
        m = MatchSet(pts_a=pts_a, pts_b=pts_b, scores=np.ones(100))
        h, mask = estimate_homography(m, seed=1)
        clean = np.ones(100, dtype=bool)
        clean[idx] = False
        err = np.linalg.norm(
            _project(h.h, pts_a[clean]) - _project(MILD_H, pts_a[clean]), axis=1
        )
        assert err.mean() < 1.0

    def test_collinear_points_rejected(self):
        t = np.linspace(0, 50, 12)
        pts = np.column_stack([t, 2 * t + 1])
        m = MatchSet(pts_a=pts, pts_b=pts + 3.0, scores=np.ones(12))
        with pytest.raises(EstimationError):
            estimate_homography(m)

    def test_too_few_matches_rejected(self):
        pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        m = MatchSet(pts_a=pts, pts_b=pts, scores=np.ones(3))
        with pytest.raises(EstimationError):
            estimate_homography(m)

    def test_invariant_to_similarity_reparameterization(self):
        # estimating on rescaled/shifted coordinates and mapping the
        # result back must agree with the direct estimate
        rng = np.random.default_rng(6)
        pts_a = rng.uniform(0, 64, size=(40, 2))
        pts_b = _project(MILD_H, pts_a)
        s, tx, ty = 12.5, 100.0, -40.0
        sim = np.array([[s, 0, tx], [0, s, ty], [0, 0, 1.0]])
        sim_inv = np.linalg.inv(sim)
        m2 = MatchSet(
            pts_a=_project(sim, pts_a),
            pts_b=_project(sim, pts_b),
            scores=np.ones(40),
        )
        h2, _ = estimate_homography(m2, seed=0)
        pulled = sim_inv @ h2.h @ sim
        pulled /= pulled[2, 2]
        err = np.linalg.norm(_project(pulled, pts_a) - pts_b, axis=1)
        assert err.max() < 1e-4

    def test_fixed_seed_is_deterministic(self):
        rng = np.random.default_rng(7)
        pts_a = rng.uniform(0, 64, size=(50, 2))
        pts_b = _project(MILD_H, pts_a) + rng.normal(0, 0.3, size=(50, 2))
        m = MatchSet(pts_a=pts_a, pts_b=pts_b, scores=np.ones(50))
        h1, m1 = estimate_homography(m, seed=9)
        h2, m2 = estimate_homography(m, seed=9)
        np.testing.assert_array_equal(h1.h, h2.h)
        np.testing.assert_array_equal(m1, m2)


class TestWarp:
    def test_identity_reproduces_input(self):
        img = _texture(8, size=32)
        out = warp(img, Homography.identity())
        assert np.max(np.abs(out - img)) < 1e-6

    def test_translation_moves_impulse(self):
        # warp maps output coordinates to source coordinates, so a
        # translation by (-2, -3) moves content forward by (+2, +3)
        img = np.zeros((16, 16))
        img[4, 3] = 1.0
        h = Homography(h=np.array([[1, 0, -2], [0, 1, -3], [0, 0, 1.0]]))
        out = warp(img, h)
        assert out[7, 5] == pytest.approx(1.0, abs=1e-12)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_fractional_shift_preserves_impulse_mass(self):
        img = np.zeros((16, 16))
        img[8, 8] = 1.0
        h = Homography(h=np.array([[1, 0, 0.3], [0, 1, -0.6], [0, 0, 1.0]]))
        out = warp(img, h)
        assert out.sum() == pytest.approx(1.0, abs=1e-6)

    def test_round_trip_recovers_interior(self):
        # smooth image: double bilinear error scales with curvature
        ys, xs = np.mgrid[0:32, 0:32] / 32.0
        img = 0.5 + 0.25 * np.sin(2 * np.pi * xs) + 0.25 * np.cos(2 * np.pi * ys)
        h = Homography(h=np.array([
            [1.01, 0.02, 1.2], [-0.015, 0.99, -0.8], [1e-4, -5e-5, 1.0]
        ]))
        back = warp(warp(img, h), h.inverse())
        inner = np.s_[6:-6, 6:-6]
        assert np.max(np.abs(back[inner] - img[inner])) < 1e-2

    def test_accum_frame_channels_warp_together(self):
        rng = np.random.default_rng(10)
        acc = AccumFrame(
            pos=rng.uniform(0, 1, (12, 12)), neg=rng.uniform(0, 1, (12, 12))
        )
        h = Homography(h=np.array([[1, 0, -1], [0, 1, 2], [0, 0, 1.0]]))
        out = warp(acc, h)
        assert isinstance(out, AccumFrame)
        np.testing.assert_allclose(out.pos, warp(acc.pos, h))
        np.testing.assert_allclose(out.neg, warp(acc.neg, h))

    def test_non_invertible_matrix_rejected(self):
        with pytest.raises(ValueError):
            Homography(h=np.array([[1, 0, 0], [2, 0, 0], [0, 0, 1.0]]))


class TestWarpEvents:
    def test_integer_translation_shifts_coordinates(self):
        stream = EventStream(
            t=np.array([0.1, 0.2]),
            x=np.array([3, 10]),
            y=np.array([4, 5]),
            p=np.array([1, -1]),
            width=16,
            height=16,
            c=0.1,
        )
        h = Homography(h=np.array([[1, 0, 2], [0, 1, 1], [0, 0, 1.0]]))
        out = warp_events(stream, h)
        np.testing.assert_array_equal(out.x, [5, 12])
        np.testing.assert_array_equal(out.y, [5, 6])

    def test_out_of_bounds_events_dropped(self):
        stream = EventStream(
            t=np.array([0.1]),
            x=np.array([15]),
            y=np.array([15]),
            p=np.array([1]),
            width=16,
            height=16,
            c=0.1,
        )
        h = Homography(h=np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1.0]]))
        assert len(warp_events(stream, h)) == 0


class TestAlignmentLoss:
    @staticmethod
    def _edge_oracle(img):
        pad = np.pad(img, ((0, 0), (1, 1)), mode="reflect")
        gx = 0.5 * (pad[:, 2:] - pad[:, :-2])
        pad = np.pad(img, ((1, 1), (0, 0)), mode="reflect")
        gy = 0.5 * (pad[2:, :] - pad[:-2, :])
        mag = np.sqrt(gx * gx + gy * gy)
        return mag / (mag.max() + 1e-8)

    def test_matching_edge_map_zeroes_the_loss(self):
        img = _texture(11, size=16)
        loss = alignment_loss(img, self._edge_oracle(img))
        assert loss.item() < 1e-12

    def test_flat_reference_and_empty_edges(self):
        loss = alignment_loss(np.full((8, 8), 0.4), np.zeros((8, 8)))
        assert loss.item() == 0.0

    def test_step_edge_against_empty_map(self):
        img = np.zeros((4, 8))
        img[:, 4:] = 1.0
        loss = alignment_loss(img, np.zeros((4, 8)))
        oracle = float(np.mean(self._edge_oracle(img)))
        assert loss.item() == pytest.approx(oracle, rel=1e-12)
        assert loss.item() == pytest.approx(0.25, rel=1e-6)

    def test_differentiable_in_reference(self):
        from evsve import autodiff as ad
        from gradcheck import fd_check

        rng = np.random.default_rng(12)
        x = ad.parameter(rng.uniform(0, 1, size=(6, 6)))
        edge = rng.uniform(0, 1, size=(6, 6))

        def build():
            return alignment_loss(x, edge)

        fd_check(build, [x])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            alignment_loss(np.zeros((4, 4)), np.zeros((4, 5)))
