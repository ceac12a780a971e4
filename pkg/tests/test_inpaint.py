"""Tests for the fast-marching texture inpainter.

cv2.inpaint serves as an independent quality oracle on curved content.
It is never used as the implementation.
"""

import numpy as np
import pytest

import cv2

from uvalign.inpaint import inpaint_fmm


def disk_mask(h, w, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2


class TestValidation:
    def test_rejects_2d_image(self):
        img = np.zeros((8, 8))
        with pytest.raises(ValueError, match="H, W, C"):
            inpaint_fmm(img, np.ones((8, 8), bool))

    def test_rejects_validity_shape_mismatch(self):
        img = np.zeros((8, 8, 3))
        with pytest.raises(ValueError, match="validity"):
            inpaint_fmm(img, np.ones((8, 7), bool))

    def test_rejects_radius_below_one(self):
        img = np.zeros((8, 8, 3))
        with pytest.raises(ValueError, match="radius"):
            inpaint_fmm(img, np.ones((8, 8), bool), radius=0)

    def test_rejects_fully_invalid_image(self):
        img = np.zeros((8, 8, 3))
        with pytest.raises(ValueError, match="no valid texels"):
            inpaint_fmm(img, np.zeros((8, 8), bool))


class TestExactCases:
    def test_all_valid_returns_bitwise_copy(self):
        rng = np.random.default_rng(3)
        img = rng.random((12, 10, 3))
        out = inpaint_fmm(img, np.ones((12, 10), bool))
        assert np.array_equal(out, img)
        assert out is not img

    def test_single_texel_in_constant_region(self):
        img = np.full((9, 9, 3), 0.375)
        valid = np.ones((9, 9), bool)
        valid[4, 4] = False
        out = inpaint_fmm(img, valid, radius=2)
        assert np.abs(out[4, 4] - 0.375).max() <= 1e-6

    def test_constant_region_larger_hole(self):
        img = np.full((24, 24, 3), 0.625)
        valid = ~disk_mask(24, 24, 12, 12, 5)
        out = inpaint_fmm(img, valid, radius=4)
        assert np.abs(out - 0.625).max() <= 1e-6

    def test_axis_aligned_ramp_filled_exactly(self):
        h = w = 64
        yy, xx = np.mgrid[0:h, 0:w]
        ramp = xx / (w - 1.0)
        img = np.stack([ramp, 0.5 * ramp, 1.0 - ramp], axis=2)
        hole = disk_mask(h, w, 32, 32, 10)
        out = inpaint_fmm(img, ~hole, radius=5)
        assert np.abs(out - img)[hole].max() <= 1e-6

    def test_diagonal_ramp_filled_exactly(self):
        h = w = 64
        yy, xx = np.mgrid[0:h, 0:w]
        ramp = (xx + yy) / (2.0 * (w - 1.0))
        img = np.stack([ramp, ramp, ramp], axis=2)
        hole = disk_mask(h, w, 30, 34, 9)
        out = inpaint_fmm(img, ~hole, radius=5)
        assert np.abs(out - img)[hole].max() <= 1e-6


class TestValidityContract:
    def test_valid_texels_bitwise_preserved_random_masks(self):
        rng = np.random.default_rng(11)
        for trial in range(5):
            img = rng.random((40, 36, 3))
            valid = rng.random((40, 36)) > 0.35
            valid[0, 0] = True
            out = inpaint_fmm(img, valid, radius=3)
            assert np.array_equal(out[valid], img[valid])
            assert np.isfinite(out).all()

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(7)
        img = rng.random((32, 32, 3))
        valid = rng.random((32, 32)) > 0.4
        a = inpaint_fmm(img, valid, radius=4)
        b = inpaint_fmm(img, valid, radius=4)
        assert np.array_equal(a, b)

    def test_filled_values_stay_in_local_range(self):
        # the estimate clamp keeps every filled texel inside the value
        # range of the window it was reconstructed from
        rng = np.random.default_rng(5)
        img = rng.random((30, 30, 3))
        valid = ~disk_mask(30, 30, 15, 15, 6)
        out = inpaint_fmm(img, valid, radius=4)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12


class TestQuality:
    def test_ramp_hole_within_five_percent(self):
        h = w = 64
        yy, xx = np.mgrid[0:h, 0:w]
        ramp = xx / (w - 1.0)
        img = np.stack([ramp, 1.0 - ramp, 0.3 + 0.4 * ramp], axis=2)
        hole = disk_mask(h, w, 32, 32, 10)
        out = inpaint_fmm(img, ~hole, radius=5)
        assert np.abs(out - img)[hole].max() <= 0.05

    def test_curved_content_competitive_with_reference(self):
        h = w = 64
        yy, xx = np.mgrid[0:h, 0:w]
        bump = (0.4 + 0.4 * np.exp(-((xx - 30.0) ** 2 + (yy - 28.0) ** 2) / 300.0)
                + 0.15 * np.sin(xx / 9.0) * np.cos(yy / 11.0))
        img = np.stack([bump, bump * 0.8, 1.0 - bump * 0.5], axis=2)
        hole = disk_mask(h, w, 32, 32, 9)
        valid = ~hole

        mine = inpaint_fmm(img, valid, radius=5)

        img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        ref8 = cv2.inpaint(img8, hole.astype(np.uint8) * 255, 5,
                           cv2.INPAINT_TELEA)
        ref = ref8.astype(np.float64) / 255.0

        err_mine = np.abs(mine - img)[hole]
        err_ref = np.abs(ref - img)[hole]
        assert err_mine.mean() <= 1.5 * err_ref.mean()
        assert err_mine.max() <= 1.5 * err_ref.max()
        assert err_mine.max() <= 0.12

    def test_edge_hole_stays_bounded(self):
        h = w = 48
        yy, xx = np.mgrid[0:h, 0:w]
        field = 0.3 + 0.5 * np.sin(xx / 10.0) * np.cos(yy / 8.0)
        img = np.stack([field, 1.0 - field, field * 0.5], axis=2)
        sel = (yy < 6) & (xx > 15) & (xx < 30)
        valid = ~sel
        out = inpaint_fmm(img, valid, radius=4)
        assert np.isfinite(out).all()
        assert np.abs(out - img)[sel].max() <= 0.35

    def test_corner_hole_stays_bounded(self):
        h = w = 48
        yy, xx = np.mgrid[0:h, 0:w]
        field = 0.3 + 0.5 * np.sin(xx / 10.0) * np.cos(yy / 8.0)
        img = np.stack([field, 1.0 - field, field * 0.5], axis=2)
        sel = (yy < 7) & (xx < 7)
        valid = ~sel
        out = inpaint_fmm(img, valid, radius=4)
        assert np.isfinite(out).all()
        assert np.abs(out - img)[sel].max() <= 0.35

    def test_radius_one_still_fills_everything(self):
        rng = np.random.default_rng(13)
        img = rng.random((20, 20, 3))
        valid = rng.random((20, 20)) > 0.5
        valid[10, 10] = True
        out = inpaint_fmm(img, valid, radius=1)
        assert np.isfinite(out).all()
