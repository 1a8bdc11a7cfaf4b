import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import ImageFont

from captchalab.arrays import luma
from captchalab.errors import PlacementError
from captchalab.guide import (
    MIN_LINE_SPAN,
    BrightnessParams,
    GuideParams,
    balance_brightness,
    build_background_stage,
    build_guide,
    draw_interference_lines,
    mean_min_gap,
    preprocess_background,
    render_characters,
)
from captchalab.metrics import iou

from conftest import storage_backgrounds


def block_lumas(img, n):
    h, w = img.shape[:2]
    return luma(img).reshape(h // n, n, w // n, n).mean(axis=(1, 3))


class TestPreprocessBackground:
    def test_tiny_sigma_is_identity(self):
        img = storage_backgrounds(1, 256, seed=0)[0]
        assert np.array_equal(preprocess_background(img, 1e-6), img)

    def test_constant_unchanged(self):
        img = np.full((256, 256, 3), 77, dtype=np.uint8)
        assert np.array_equal(preprocess_background(img, 1.4), img)

    def test_point_spread_preserves_mass(self):
        img = np.zeros((256, 256, 3), dtype=np.uint8)
        img[128, 128] = 255
        out = preprocess_background(img, 1.4).astype(np.float64)
        assert out[128, 128, 0] < 255
        assert abs(out.sum() - img.astype(np.float64).sum()) / img.sum() < 0.01

    def test_nonpositive_sigma_rejected(self):
        img = np.zeros((256, 256, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            preprocess_background(img, 0.0)


class TestBalanceBrightness:
    def test_below_threshold_untouched(self):
        img = np.full((64, 64, 3), 100, dtype=np.uint8)
        out = balance_brightness(img, BrightnessParams(block_n=32, threshold_L=128))
        assert np.array_equal(out, img)

    def test_proportional_scale_oracle(self):
        img = np.full((64, 64, 3), 200, dtype=np.uint8)
        out = balance_brightness(img, BrightnessParams(block_n=32, threshold_L=100))
        assert np.array_equal(out, np.full((64, 64, 3), 100, dtype=np.uint8))

    def test_black_unchanged(self):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        out = balance_brightness(img, BrightnessParams(block_n=32, threshold_L=100))
        assert np.array_equal(out, img)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_never_increases_and_caps_blocks(self, seed):
        img = np.random.default_rng(seed).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        params = BrightnessParams(block_n=16, threshold_L=120.0)
        out = balance_brightness(img, params)
        assert np.all(out <= img)
        assert block_lumas(out, 16).max() <= params.threshold_L + 0.5

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_idempotent_bit_exact(self, seed):
        img = np.random.default_rng(seed).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        params = BrightnessParams(block_n=16, threshold_L=140.0)
        once = balance_brightness(img, params)
        twice = balance_brightness(once, params)
        assert np.array_equal(once, twice)

    def test_block_size_must_divide(self):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            balance_brightness(img, BrightnessParams(block_n=24, threshold_L=100))


class TestInterferenceLines:
    def test_zero_count_noop(self):
        img = storage_backgrounds(1, 256, seed=1)[0]
        out = draw_interference_lines(img, 0, np.random.default_rng(0))
        assert np.array_equal(out, img)

    def test_seeded_determinism(self):
        img = storage_backgrounds(1, 256, seed=2)[0]
        a = draw_interference_lines(img, 5, np.random.default_rng(9))
        b = draw_interference_lines(img, 5, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_pixel_diff_lower_bound(self):
        """5 lines of >= MIN_LINE_SPAN px must touch at least
        5*MIN_LINE_SPAN pixels on a flat gray background."""
        img = np.full((256, 256, 3), 128, dtype=np.uint8)
        out = draw_interference_lines(img, 5, np.random.default_rng(4))
        changed = np.any(out != img, axis=2).sum()
        assert changed >= 5 * MIN_LINE_SPAN


class TestRenderCharacters:
    def test_contract(self, charset, fonts):
        img = storage_backgrounds(1, 256, seed=3)[0]
        params = GuideParams(font_size=40)
        out, placements = render_characters(
            img, charset, fonts, 4, params, np.random.default_rng(11)
        )
        assert len(placements) == 4
        side = img.shape[0]
        for p in placements:
            x, y, w, h = p.bbox
            assert 0 <= x and 0 <= y and x + w <= side and y + h <= side
        for i, a in enumerate(placements):
            for b in placements[i + 1 :]:
                assert iou(a.bbox, b.bbox) <= params.overlap_max

    def test_glyphs_distinct(self, charset, fonts):
        img = storage_backgrounds(1, 256, seed=4)[0]
        _, placements = render_characters(
            img, charset, fonts, 6, GuideParams(font_size=30), np.random.default_rng(12)
        )
        glyphs = [p.glyph for p in placements]
        assert len(set(glyphs)) == len(glyphs)
        assert all(g in charset for g in glyphs)

    def test_untransformed_bbox_matches_font_metrics(self, charset, fonts):
        img = np.full((256, 256, 3), 200, dtype=np.uint8)
        params = GuideParams(font_size=48, rotation_max_deg=0.0, distortion=False)
        _, placements = render_characters(
            img, charset, fonts, 4, params, np.random.default_rng(13)
        )
        for p in placements:
            font = ImageFont.truetype(fonts[p.font_id], p.size_px)
            x0, y0, x1, y1 = font.getmask(p.glyph).getbbox()  # reported ink extent
            assert abs(p.bbox[2] - (x1 - x0)) <= 2
            assert abs(p.bbox[3] - (y1 - y0)) <= 2

    def test_retry_exhaustion_raises_placement_error(self, charset, fonts):
        img = np.full((256, 256, 3), 100, dtype=np.uint8)
        # giant glyphs cannot avoid overlapping on a 256px canvas
        params = GuideParams(font_size=160, placement_retries=5, rotation_max_deg=0.0)
        with pytest.raises(PlacementError):
            render_characters(img, charset, fonts, 6, params, np.random.default_rng(14))

    def test_count_out_of_range_rejected(self, charset, fonts):
        img = np.full((256, 256, 3), 100, dtype=np.uint8)
        with pytest.raises(ValueError):
            render_characters(img, charset, fonts, 3, GuideParams(), np.random.default_rng(0))


class TestBuildGuide:
    def test_deterministic(self, charset, fonts):
        bg = storage_backgrounds(1, 256, seed=5)[0]
        params = GuideParams(font_size=40)
        g1 = build_guide(bg, charset, fonts, params, np.random.default_rng(21))
        g2 = build_guide(bg, charset, fonts, params, np.random.default_rng(21))
        assert np.array_equal(g1.pixels, g2.pixels)
        assert g1.placements == g2.placements
        assert g1.prompt_order == g2.prompt_order

    def test_background_stage_respects_luma_cap(self, charset, fonts):
        params = GuideParams()
        for seed, bg in enumerate(storage_backgrounds(5, 256, seed=6)):
            stage = build_background_stage(bg, params, np.random.default_rng(seed))
            n = params.brightness.block_n
            assert block_lumas(stage, n).max() <= params.brightness.threshold_L + 0.5

    def test_prompt_order_is_permutation(self, charset, fonts):
        bg = storage_backgrounds(1, 256, seed=7)[0]
        g = build_guide(bg, charset, fonts, GuideParams(font_size=40), np.random.default_rng(31))
        assert sorted(g.prompt_order) == list(range(len(g.placements)))

    def test_char_count_sampling_covers_range(self, charset, fonts):
        """The count draw is uniform over {4,5,6}: over 1000 draws each
        value appears at least 200 times (same code path as build_guide)."""
        params = GuideParams()
        rng = np.random.default_rng(41)
        lo, hi = params.char_count_range
        counts = [int(rng.integers(lo, hi + 1)) for _ in range(1000)]
        for value in (4, 5, 6):
            assert counts.count(value) >= 200

    def test_full_builds_cover_all_counts(self, charset, fonts):
        params = GuideParams(font_size=32)
        seen = set()
        backgrounds = storage_backgrounds(3, 256, seed=8)
        for seed in range(30):
            g = build_guide(
                backgrounds[seed % 3], charset, fonts, params, np.random.default_rng(seed)
            )
            seen.add(len(g.placements))
            assert 4 <= len(g.placements) <= 6
        assert seen == {4, 5, 6}


def test_mean_min_gap():
    a = type("P", (), {"bbox": (0, 0, 10, 10)})()
    b = type("P", (), {"bbox": (20, 0, 10, 10)})()  # 10px horizontal gap
    assert mean_min_gap([a, b]) == pytest.approx(10.0)
    assert mean_min_gap([a]) == float("inf")
    c = type("P", (), {"bbox": (5, 5, 10, 10)})()  # overlaps a
    assert mean_min_gap([a, c]) == 0.0
