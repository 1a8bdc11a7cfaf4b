import numpy as np
import pytest
from PIL import Image

from captchalab.errors import ConfigurationError, EvaluationError
from captchalab.generator import (
    DatasetManifest,
    GenerationProfile,
    SamplerSettings,
    annotation_stats,
    generate_captcha,
    generate_dataset,
    load_charset,
    load_eval_samples,
    profile_v1,
    profile_v2,
)
from captchalab.guide import GuideParams

from conftest import FONTS_5, LATIN_CHARSET, storage_backgrounds


def toy_profile(name="toy", steps=10, t1=3, t2=7, **sampler_kw):
    """64px profile small enough for CPU test runs."""
    from captchalab.guide import BrightnessParams

    return GenerationProfile(
        name=name,
        image_size=64,
        font_count=5,
        guide=GuideParams(font_size=13, rotation_max_deg=15.0, shear_amp_max=1.5,
                          line_count_range=(1, 2), blur_sigma=0.8,
                          brightness=BrightnessParams(block_n=16, threshold_L=140.0)),
        sampler=SamplerSettings(steps=steps, t1=t1, t2=t2, **sampler_kw),
    )


@pytest.fixture(scope="module")
def resources(toy_model_64):
    predictor, schedule = toy_model_64
    backgrounds = storage_backgrounds(4, 64, seed=50)
    return predictor, schedule, backgrounds


def ncc(a, b):
    a = a.astype(np.float64).ravel() - a.mean()
    b = b.astype(np.float64).ravel() - b.mean()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))


class TestProfiles:
    def test_v1_matches_table(self):
        p = profile_v1()
        assert (p.font_count, p.guide.font_size) == (5, 75)
        assert p.image_size == 256
        assert p.guide.char_count_range == (4, 6)

    def test_v2_matches_table(self):
        p = profile_v2()
        assert p.font_count == 4
        assert p.guide.font_size == (55, 70)
        assert p.guide.char_count_range == (4, 6)

    def test_sampler_defaults(self):
        s = SamplerSettings()
        assert s.steps == 50 and s.t1 == 15 and s.t2 == 35
        assert (s.mu1, s.mu2, s.mu3, s.mu4) == (0.5, 0.5, 0.9, 0.1)

    def test_t_ordering_enforced(self):
        with pytest.raises(ConfigurationError):
            SamplerSettings(t1=35, t2=15)


class TestGenerateCaptcha:
    def test_deterministic(self, resources):
        predictor, schedule, backgrounds = resources
        args = (predictor, schedule, toy_profile(), backgrounds, LATIN_CHARSET, FONTS_5, 123)
        a = generate_captcha(*args)
        b = generate_captcha(*args)
        assert np.array_equal(a.image, b.image)
        assert a.placements == b.placements
        assert a.prompt_order == b.prompt_order

    def test_annotations_come_from_guide(self, resources):
        predictor, schedule, backgrounds = resources
        s = generate_captcha(
            predictor, schedule, toy_profile(), backgrounds, LATIN_CHARSET, FONTS_5, 7
        )
        assert 4 <= len(s.placements) <= 6
        assert sorted(s.prompt_order) == list(range(len(s.placements)))
        for p in s.placements:
            x, y, w, h = p.bbox
            assert 0 <= x and 0 <= y and x + w <= 64 and y + h <= 64

    def test_guide_correlation_with_default_weights(self, resources):
        """The guide must leave a visible footprint in the output
        (threshold frozen after tuning the toy fixture)."""
        predictor, schedule, backgrounds = resources
        from captchalab.guide import build_guide

        # reference trajectory length and hijack points
        profile = toy_profile(steps=50, t1=15, t2=35)
        seed = 42
        ss = np.random.SeedSequence(seed)
        guide_ss, _ = ss.spawn(2)
        rng = np.random.default_rng(guide_ss)
        bg = int(rng.integers(0, len(backgrounds)))
        guide = build_guide(backgrounds[bg], LATIN_CHARSET, FONTS_5, profile.guide, rng)

        sample = generate_captcha(
            predictor, schedule, profile, backgrounds, LATIN_CHARSET, FONTS_5, seed
        )
        assert ncc(sample.image, guide.pixels) >= 0.2

    def test_zero_inject_weights_kill_guidance(self, resources):
        predictor, schedule, backgrounds = resources
        from captchalab.guide import build_guide

        profile = toy_profile(mu2=0.0, mu4=0.0, mu1=1.0, mu3=1.0)
        seed = 42
        ss = np.random.SeedSequence(seed)
        guide_ss, _ = ss.spawn(2)
        rng = np.random.default_rng(guide_ss)
        bg = int(rng.integers(0, len(backgrounds)))
        guide = build_guide(backgrounds[bg], LATIN_CHARSET, FONTS_5, profile.guide, rng)

        sample = generate_captcha(
            predictor, schedule, profile, backgrounds, LATIN_CHARSET, FONTS_5, seed
        )
        assert abs(ncc(sample.image, guide.pixels)) < 0.1

    def test_edge_hijack_rule(self, resources):
        predictor, schedule, backgrounds = resources
        profile = toy_profile()
        for seed in range(6):
            s = generate_captcha(
                predictor, schedule, profile, backgrounds, LATIN_CHARSET, FONTS_5, seed
            )
            has_edge = any(e["edge_mode"] for e in s.hijack_record)
            assert has_edge == (len(s.placements) >= 5) or has_edge
            if len(s.placements) >= profile.sampler.edge_min_chars:
                assert has_edge

    def test_font_count_mismatch_rejected(self, resources):
        predictor, schedule, backgrounds = resources
        with pytest.raises(ConfigurationError):
            generate_captcha(
                predictor, schedule, toy_profile(), backgrounds, LATIN_CHARSET, FONTS_5[:3], 0
            )


@pytest.fixture(scope="module")
def dataset(resources, tmp_path_factory):
    predictor, schedule, backgrounds = resources
    out = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(
        predictor, schedule, toy_profile(), backgrounds, LATIN_CHARSET, FONTS_5,
        n=10, split=0.8, out_dir=out, master_seed=99,
    )
    return out, manifest


class TestGenerateDataset:
    def test_split_arithmetic(self, dataset):
        _, manifest = dataset
        assert len(manifest.split_records("train")) == 8
        assert len(manifest.split_records("test")) == 2

    def test_manifest_roundtrip(self, dataset):
        out, manifest = dataset
        loaded = DatasetManifest.load(out / "manifest.jsonl")
        assert loaded == manifest

    def test_ids_unique_and_files_exist(self, dataset):
        out, manifest = dataset
        ids = [r.id for r in manifest.records]
        assert len(set(ids)) == len(ids)
        for r in manifest.written:
            assert (out / r.image_path).exists()

    def test_regeneration_is_byte_identical(self, resources, tmp_path_factory, dataset):
        predictor, schedule, backgrounds = resources
        out1, manifest1 = dataset
        out2 = tmp_path_factory.mktemp("ds2")
        manifest2 = generate_dataset(
            predictor, schedule, toy_profile(), backgrounds, LATIN_CHARSET, FONTS_5,
            n=10, split=0.8, out_dir=out2, master_seed=99,
        )
        assert (out1 / "manifest.jsonl").read_bytes() == (out2 / "manifest.jsonl").read_bytes()
        for r in manifest1.written:
            assert (out1 / r.image_path).read_bytes() == (out2 / r.image_path).read_bytes()
        assert manifest1 == manifest2

    def test_eval_samples_load(self, dataset):
        out, manifest = dataset
        samples = load_eval_samples(manifest, out, split="test")
        assert len(samples) == 2
        for s in samples:
            assert s.image.shape == (64, 64, 3)
            assert 4 <= len(s.placements) <= 6

    def test_stats(self, dataset):
        out, manifest = dataset
        stats = annotation_stats(manifest, root=out)
        assert stats["n_samples"] == 10
        assert stats["total_characters"] == sum(len(r.placements) for r in manifest.written)
        assert set(stats["char_count_histogram"]) <= {4, 5, 6}

    def test_stats_missing_file_flagged(self, dataset, tmp_path):
        _, manifest = dataset
        with pytest.raises(EvaluationError):
            annotation_stats(manifest, root=tmp_path)

    def test_invalid_args_rejected(self, resources, tmp_path):
        predictor, schedule, backgrounds = resources
        with pytest.raises(ConfigurationError):
            generate_dataset(predictor, schedule, toy_profile(), backgrounds,
                             LATIN_CHARSET, FONTS_5, n=0, split=0.8,
                             out_dir=tmp_path, master_seed=0)
        with pytest.raises(ConfigurationError):
            generate_dataset(predictor, schedule, toy_profile(), backgrounds,
                             LATIN_CHARSET, FONTS_5, n=5, split=1.5,
                             out_dir=tmp_path, master_seed=0)


def test_char_count_uniformity_chi_squared():
    """Count sampling (the same draw build_guide makes) is uniform over
    {4,5,6}: chi-squared not rejecting at alpha = 0.01 over 3000 draws."""
    from scipy import stats

    rng = np.random.default_rng(12345)
    lo, hi = GenerationProfile(name="x").guide.char_count_range
    draws = rng.integers(lo, hi + 1, size=3000)
    observed = [int((draws == k).sum()) for k in (4, 5, 6)]
    _, p_value = stats.chisquare(observed)
    assert p_value > 0.01


def test_closed_world_labels(dataset):
    """Every glyph in any annotation belongs to the configured charset."""
    _, manifest = dataset
    for record in manifest.written:
        for p in record.placements:
            assert p["glyph"] in LATIN_CHARSET


def test_charset_loader(tmp_path):
    path = tmp_path / "charset.txt"
    path.write_text("甲\n乙\n\n甲\n丙\n", encoding="utf-8")
    assert load_charset(path) == ["甲", "乙", "丙"]


def test_packaged_charset_placeholder():
    from importlib import resources as ir

    with ir.as_file(ir.files("captchalab") / "assets" / "charset_zh1000.txt") as p:
        glyphs = load_charset(p)
    assert len(glyphs) == 1000
