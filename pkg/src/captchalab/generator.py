"""CAPTCHA generation: guide construction + hijacked sampling, dataset
production with JSONL manifests, and annotation statistics.

Everything is reproducible from (profile, seed): sample seeds, split
assignment and retry seeds all derive from the master seed through
SeedSequence spawning, and images are written as PNG so bytes survive a
round trip.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .arrays import to_model_space, to_storage_space, validate_storage
from .diffusion import NoisePredictor, NoiseSchedule
from .edges import canny_edges
from .errors import ConfigurationError, EvaluationError, GenerationError, PlacementError
from .guide import CharPlacement, GuideImage, GuideParams, build_guide, mean_min_gap
from .protocols import EvalSample
from .sampling import HijackEvent, SamplerConfig, ddim_sample

MANIFEST_FORMAT = "captchalab-manifest-1"


@dataclass(frozen=True)
class SamplerSettings:
    """Profile-level knobs for the hijacked reverse process."""

    steps: int = 50
    eta: float = 0.0
    t1: int = 15
    t2: int = 35
    mu1: float = 0.5  # weight on the trajectory state at t1
    mu2: float = 0.5  # weight on the guide image at t1
    mu3: float = 0.9  # weight on the trajectory state at t2
    mu4: float = 0.1  # weight on the edge map at t2
    prenoise_guide: bool = False
    # edge hijack triggers when the font is dense:
    edge_min_chars: int = 5
    edge_max_gap_px: float = 8.0

    def __post_init__(self):
        if not 0 <= self.t1 < self.t2 < self.steps:
            raise ConfigurationError(
                f"need 0 <= t1 < t2 < steps, got t1={self.t1} t2={self.t2} steps={self.steps}"
            )


@dataclass(frozen=True)
class GenerationProfile:
    name: str
    image_size: int = 256
    font_count: int = 5
    guide: GuideParams = field(default_factory=GuideParams)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)


# Per-version traits from the dataset parameter table; v2 is the
# higher-randomness variant (random size, wider rotation/distortion, more
# lines — the extra randomness is isolated to this block).
PROFILE_TRAITS = {
    "v1": {
        "font_count": 5,
        "guide": {"font_size": 75, "rotation_max_deg": 20.0, "shear_amp_max": 3.0,
                  "line_count_range": (2, 5)},
    },
    "v2": {
        "font_count": 4,
        "guide": {"font_size": (55, 70), "rotation_max_deg": 30.0, "shear_amp_max": 5.0,
                  "perspective_max": 0.0012, "line_count_range": (3, 6)},
    },
}


def _profile_from_traits(name: str) -> GenerationProfile:
    traits = PROFILE_TRAITS[name]
    return GenerationProfile(
        name=name,
        font_count=traits["font_count"],
        guide=GuideParams(**traits["guide"]),
    )


def profile_v1() -> GenerationProfile:
    """5 fonts at fixed size 75."""
    return _profile_from_traits("v1")


def profile_v2() -> GenerationProfile:
    """4 fonts, size drawn from [55, 70], wider transforms and more lines."""
    return _profile_from_traits("v2")


@dataclass
class CaptchaSample:
    id: str
    image: np.ndarray  # storage space
    placements: list
    prompt_order: list
    profile_name: str
    seed: int
    hijack_record: list = field(default_factory=list)
    resolution_mode: str = "native"

    def __post_init__(self):
        validate_storage(self.image)
        if not self.placements:
            raise ValueError("sample must carry at least one placement")


def _needs_edge_hijack(guide: GuideImage, settings: SamplerSettings) -> bool:
    return (
        len(guide.placements) >= settings.edge_min_chars
        or mean_min_gap(guide.placements) < settings.edge_max_gap_px
    )


def generate_captcha(
    predictor: NoisePredictor,
    schedule: NoiseSchedule,
    profile: GenerationProfile,
    backgrounds: list,
    charset: list,
    fonts: list,
    seed: int,
    sample_id: str | None = None,
) -> CaptchaSample:
    """One guide -> hijacked reverse process -> storage-space sample.

    The guide enters the trajectory at t1; when the character layout is
    dense its Canny edge map enters again at t2. Annotations are the
    guide's placements verbatim — the blend is pixel-aligned, so the
    diffusion pass never moves a box.
    """
    if len(fonts) != profile.font_count:
        raise ConfigurationError(
            f"profile {profile.name!r} wants {profile.font_count} fonts, got {len(fonts)}"
        )
    if not backgrounds:
        raise ConfigurationError("background pool is empty")

    ss = np.random.SeedSequence(seed)
    guide_ss, sampler_ss = ss.spawn(2)
    guide_rng = np.random.default_rng(guide_ss)

    guide = None
    last_bg = None
    for _ in range(3):
        last_bg = int(guide_rng.integers(0, len(backgrounds)))
        try:
            guide = build_guide(backgrounds[last_bg], charset, fonts, profile.guide, guide_rng)
            break
        except PlacementError:
            continue
    if guide is None:
        raise GenerationError(f"placement retries exhausted (last background index {last_bg})")

    s = profile.sampler
    guide_model = to_model_space(guide.pixels)
    events = [HijackEvent(s.t1, guide_model, s.mu1, s.mu2, prenoise=s.prenoise_guide)]
    if _needs_edge_hijack(guide, s):
        events.append(HijackEvent(s.t2, canny_edges(guide_model), s.mu3, s.mu4, edge_mode=True))

    cfg = SamplerConfig(
        steps=s.steps, eta=s.eta,
        seed=int(sampler_ss.generate_state(1)[0]), hijacks=tuple(events),
    )
    shape = (profile.image_size, profile.image_size, 3)
    out = ddim_sample(predictor, schedule, cfg, shape)

    native = getattr(getattr(predictor, "config", None), "image_size", profile.image_size)
    return CaptchaSample(
        id=sample_id or f"{profile.name}-{seed:012x}",
        image=to_storage_space(out),
        placements=guide.placements,
        prompt_order=guide.prompt_order,
        profile_name=profile.name,
        seed=seed,
        hijack_record=[
            {"at_step": e.at_step, "mu_keep": e.mu_keep, "mu_inject": e.mu_inject,
             "edge_mode": e.edge_mode, "prenoise": e.prenoise}
            for e in events
        ],
        resolution_mode="native" if native == profile.image_size else "fullconv",
    )


@dataclass
class ManifestRecord:
    id: str
    image_path: str
    placements: list  # serialised CharPlacement dicts
    prompt_order: list
    seed: int
    split: str
    status: str = "ok"  # ok | skipped
    hijack_record: list = field(default_factory=list)
    resolution_mode: str = "native"


@dataclass
class DatasetManifest:
    format: str
    profile_name: str
    n_requested: int
    split: float
    master_seed: int
    records: list

    @property
    def written(self):
        return [r for r in self.records if r.status == "ok"]

    def split_records(self, split: str):
        return [r for r in self.written if r.split == split]

    def save(self, path):
        lines = [
            json.dumps(
                {
                    "kind": "header", "format": self.format,
                    "profile": self.profile_name, "n_requested": self.n_requested,
                    "n_written": len(self.written), "split": self.split,
                    "master_seed": self.master_seed,
                },
                sort_keys=True, ensure_ascii=False,
            )
        ]
        for r in self.records:
            lines.append(json.dumps({"kind": "record", **asdict(r)}, sort_keys=True, ensure_ascii=False))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        if header.get("format") != MANIFEST_FORMAT:
            raise ConfigurationError(f"unrecognised manifest format {header.get('format')!r}")
        records = []
        for line in lines[1:]:
            blob = json.loads(line)
            blob.pop("kind", None)
            blob["placements"] = [dict(p) for p in blob["placements"]]
            records.append(ManifestRecord(**blob))
        return cls(
            format=header["format"], profile_name=header["profile"],
            n_requested=header["n_requested"], split=header["split"],
            master_seed=header["master_seed"], records=records,
        )


def placement_to_dict(p: CharPlacement) -> dict:
    return {
        "glyph": p.glyph, "bbox": list(p.bbox), "font_id": p.font_id,
        "size_px": p.size_px, "rotation_deg": p.rotation_deg,
        "distortion": dict(p.distortion), "color": list(p.color),
    }


def placement_from_dict(d: dict) -> CharPlacement:
    return CharPlacement(
        glyph=d["glyph"], bbox=tuple(d["bbox"]), font_id=d["font_id"],
        size_px=d["size_px"], rotation_deg=d["rotation_deg"],
        distortion=dict(d.get("distortion", {})), color=tuple(d.get("color", (0, 0, 0))),
    )


def _sample_seed(master_seed: int, index: int, attempt: int) -> int:
    return int(np.random.SeedSequence([master_seed, index, attempt]).generate_state(1)[0])


def generate_dataset(
    predictor: NoisePredictor,
    schedule: NoiseSchedule,
    profile: GenerationProfile,
    backgrounds: list,
    charset: list,
    fonts: list,
    n: int,
    split: float,
    out_dir,
    master_seed: int,
    jobs: int = 1,
) -> DatasetManifest:
    """Write n samples (PNG + manifest.jsonl) under out_dir.

    Per-sample generation failures are retried up to 3 times with fresh
    derived seeds, then recorded as skipped — never silently regenerated,
    so (profile, master_seed) always maps to the same dataset.
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    if not 0.0 < split < 1.0:
        raise ConfigurationError(f"split must be in (0,1), got {split}")
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    n_train = int(round(n * split))
    perm = np.random.default_rng(np.random.SeedSequence([master_seed, 0xA55])).permutation(n)
    is_train = np.zeros(n, dtype=bool)
    is_train[perm[:n_train]] = True

    def produce(index: int):
        sample_id = f"{profile.name}-{index:05d}"
        for attempt in range(3):
            seed = _sample_seed(master_seed, index, attempt)
            try:
                return index, generate_captcha(
                    predictor, schedule, profile, backgrounds, charset, fonts,
                    seed, sample_id=sample_id,
                ), seed
            except GenerationError:
                continue
        return index, None, _sample_seed(master_seed, index, 2)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            produced = list(pool.map(produce, range(n)))
    else:
        produced = [produce(i) for i in range(n)]

    records = []
    for index, sample, seed in produced:
        split_name = "train" if is_train[index] else "test"
        sample_id = f"{profile.name}-{index:05d}"
        if sample is None:
            records.append(
                ManifestRecord(id=sample_id, image_path="", placements=[], prompt_order=[],
                               seed=seed, split=split_name, status="skipped")
            )
            continue
        rel = f"images/{sample_id}.png"
        Image.fromarray(sample.image).save(out_dir / rel)
        records.append(
            ManifestRecord(
                id=sample_id, image_path=rel,
                placements=[placement_to_dict(p) for p in sample.placements],
                prompt_order=list(sample.prompt_order), seed=seed, split=split_name,
                hijack_record=sample.hijack_record, resolution_mode=sample.resolution_mode,
            )
        )

    manifest = DatasetManifest(
        format=MANIFEST_FORMAT, profile_name=profile.name, n_requested=n,
        split=split, master_seed=master_seed, records=records,
    )
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def annotation_stats(manifest: DatasetManifest, root=None) -> dict:
    """Exact counts over all written records; verifies image files when a
    dataset root is supplied."""
    if root is not None:
        missing = [
            r.id for r in manifest.written if not (Path(root) / r.image_path).exists()
        ]
        if missing:
            raise EvaluationError(f"missing image files for ids: {missing}")
    glyph_freq: dict = {}
    char_counts = []
    widths, heights = [], []
    for r in manifest.written:
        char_counts.append(len(r.placements))
        for p in r.placements:
            glyph_freq[p["glyph"]] = glyph_freq.get(p["glyph"], 0) + 1
            widths.append(p["bbox"][2])
            heights.append(p["bbox"][3])
    return {
        "n_samples": len(manifest.written),
        "n_skipped": len(manifest.records) - len(manifest.written),
        "total_characters": sum(char_counts),
        "char_count_histogram": {k: char_counts.count(k) for k in sorted(set(char_counts))},
        "glyph_frequency": glyph_freq,
        "box_width_mean": float(np.mean(widths)) if widths else 0.0,
        "box_height_mean": float(np.mean(heights)) if heights else 0.0,
    }


def load_eval_samples(manifest: DatasetManifest, root, split: str = "test") -> list:
    """Materialise EvalSamples (image pixels in memory) for a split."""
    out = []
    for r in manifest.split_records(split):
        img = np.asarray(Image.open(Path(root) / r.image_path).convert("RGB"))
        out.append(
            EvalSample(
                id=r.id, image=img,
                placements=[placement_from_dict(p) for p in r.placements],
                prompt_order=list(r.prompt_order),
            )
        )
    return out


def load_backgrounds(directory, size: int) -> list:
    """All images under a directory, resized square to `size` (storage space)."""
    paths = sorted(
        p for p in Path(directory).iterdir()
        if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
    )
    if not paths:
        raise ConfigurationError(f"no images found under {directory}")
    out = []
    for p in paths:
        img = Image.open(p).convert("RGB").resize((size, size), Image.BILINEAR)
        out.append(np.asarray(img))
    return out


def load_charset(path) -> list:
    """UTF-8 charset file, one glyph per line; order kept, duplicates dropped."""
    seen = set()
    glyphs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        g = line.strip()
        if g and g not in seen:
            seen.add(g)
            glyphs.append(g)
    if not glyphs:
        raise ConfigurationError(f"charset file {path} contains no glyphs")
    return glyphs
