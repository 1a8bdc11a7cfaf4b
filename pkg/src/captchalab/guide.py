"""Guide-image construction.

A guide image is the character-bearing picture injected into the reverse
diffusion trajectory. Building one runs four stages over a 256x256x3
storage-space background:

    Gaussian blur -> interference lines -> brightness balancing ->
    randomized character rendering

Brightness balancing runs after the lines so that every block of the
pre-character background respects the luminance cap; characters are drawn
last and keep full contrast. Character placements are the ground truth for
the final CAPTCHA: the diffusion hijack is pixel-aligned and never moves
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from .arrays import luma, validate_storage
from .errors import PlacementError
from .metrics import iou

# Interference lines are guaranteed at least this many pixels long.
MIN_LINE_SPAN = 64


@dataclass(frozen=True)
class BrightnessParams:
    block_n: int = 32
    threshold_L: float = 140.0

    def __post_init__(self):
        if self.block_n < 1:
            raise ValueError("block_n must be >= 1")
        if not 0.0 < self.threshold_L <= 255.0:
            raise ValueError(f"threshold_L must be in (0, 255], got {self.threshold_L}")


@dataclass(frozen=True)
class CharPlacement:
    glyph: str
    bbox: tuple  # (x, y, w, h), top-left origin
    font_id: int
    size_px: int
    rotation_deg: float
    distortion: dict = field(default_factory=dict)
    color: tuple = (0, 0, 0)


@dataclass
class GuideImage:
    pixels: np.ndarray
    placements: list
    prompt_order: list

    def __post_init__(self):
        validate_storage(self.pixels)
        if not 4 <= len(self.placements) <= 6:
            raise ValueError(f"expected 4-6 placements, got {len(self.placements)}")
        if sorted(self.prompt_order) != list(range(len(self.placements))):
            raise ValueError("prompt_order must be a permutation of placement indices")


@dataclass(frozen=True)
class GuideParams:
    char_count_range: tuple = (4, 6)
    font_size: object = 75  # int, or (lo, hi) for uniform sampling
    rotation_max_deg: float = 20.0
    distortion: bool = True
    shear_amp_max: float = 3.0
    perspective_max: float = 0.0008
    line_count_range: tuple = (2, 5)
    line_width_range: tuple = (1, 3)
    overlap_max: float = 0.05
    blur_sigma: float = 1.2
    brightness: BrightnessParams = field(default_factory=BrightnessParams)
    placement_retries: int = 200


@lru_cache(maxsize=64)
def _load_font(path: str, size: int):
    return ImageFont.truetype(path, size)


def preprocess_background(img: np.ndarray, blur_sigma: float) -> np.ndarray:
    """Gaussian-blur a storage-space background (reflective border)."""
    if blur_sigma <= 0:
        raise ValueError(f"blur_sigma must be > 0, got {blur_sigma}")
    validate_storage(img)
    blurred = ndimage.gaussian_filter(
        img.astype(np.float64), sigma=(blur_sigma, blur_sigma, 0.0), mode="reflect"
    )
    return np.rint(blurred).astype(np.uint8)


def balance_brightness(img: np.ndarray, params: BrightnessParams) -> np.ndarray:
    """Cap each n x n block's mean luminance at threshold_L.

    Blocks over the threshold are scaled by L / l_ij on all three channels
    with floor quantisation, which keeps the operation idempotent bit for
    bit and never raises a pixel value.
    """
    validate_storage(img)
    n = params.block_n
    h, w = img.shape[:2]
    if h % n or w % n:
        raise ValueError(f"block_n={n} does not divide image side {h}")
    out = img.copy()
    block_luma = luma(img).reshape(h // n, n, w // n, n).mean(axis=(1, 3))
    over_rows, over_cols = np.nonzero(block_luma > params.threshold_L)
    for r, c in zip(over_rows, over_cols):
        scale = params.threshold_L / block_luma[r, c]
        block = out[r * n : (r + 1) * n, c * n : (c + 1) * n]
        block[:] = np.floor(block.astype(np.float64) * scale).astype(np.uint8)
    return out


def draw_interference_lines(img: np.ndarray, count: int, rng, width_range=(1, 3)) -> np.ndarray:
    """Draw `count` random bent lines (random colour/width) onto a copy."""
    if count < 0:
        raise ValueError("count must be >= 0")
    validate_storage(img)
    if count == 0:
        return img.copy()
    pil = Image.fromarray(img)
    draw = ImageDraw.Draw(pil)
    side = img.shape[0]
    for _ in range(count):
        x0, y0, x1, y1 = _line_endpoints(side, rng)
        # bend the line with a midpoint pushed off-axis
        mx = (x0 + x1) / 2 + float(rng.uniform(-side / 10, side / 10))
        my = (y0 + y1) / 2 + float(rng.uniform(-side / 10, side / 10))
        color = tuple(int(v) for v in rng.integers(0, 256, size=3))
        width = int(rng.integers(width_range[0], width_range[1] + 1))
        draw.line([(x0, y0), (mx, my), (x1, y1)], fill=color, width=width, joint="curve")
    return np.asarray(pil)


def _line_endpoints(side, rng):
    # span shrinks on small canvases so an endpoint pair always fits
    lo = min(MIN_LINE_SPAN, side * 0.25)
    hi = min(2 * MIN_LINE_SPAN, side * 0.75)
    for _ in range(1000):
        x0, y0 = rng.uniform(0, side, size=2)
        angle = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(lo, hi)
        x1, y1 = x0 + length * math.cos(angle), y0 + length * math.sin(angle)
        if 0 <= x1 < side and 0 <= y1 < side:
            return x0, y0, x1, y1
    return 0.0, 0.0, side - 1.0, side - 1.0


def _sample_size(font_size, rng) -> int:
    if isinstance(font_size, (tuple, list)):
        lo, hi = font_size
        return int(rng.integers(lo, hi + 1))
    return int(font_size)


def _shear_rows(arr: np.ndarray, amp: float, period: float, phase: float) -> np.ndarray:
    """Sinusoidal horizontal shear: row y shifts by amp*sin(2*pi*y/period + phase)."""
    out = np.zeros_like(arr)
    for y in range(arr.shape[0]):
        dx = int(round(amp * math.sin(2 * math.pi * y / period + phase)))
        out[y] = np.roll(arr[y], dx, axis=0)
    return out


def _render_glyph_tile(glyph, font_path, size_px, rotation_deg, distortion, color):
    """Rasterise one transformed glyph; returns a tight RGBA array."""
    font = _load_font(font_path, size_px)
    pad = size_px
    x0, y0, x1, y1 = font.getbbox(glyph)
    tile = Image.new("RGBA", (x1 - x0 + 2 * pad, y1 - y0 + 2 * pad), (0, 0, 0, 0))
    ImageDraw.Draw(tile).text((pad - x0, pad - y0), glyph, font=font, fill=tuple(color) + (255,))
    if distortion:
        arr = _shear_rows(
            np.asarray(tile), distortion["shear_amp"], distortion["shear_period"], distortion["shear_phase"]
        )
        tile = Image.fromarray(arr)
        p = distortion["perspective"]
        if p:
            tile = tile.transform(
                tile.size, Image.PERSPECTIVE, (1, 0, 0, 0, 1, 0, p, p), resample=Image.BILINEAR
            )
    if rotation_deg:
        tile = tile.rotate(rotation_deg, expand=True, resample=Image.BICUBIC)
    arr = np.asarray(tile)
    ys, xs = np.nonzero(arr[:, :, 3])
    if ys.size == 0:
        raise PlacementError(f"glyph {glyph!r} rendered no ink (font {font_path})")
    return arr[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def render_characters(
    img: np.ndarray, charset: list, fonts: list, count: int, params: GuideParams, rng
) -> tuple[np.ndarray, list]:
    """Place `count` distinct glyphs with randomized font, size, rotation,
    distortion and colour; rejection-samples positions against the overlap
    cap and raises PlacementError once the retry budget is spent."""
    if not charset:
        raise ValueError("charset is empty")
    if not fonts:
        raise ValueError("fonts list is empty")
    lo, hi = params.char_count_range
    if not (lo <= count <= hi and 4 <= count <= 6):
        raise ValueError(f"count {count} outside [{max(lo, 4)}, {min(hi, 6)}]")
    if count > len(charset):
        raise ValueError(f"need {count} distinct glyphs, charset has {len(charset)}")
    validate_storage(img)

    side = img.shape[0]
    pil = Image.fromarray(img)
    glyph_ids = rng.choice(len(charset), size=count, replace=False)
    placements: list[CharPlacement] = []
    for gid in glyph_ids:
        glyph = charset[int(gid)]
        font_id = int(rng.integers(0, len(fonts)))
        size_px = _sample_size(params.font_size, rng)
        rotation = float(rng.uniform(-params.rotation_max_deg, params.rotation_max_deg))
        color = tuple(int(v) for v in rng.integers(0, 256, size=3))
        distortion = {}
        if params.distortion:
            distortion = {
                "shear_amp": float(rng.uniform(0.0, params.shear_amp_max)),
                "shear_period": float(rng.uniform(size_px / 2, size_px * 2)),
                "shear_phase": float(rng.uniform(0.0, 2 * math.pi)),
                "perspective": float(rng.uniform(0.0, params.perspective_max)),
            }
        tile = _render_glyph_tile(glyph, fonts[font_id], size_px, rotation, distortion, color)
        th, tw = tile.shape[:2]
        if tw > side or th > side:
            raise PlacementError(f"glyph {glyph!r} tile {tw}x{th} larger than image")
        bbox = None
        for _ in range(params.placement_retries):
            x = int(rng.integers(0, side - tw + 1))
            y = int(rng.integers(0, side - th + 1))
            candidate = (x, y, tw, th)
            if all(iou(candidate, p.bbox) <= params.overlap_max for p in placements):
                bbox = candidate
                break
        if bbox is None:
            raise PlacementError(f"no non-overlapping spot for glyph {glyph!r} after retries")
        tile_img = Image.fromarray(tile)
        pil.paste(tile_img, (bbox[0], bbox[1]), tile_img)
        placements.append(
            CharPlacement(
                glyph=glyph,
                bbox=bbox,
                font_id=font_id,
                size_px=size_px,
                rotation_deg=rotation,
                distortion=distortion,
                color=color,
            )
        )
    return np.asarray(pil.convert("RGB")), placements


def build_background_stage(background: np.ndarray, params: GuideParams, rng) -> np.ndarray:
    """Everything that happens before characters: blur, lines, balancing."""
    out = preprocess_background(background, params.blur_sigma)
    n_lines = int(rng.integers(params.line_count_range[0], params.line_count_range[1] + 1))
    out = draw_interference_lines(out, n_lines, rng, params.line_width_range)
    return balance_brightness(out, params.brightness)


def build_guide(
    background: np.ndarray, charset: list, fonts: list, params: GuideParams, rng
) -> GuideImage:
    """Full guide construction from one pre-sized background image."""
    stage = build_background_stage(background, params, rng)
    lo, hi = params.char_count_range
    count = int(rng.integers(lo, hi + 1))
    pixels, placements = render_characters(stage, charset, fonts, count, params, rng)
    prompt_order = [int(i) for i in rng.permutation(len(placements))]
    return GuideImage(pixels=pixels, placements=placements, prompt_order=prompt_order)


def mean_min_gap(placements) -> float:
    """Mean over placements of the edge-to-edge distance to the nearest
    other placement; 0 when boxes touch or overlap."""
    if len(placements) < 2:
        return math.inf
    gaps = []
    for i, a in enumerate(placements):
        best = math.inf
        ax, ay, aw, ah = a.bbox
        for j, b in enumerate(placements):
            if i == j:
                continue
            bx, by, bw, bh = b.bbox
            dx = max(bx - (ax + aw), ax - (bx + bw), 0)
            dy = max(by - (ay + ah), ay - (by + bh), 0)
            best = min(best, math.hypot(dx, dy))
        gaps.append(best)
    return float(np.mean(gaps))
