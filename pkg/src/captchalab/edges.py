"""Canny edge detection for edge-map guidance.

Classic pipeline: Gaussian smoothing, Sobel gradients, non-maximum
suppression along the quantised gradient direction, then double-threshold
hysteresis (weak pixels survive only when 8-connected to a strong one).

Thresholds are fractions of the maximum gradient magnitude, which makes
the detector invariant to global brightness offsets and to uniform
rescaling of the input.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .arrays import LUMA_WEIGHTS

DEFAULT_SIGMA = 1.4
DEFAULT_LOW = 0.1
DEFAULT_HIGH = 0.3


def canny_edges(
    img: np.ndarray,
    low_threshold: float = DEFAULT_LOW,
    high_threshold: float = DEFAULT_HIGH,
    sigma: float = DEFAULT_SIGMA,
) -> np.ndarray:
    """Binary edge map of a model-space image, as +/-1 floats on 3 channels."""
    if not 0.0 < low_threshold < high_threshold:
        raise ValueError(
            f"need 0 < low < high, got low={low_threshold} high={high_threshold}"
        )
    gray = img.astype(np.float64) @ LUMA_WEIGHTS if img.ndim == 3 else img.astype(np.float64)

    smoothed = ndimage.gaussian_filter(gray, sigma=sigma, mode="reflect")
    gx = ndimage.sobel(smoothed, axis=1, mode="reflect")
    gy = ndimage.sobel(smoothed, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0.0:
        edges = np.zeros_like(gray, dtype=bool)
    else:
        thinned = _non_maximum_suppression(mag, gx, gy)
        strong = thinned > high_threshold * peak
        weak = thinned > low_threshold * peak
        labels, _ = ndimage.label(weak, structure=np.ones((3, 3)))
        keep = np.unique(labels[strong])
        edges = np.isin(labels, keep[keep > 0])

    out = np.where(edges, 1.0, -1.0).astype(np.float32)
    return np.repeat(out[:, :, None], 3, axis=2)


def _non_maximum_suppression(mag, gx, gy):
    """Zero out pixels that do not dominate their two neighbours along the
    gradient direction (quantised to 4 axes).

    The comparison is >= towards lower indices and > towards higher ones,
    so a two-pixel-wide symmetric ridge keeps exactly one pixel.
    """
    angle = np.mod(np.arctan2(gy, gx), np.pi)  # fold to [0, pi)
    sector = np.round(angle / (np.pi / 4)).astype(int) % 4  # 0:E-W 1:NE-SW 2:N-S 3:NW-SE

    padded = np.pad(mag, 1, mode="constant")
    offsets = {
        0: ((0, -1), (0, 1)),    # horizontal gradient: compare left/right
        1: ((-1, -1), (1, 1)),   # diagonal
        2: ((-1, 0), (1, 0)),    # vertical gradient: compare up/down
        3: ((-1, 1), (1, -1)),   # anti-diagonal
    }
    keep = np.zeros_like(mag, dtype=bool)
    h, w = mag.shape
    for s, ((dy0, dx0), (dy1, dx1)) in offsets.items():
        before = padded[1 + dy0 : 1 + dy0 + h, 1 + dx0 : 1 + dx0 + w]
        after = padded[1 + dy1 : 1 + dy1 + h, 1 + dx1 : 1 + dx1 + w]
        keep |= (sector == s) & (mag >= before) & (mag > after)
    return np.where(keep, mag, 0.0)
