"""Image array conventions and conversions.

Two value domains are used throughout:

* storage space — uint8 HxWx3 in [0, 255]; what gets written to PNG and
  what the guide builder works in.
* model space — float32 HxWx3 in [-1, 1]; what the diffusion model sees.
  The symmetric range keeps the forward process centred on zero noise.
"""

from __future__ import annotations

import numpy as np

ALLOWED_SIZES = (32, 64, 128, 256)

# Rec. 601 luma weights, applied on the 0-255 scale.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_model_space(img: np.ndarray) -> np.ndarray:
    """Map uint8 [0,255] to float32 [-1,1]."""
    return (img.astype(np.float32) / 127.5) - 1.0


def to_storage_space(img: np.ndarray) -> np.ndarray:
    """Map model-space floats back to uint8, clipping to [-1,1] first."""
    clipped = np.clip(img, -1.0, 1.0)
    return np.rint((clipped + 1.0) * 127.5).astype(np.uint8)


def luma(img: np.ndarray) -> np.ndarray:
    """Per-pixel Rec. 601 luminance of a storage-space image, as float64 HxW."""
    return img.astype(np.float64) @ LUMA_WEIGHTS


def validate_storage(img: np.ndarray, sizes=ALLOWED_SIZES) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 array, got shape {img.shape}")
    h, w = img.shape[:2]
    if h != w or (sizes is not None and h not in sizes):
        raise ValueError(f"expected square image with side in {sizes}, got {h}x{w}")
    if img.dtype != np.uint8:
        raise ValueError(f"storage space requires uint8, got {img.dtype}")


def validate_model(img: np.ndarray, sizes=ALLOWED_SIZES) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 array, got shape {img.shape}")
    h, w = img.shape[:2]
    if h != w or (sizes is not None and h not in sizes):
        raise ValueError(f"expected square image with side in {sizes}, got {h}x{w}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"model space requires a float dtype, got {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise ValueError("model-space image contains NaN or Inf")
    if img.min() < -1.0 - 1e-6 or img.max() > 1.0 + 1e-6:
        raise ValueError(
            f"model-space values outside [-1,1]: min={img.min():.4f} max={img.max():.4f}"
        )
