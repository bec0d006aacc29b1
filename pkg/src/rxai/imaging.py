"""Raster helpers: half-pixel bilinear resampling, image I/O and the overlay colormap."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the last two axes of ``arr`` to ``(out_h, out_w)``; returns float64.

    Pure bilinear interpolation, no antialiasing. Each output is a convex
    combination of source values, so the output range stays inside the
    source range.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {(out_h, out_w)}")
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    r0, r1, fr = _axis_weights(h, out_h)
    c0, c1, fc = _axis_weights(w, out_w)
    rows = arr[..., r0, :] * (1 - fr)[:, None] + arr[..., r1, :] * fr[:, None]
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def load_rgb(path) -> np.ndarray:
    """Read a PPM (P6) or PNG file into an ``H x W x 3`` uint8 array."""
    path = Path(path)
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ValueError(f"{path}: expected an 8-bit RGB image, got mode {img.mode!r}")
        return np.asarray(img, dtype=np.uint8).copy()


def save_gray(path, values01: np.ndarray) -> None:
    """Write a [0, 1] map as an 8-bit grayscale PGM/PNG (format from the suffix)."""
    px = np.round(np.clip(values01, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(px).save(path)


def save_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


# Blue -> cyan -> green -> yellow -> red, linearly interpolated between anchors.
_ANCHORS = np.array([
    [0.00, 0, 0, 128],
    [0.125, 0, 0, 255],
    [0.375, 0, 255, 255],
    [0.500, 0, 255, 0],
    [0.625, 255, 255, 0],
    [0.875, 255, 0, 0],
    [1.00, 128, 0, 0],
], dtype=np.float64)


def _build_lut() -> np.ndarray:
    t = np.linspace(0.0, 1.0, 256)
    lut = np.stack([np.interp(t, _ANCHORS[:, 0], _ANCHORS[:, i]) for i in (1, 2, 3)], axis=1)
    return np.round(lut).astype(np.uint8)


COLORMAP = _build_lut()
COLORMAP.flags.writeable = False


def colorize(values01: np.ndarray) -> np.ndarray:
    idx = np.round(np.clip(values01, 0.0, 1.0) * 255).astype(np.intp)
    return COLORMAP[idx]


def overlay(rgb: np.ndarray, values01: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the colour-mapped saliency over ``rgb`` (both ``H x W``)."""
    heat = colorize(values01).astype(np.float64)
    out = (1 - alpha) * np.asarray(rgb, dtype=np.float64) + alpha * heat
    return np.round(out).astype(np.uint8)
