"""Deterministic synthetic RGB scenes used as fixtures and demo inputs."""
from __future__ import annotations

import numpy as np


def synthetic_scene(seed: int, height: int = 40, width: int = 40, blobs: int = 3) -> np.ndarray:
    """Smooth two-colour gradient background with a few solid-colour ellipses and mild noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    c0, c1 = rng.uniform(0, 255, size=(2, 3))
    angle = rng.uniform(0, np.pi)
    t = (np.cos(angle) * xx / width + np.sin(angle) * yy / height + 1) / 2
    img = c0 * (1 - t[..., None]) + c1 * t[..., None]
    for _ in range(blobs):
        cy, cx = rng.uniform(0.15, 0.85) * height, rng.uniform(0.15, 0.85) * width
        ry, rx = rng.uniform(0.08, 0.22) * height, rng.uniform(0.08, 0.22) * width
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[inside] = rng.uniform(0, 255, size=3)
    img += rng.normal(0, 4.0, size=img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)
