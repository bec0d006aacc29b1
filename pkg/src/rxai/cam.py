"""Saliency-map generators.

All generators return a :class:`SaliencyMap` min-max normalised to [0, 1].
Pass accounting (see :mod:`rxai.instrument`):

=============  ==========  =============  =========
method         full        head           backward
=============  ==========  =============  =========
recipro        1           H*W            0
cam            1           0              0
grad           1           0              1
score          K + 1       0              0
ablation       1           K + 1          0
fake           0           0              0
=============  ==========  =============  =========
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from rxai import instrument
from rxai.imaging import bilinear_resize
from rxai.models import Model, SplitModel, split_model
from rxai.tensor import _softmax, backward_head, logit_layers

GAUSSIAN_3X3 = np.array([
    [0.25, 0.5, 0.25],
    [0.5, 1.0, 0.5],
    [0.25, 0.5, 0.25],
], dtype=np.float32)

KERNELS = ("dirac", "gaussian3x3")
_KERNEL_ALIASES = {"dirac": "dirac", "gaussian3x3": "gaussian3x3", "gauss3": "gaussian3x3", "gaussian": "gaussian3x3"}

METHODS = ("recipro", "cam", "grad", "score", "ablation", "fake")

# |y_c| below this makes the ablation slope undefined; such channels get slope 0
ABLATION_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class SpatialMask:
    position: tuple
    values: np.ndarray
    kernel: str


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray
    method: str = "raw"
    class_index: int = -1
    split_index: int = -1
    degenerate: bool = False

    @property
    def shape(self) -> tuple:
        return self.values.shape


def resolve_kernel(kernel: str) -> str:
    try:
        return _KERNEL_ALIASES[kernel]
    except KeyError:
        raise ValueError(f"unknown mask kernel {kernel!r}; choose from {KERNELS}") from None


def generate_spatial_masks(h: int, w: int, kernel: str = "dirac") -> list:
    """One mask per feature position, row-major; ``N = h * w`` masks in total."""
    kernel = resolve_kernel(kernel)
    if h < 1 or w < 1:
        raise ValueError(f"feature map must be at least 1x1, got {h}x{w}")
    masks = []
    for u in range(h):
        for v in range(w):
            m = np.zeros((h, w), np.float32)
            if kernel == "dirac":
                m[u, v] = 1.0
            else:
                # clip the 3x3 window at the borders
                r0, r1 = max(u - 1, 0), min(u + 2, h)
                c0, c1 = max(v - 1, 0), min(v + 2, w)
                m[r0:r1, c0:c1] = GAUSSIAN_3X3[r0 - u + 1:r1 - u + 1, c0 - v + 1:c1 - v + 1]
            masks.append(SpatialMask((u, v), m, kernel))
    return masks


@functools.lru_cache(maxsize=32)
def _mask_stack(h: int, w: int, kernel: str) -> np.ndarray:
    stack = np.stack([m.values for m in generate_spatial_masks(h, w, kernel)])
    stack.flags.writeable = False
    return stack


def normalize_map(raw: np.ndarray, *, method: str = "raw", class_index: int = -1,
                  split_index: int = -1) -> SaliencyMap:
    """Min-max normalise to [0, 1]; a constant input gives an all-zero, flagged map."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("saliency values must be finite")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return SaliencyMap(np.zeros(raw.shape, np.float32), method, class_index, split_index, True)
    if not np.isfinite(hi - lo):
        raw, lo, hi = raw / 2, lo / 2, hi / 2
    values = ((raw - lo) / (hi - lo)).astype(np.float32)
    return SaliencyMap(values, method, class_index, split_index, False)


def upsample_map(smap, target: Sequence[int]) -> np.ndarray:
    """Bilinear (half-pixel) upsampling of a map to ``target = (H_in, W_in)``."""
    values = smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap)
    th, tw = int(target[0]), int(target[1])
    if th < values.shape[0] or tw < values.shape[1]:
        raise ValueError(f"target {(th, tw)} is smaller than the map {values.shape}")
    return bilinear_resize(values, th, tw).astype(np.float32)


def _check_class(num_classes: int, class_index: int) -> None:
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class_index {class_index} out of range for {num_classes} classes")


def _weighted_relu_map(acts: np.ndarray, weights: np.ndarray) -> np.ndarray:
    raw = np.tensordot(weights.astype(np.float64), acts.astype(np.float64), axes=(0, 0))
    return np.maximum(raw, 0.0)


# -- Recipro-CAM -------------------------------------------------------------

def recipro_scores(split: SplitModel, x: np.ndarray, class_index: int, kernel: str = "dirac",
                   batch_size: Optional[int] = None) -> np.ndarray:
    """Class-``c`` softmax score for each spatially masked copy of the feature map.

    Returns the ``N = H * W`` score vector in row-major position order.
    """
    _check_class(split.num_classes, class_index)
    feature = split.features(x)
    k, h, w = feature.shape
    masks = _mask_stack(h, w, resolve_kernel(kernel))
    masked = feature[None] * masks[:, None]  # N, K, H, W
    n = len(masked)
    step = n if batch_size is None else max(1, int(batch_size))
    scores = np.empty(n, np.float32)
    for start in range(0, n, step):
        logits = split.head_logits_batch(masked[start:start + step])
        scores[start:start + step] = _softmax(logits)[:, class_index]
    return scores


def recipro_cam(split: SplitModel, x: np.ndarray, class_index: int, kernel: str = "dirac",
                batch_size: Optional[int] = None) -> SaliencyMap:
    h, w = split.feature_shape[1:]
    scores = recipro_scores(split, x, class_index, kernel, batch_size)
    return normalize_map(scores.reshape(h, w), method="recipro", class_index=class_index,
                         split_index=split.split_index)


# -- CAM / Grad-CAM ----------------------------------------------------------------

def cam(model: Model, x: np.ndarray, class_index: int) -> SaliencyMap:
    """Spatial class activation map ``sum_k w[c, k] * f_k(u, v)``.

    Only valid when the model ends in global average pooling followed by one
    linear layer (and optionally a softmax).
    """
    head_kinds = [layer.kind for layer in logit_layers(model.layers)][-2:]
    if head_kinds != ["global_avg_pool", "linear"]:
        raise ValueError(
            "CAM requires global pooling: the model must end in global_avg_pool -> linear "
            f"(-> softmax), found {head_kinds}"
        )
    _check_class(model.num_classes, class_index)
    gap_index = len(logit_layers(model.layers)) - 2
    weight_row = model.layers[gap_index + 1].weight[class_index]
    if gap_index == 0:
        instrument.tick("full")
        acts = np.asarray(x, dtype=np.float32)
    else:
        acts = split_model(model, gap_index).features(x)
    raw = np.tensordot(weight_row.astype(np.float64), acts.astype(np.float64), axes=(0, 0))
    return normalize_map(raw, method="cam", class_index=class_index, split_index=gap_index)


def grad_cam(split: SplitModel, x: np.ndarray, class_index: int) -> SaliencyMap:
    """ReLU of the feature map weighted by spatially averaged logit gradients."""
    _check_class(split.num_classes, class_index)
    acts = split.features(x)
    grad = backward_head(split.head, acts, class_index).values
    alpha = grad.astype(np.float64).mean(axis=(1, 2))
    return normalize_map(_weighted_relu_map(acts, alpha), method="grad", class_index=class_index,
                         split_index=split.split_index)


# -- gradient-free baselines ------------------------------------------------------

def score_cam(model: Model, split: SplitModel, x: np.ndarray, class_index: int,
              batch_size: int = 16) -> SaliencyMap:
    """Channel weights from the class logit of activation-masked inputs.

    Each channel is upsampled to the input size, min-max normalised and used to
    mask the input; the K resulting logits are softmax-ed into channel weights.
    Constant channels keep weight 0.
    """
    _check_class(split.num_classes, class_index)
    x = np.asarray(x, dtype=np.float32)
    acts, _ = split.full(x)

    k = acts.shape[0]
    up = bilinear_resize(acts, x.shape[1], x.shape[2])
    lo = up.min(axis=(1, 2), keepdims=True)
    hi = up.max(axis=(1, 2), keepdims=True)
    valid = (hi > lo).ravel()
    norm = np.where(hi > lo, (up - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)

    logits = np.empty(k)
    for start in range(0, k, batch_size):
        chunk = norm[start:start + batch_size]
        masked = (x[None].astype(np.float64) * chunk[:, None]).astype(np.float32)
        logits[start:start + batch_size] = model.logits_batch(masked)[:, class_index]

    weights = np.zeros(k)
    if valid.any():
        weights[valid] = _softmax(logits[valid])
    return normalize_map(_weighted_relu_map(acts, weights), method="score", class_index=class_index,
                         split_index=split.split_index)


def ablation_cam(split: SplitModel, x: np.ndarray, class_index: int) -> SaliencyMap:
    """Channel weights ``(y_c - y_c^(k)) / y_c`` from zeroing one channel at a time."""
    _check_class(split.num_classes, class_index)
    acts = split.features(x)
    k = acts.shape[0]
    batch = np.repeat(acts[None], k + 1, axis=0)
    idx = np.arange(k)
    batch[idx + 1, idx] = 0.0
    logits = split.head_logits_batch(batch)[:, class_index].astype(np.float64)
    base, ablated = logits[0], logits[1:]
    if abs(base) < ABLATION_EPS:
        slopes = np.zeros(k)
    else:
        slopes = (base - ablated) / base
    return normalize_map(_weighted_relu_map(acts, slopes), method="ablation", class_index=class_index,
                         split_index=split.split_index)


def fake_cam(input_shape: Sequence[int]) -> SaliencyMap:
    """All ones except a single zero at (0, 0); independent of model and class."""
    h, w = (int(d) for d in tuple(input_shape)[-2:])
    if h < 1 or w < 1:
        raise ValueError(f"need a positive map size, got {h}x{w}")
    values = np.ones((h, w), np.float32)
    values[0, 0] = 0.0
    return SaliencyMap(values, "fake", -1, -1, degenerate=(h * w == 1))


def explain(method: str, split: SplitModel, x: np.ndarray, class_index: int,
            kernel: str = "dirac") -> SaliencyMap:
    """Dispatch to a generator by name."""
    model = split.model
    if method == "recipro":
        return recipro_cam(split, x, class_index, kernel)
    if method == "cam":
        return cam(model, x, class_index)
    if method == "grad":
        return grad_cam(split, x, class_index)
    if method == "score":
        return score_cam(model, split, x, class_index)
    if method == "ablation":
        return ablation_cam(split, x, class_index)
    if method == "fake":
        _check_class(split.num_classes, class_index)
        return fake_cam(np.shape(x))
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
