"""Model containers, the on-disk weight format, reference presets and preprocessing.

On-disk layout
--------------
A model is a UTF-8 JSON manifest plus a binary weight blob. The blob starts with
the 8-byte magic ``RXAIW001`` followed by little-endian float32 values. Each
weighted layer in the manifest records ``{"offset": <byte offset into the blob>,
"shape": [...]}`` for its weight and bias, and ``total_floats`` records the
number of floats after the magic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from rxai import instrument
from rxai.imaging import bilinear_resize
from rxai.tensor import (
    LayerSpec,
    ShapeError,
    forward_batch,
    forward_chain,
    infer_shapes,
    logit_layers,
)

MAGIC = b"RXAIW001"
MANIFEST_FORMAT = "rxai-model/1"


class ModelFormatError(ValueError):
    """A manifest or weight blob that cannot be turned into a valid model."""


@dataclass(frozen=True, eq=False)
class Model:
    name: str
    layers: tuple
    input_shape: tuple
    class_names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
        forward_chain(self.layers, np.zeros(self.input_shape, np.float32))
        out = self.shapes[-1] if self.layers else self.input_shape
        if len(out) != 1:
            raise ShapeError(f"model {self.name!r} must end in a class vector, got {out}")
        if self.class_names is not None and len(self.class_names) != out[0]:
            raise ValueError(f"{len(self.class_names)} class names for {out[0]} outputs")

    @property
    def shapes(self) -> list:
        return infer_shapes(self.layers, self.input_shape)

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    @property
    def num_params(self) -> int:
        return sum(layer.num_params for layer in self.layers)

    def split_points(self) -> list:
        """Indices ``s`` where the tensor between layer s-1 and s is 3-D."""
        return [i + 1 for i, shape in enumerate(self.shapes[:-1]) if len(shape) == 3]

    def logits_batch(self, xb: np.ndarray) -> np.ndarray:
        """Pre-softmax class scores for a batch; counts one full pass per sample."""
        xb = np.asarray(xb, dtype=np.float32)
        instrument.tick("full", len(xb))
        return forward_batch(logit_layers(self.layers), xb)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.logits_batch(np.asarray(x, dtype=np.float32)[None])[0]


@dataclass(frozen=True, eq=False)
class SplitModel:
    """Feature extractor ``f`` (layers before the split) and head ``g`` (the rest)."""

    model: Model
    split_index: int
    feature_net: tuple = field(init=False)
    head: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "feature_net", self.model.layers[:self.split_index])
        object.__setattr__(self, "head", self.model.layers[self.split_index:])

    @property
    def feature_shape(self) -> tuple:
        return self.model.shapes[self.split_index - 1]

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    def features_batch(self, xb: np.ndarray) -> np.ndarray:
        """``f`` over a batch of images; one full pass per sample."""
        xb = np.asarray(xb, dtype=np.float32)
        instrument.tick("full", len(xb))
        return forward_batch(self.feature_net, xb)

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.features_batch(np.asarray(x, dtype=np.float32)[None])[0]

    def full(self, x: np.ndarray) -> tuple:
        """One full pass: returns ``(f(x), g(f(x)))`` with pre-softmax logits."""
        feature = self.features(x)
        logits = forward_batch(logit_layers(self.head), feature[None])[0]
        return feature, logits

    def head_logits_batch(self, fb: np.ndarray) -> np.ndarray:
        """``g`` (without a trailing softmax) over a batch of feature maps."""
        fb = np.asarray(fb, dtype=np.float32)
        instrument.tick("head", len(fb))
        return forward_batch(logit_layers(self.head), fb)


def split_model(model: Model, split_index: int) -> SplitModel:
    n = len(model.layers)
    valid = model.split_points()
    if not 0 < split_index < n:
        raise ValueError(f"split_index must be in (0, {n}); valid split points: {valid}")
    if split_index not in valid:
        shape = model.shapes[split_index - 1]
        raise ValueError(
            f"tensor after layer {split_index - 1} has shape {shape}, not K x H x W; "
            f"valid split points: {valid}"
        )
    return SplitModel(model, split_index)


def default_split(model: Model) -> int:
    """Deepest valid split point (the last convolutional block's output)."""
    points = model.split_points()
    if not points:
        raise ValueError(f"model {model.name!r} has no K x H x W tensor to split at")
    return points[-1]


# -- serialisation ------------------------------------------------------------

_HYPER = ("kernel_size", "stride", "padding", "in_channels", "out_channels")


def save_model(model: Model, manifest_path, blob_path=None) -> None:
    manifest_path = Path(manifest_path)
    blob_path = Path(blob_path) if blob_path else manifest_path.with_suffix(".bin")
    chunks, layers = [], []
    offset = len(MAGIC)
    for layer in model.layers:
        entry = {"kind": layer.kind}
        for key in _HYPER:
            value = getattr(layer, key)
            if value is not None:
                entry[key] = value
        for key in ("weight", "bias"):
            arr = getattr(layer, key)
            if arr is not None:
                entry[key] = {"offset": offset, "shape": list(arr.shape)}
                chunks.append(arr.astype("<f4").tobytes())
                offset += arr.size * 4
        layers.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT,
        "name": model.name,
        "input_shape": list(model.input_shape),
        "class_names": list(model.class_names) if model.class_names else None,
        "weights": blob_path.name if blob_path.parent == manifest_path.parent else str(blob_path),
        "total_floats": (offset - len(MAGIC)) // 4,
        "layers": layers,
    }
    blob_path.write_bytes(MAGIC + b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_model(manifest_path) -> Model:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"model manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ModelFormatError(f"{manifest_path}: unsupported format {manifest.get('format')!r}")

    blob_path = manifest_path.parent / manifest["weights"]
    if not blob_path.is_file():
        raise FileNotFoundError(f"weight blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{blob_path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    n_floats = (len(blob) - len(MAGIC)) // 4
    if (len(blob) - len(MAGIC)) % 4 or n_floats != manifest["total_floats"]:
        raise ModelFormatError(
            f"{blob_path}: weight count mismatch, manifest declares {manifest['total_floats']} "
            f"floats but blob holds {(len(blob) - len(MAGIC)) / 4:g}"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=len(MAGIC)).astype(np.float32)

    layers = []
    for i, entry in enumerate(manifest["layers"]):
        kwargs = {k: entry[k] for k in _HYPER if k in entry}
        for key in ("weight", "bias"):
            if key in entry:
                ref = entry[key]
                start = (ref["offset"] - len(MAGIC)) // 4
                count = int(np.prod(ref["shape"]))
                if start < 0 or start + count > n_floats:
                    raise ModelFormatError(f"layer {i} ({entry['kind']}): {key} lies outside the blob")
                kwargs[key] = values[start:start + count].reshape(ref["shape"])
        try:
            layers.append(LayerSpec(entry["kind"], **kwargs))
        except ValueError as exc:
            raise ModelFormatError(f"layer {i}: {exc}") from exc

    try:
        return Model(manifest["name"], layers, manifest["input_shape"], manifest.get("class_names"))
    except ShapeError as exc:
        raise ModelFormatError(f"{manifest_path}: shape inconsistency, {exc}") from exc


# -- reference presets ----------------------------------------------------------

PRESETS = ("tiny8", "mid16")


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _conv(rng, cin, cout, k=3, stride=1, padding=1):
    w = _he_uniform(rng, (cout, cin, k, k), cin * k * k)
    b = rng.uniform(-0.05, 0.05, size=cout).astype(np.float32)
    return LayerSpec.conv2d(w, b, stride=stride, padding=padding)


def _linear(rng, cin, cout):
    w = _he_uniform(rng, (cout, cin), cin)
    b = rng.uniform(-0.05, 0.05, size=cout).astype(np.float32)
    return LayerSpec.linear(w, b)


def make_reference_model(seed: int, preset: str, *, feature_channels: Optional[int] = None) -> Model:
    """Small randomly initialised CNNs standing in for pretrained backbones.

    Weights come from ``numpy.random.default_rng(seed)`` (PCG64), drawn layer by
    layer, weight before bias: He-uniform weights, U(-0.05, 0.05) biases.

    ``tiny8``: 3x32x32 input, features 16x4x4 after layer 5, head GAP -> linear.
    ``mid16``: 3x64x64 input, features Kx8x8 after layer 10 (K=64 unless
    ``feature_channels`` overrides it), head GAP -> linear -> relu -> linear -> softmax.
    """
    rng = np.random.default_rng(seed)
    relu, pool = LayerSpec.relu(), LayerSpec.maxpool2d(2)
    classes = tuple(f"class{i}" for i in range(10))
    if preset == "tiny8":
        if feature_channels is not None:
            raise ValueError("feature_channels only applies to mid16")
        layers = [
            _conv(rng, 3, 8, stride=2), relu, pool,
            _conv(rng, 8, 16), relu, pool,
            LayerSpec.global_avg_pool(), _linear(rng, 16, 10),
        ]
        return Model("tiny8", layers, (3, 32, 32), classes)
    if preset == "mid16":
        k = 64 if feature_channels is None else int(feature_channels)
        layers = [
            _conv(rng, 3, 16), relu, pool,
            _conv(rng, 16, 32), relu, pool,
            _conv(rng, 32, 64), relu, pool,
            _conv(rng, 64, k), relu,
            LayerSpec.global_avg_pool(), _linear(rng, k, 32), relu, _linear(rng, 32, 10),
            LayerSpec.softmax(),
        ]
        name = "mid16" if feature_channels is None else f"mid16-k{k}"
        return Model(name, layers, (3, 64, 64), classes)
    raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")


# -- preprocessing ---------------------------------------------------------------

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class PreprocessConfig:
    resize_to: int = 256
    crop_to: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD

    def __post_init__(self):
        if not 1 <= self.crop_to <= self.resize_to:
            raise ValueError(f"need 1 <= crop_to <= resize_to, got {self.crop_to}, {self.resize_to}")
        if len(self.mean) != 3 or len(self.std) != 3 or min(self.std) <= 0:
            raise ValueError("mean/std need three entries and std must be positive")

    @classmethod
    def for_input(cls, size: int) -> "PreprocessConfig":
        """Keep the 256:224 resize-to-crop ratio for a model with ``size`` x ``size`` input."""
        return cls(resize_to=max(size, round(size * 256 / 224)), crop_to=size)


def preprocess_image(image: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """``H x W x 3`` uint8 raster -> normalised ``3 x crop x crop`` float32 tensor.

    The shorter side is resized to ``resize_to`` (aspect preserved, half-pixel
    bilinear), then the centre ``crop_to`` square is cut out.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 RGB raster, got shape {image.shape}")
    h, w = image.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("image must be at least 1x1")
    scale = cfg.resize_to / min(h, w)
    new_h = cfg.resize_to if h <= w else max(cfg.resize_to, round(h * scale))
    new_w = cfg.resize_to if w <= h else max(cfg.resize_to, round(w * scale))

    chw = image.transpose(2, 0, 1).astype(np.float64) / 255.0
    chw = bilinear_resize(chw, new_h, new_w)
    top = (new_h - cfg.crop_to) // 2
    left = (new_w - cfg.crop_to) // 2
    chw = chw[:, top:top + cfg.crop_to, left:left + cfg.crop_to]
    mean = np.asarray(cfg.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(cfg.std, dtype=np.float64)[:, None, None]
    return ((chw - mean) / std).astype(np.float32)


def denormalize(x: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Inverse of the normalisation step: tensor -> ``H x W x 3`` uint8 for display."""
    mean = np.asarray(cfg.mean)[:, None, None]
    std = np.asarray(cfg.std)[:, None, None]
    rgb = np.clip(np.asarray(x, dtype=np.float64) * std + mean, 0.0, 1.0)
    return np.round(rgb * 255).astype(np.uint8).transpose(1, 2, 0)
