"""Minimal CNN inference core.

Tensors are plain ``numpy.float32`` arrays in channel-major layout (``K x H x W``
for feature maps, ``C x H x W`` for images). Every layer computes in float64
internally and rounds its output back to float32, so results are independent
of the batch a sample happens to be evaluated in.

Gradients are only supported through a *head* (the layers after a split point)
and only with respect to the head's input feature map; this is all Grad-CAM
needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rxai import instrument

LAYER_KINDS = (
    "conv2d",
    "relu",
    "maxpool2d",
    "avgpool2d",
    "global_avg_pool",
    "linear",
    "softmax",
    "flatten",
)


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    weight: Optional[np.ndarray] = field(default=None, repr=False)
    bias: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(
                f"{self.kind}: need kernel_size >= 1, stride >= 1, padding >= 0 "
                f"(got {self.kernel_size}, {self.stride}, {self.padding})"
            )
        if self.kind in ("conv2d", "linear"):
            if self.weight is None:
                raise ValueError(f"{self.kind} requires a weight tensor")
            w = np.ascontiguousarray(self.weight, dtype=np.float32)
            object.__setattr__(self, "weight", w)
            if self.kind == "conv2d":
                expected = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
            else:
                expected = (self.out_channels, self.in_channels)
            if w.shape != expected:
                raise ValueError(f"{self.kind} weight shape {w.shape} != declared {expected}")
            b = np.zeros(self.out_channels, np.float32) if self.bias is None else self.bias
            b = np.ascontiguousarray(b, dtype=np.float32)
            if b.shape != (self.out_channels,):
                raise ValueError(f"{self.kind} bias shape {b.shape} != ({self.out_channels},)")
            object.__setattr__(self, "bias", b)
            w.flags.writeable = False
            b.flags.writeable = False
        elif self.weight is not None or self.bias is not None:
            raise ValueError(f"{self.kind} takes no weights")

    # -- constructors -------------------------------------------------------

    @classmethod
    def conv2d(cls, weight, bias=None, stride=1, padding=0):
        weight = np.asarray(weight, dtype=np.float32)
        out_c, in_c, kh, kw = weight.shape
        if kh != kw:
            raise ValueError("only square kernels are supported")
        return cls("conv2d", kernel_size=kh, stride=stride, padding=padding,
                   in_channels=in_c, out_channels=out_c, weight=weight, bias=bias)

    @classmethod
    def linear(cls, weight, bias=None):
        weight = np.asarray(weight, dtype=np.float32)
        out_f, in_f = weight.shape
        return cls("linear", in_channels=in_f, out_channels=out_f, weight=weight, bias=bias)

    @classmethod
    def maxpool2d(cls, kernel_size, stride=None, padding=0):
        return cls("maxpool2d", kernel_size=kernel_size, stride=stride or kernel_size, padding=padding)

    @classmethod
    def avgpool2d(cls, kernel_size, stride=None, padding=0):
        return cls("avgpool2d", kernel_size=kernel_size, stride=stride or kernel_size, padding=padding)

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def global_avg_pool(cls):
        return cls("global_avg_pool")

    @classmethod
    def softmax(cls):
        return cls("softmax")

    @classmethod
    def flatten(cls):
        return cls("flatten")

    @property
    def num_params(self) -> int:
        if self.weight is None:
            return 0
        return int(self.weight.size + self.bias.size)


@dataclass(frozen=True, eq=False)
class Gradient:
    with_respect_to: str
    values: np.ndarray


# -- shape arithmetic ---------------------------------------------------------

def _window_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def output_shape(layer: LayerSpec, in_shape: Sequence[int], index: Optional[int] = None) -> tuple:
    """Shape of ``layer``'s output for a single (unbatched) input of ``in_shape``."""
    in_shape = tuple(int(d) for d in in_shape)
    where = f"layer {index} ({layer.kind})" if index is not None else f"layer ({layer.kind})"

    def fail(expected):
        raise ShapeError(f"{where}: expected input {expected}, got {in_shape}")

    kind = layer.kind
    if kind == "relu":
        return in_shape
    if kind == "softmax":
        if len(in_shape) != 1:
            fail("(classes,)")
        return in_shape
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    if kind == "global_avg_pool":
        if len(in_shape) != 3:
            fail("(K, H, W)")
        return (in_shape[0],)
    if kind == "linear":
        if in_shape != (layer.in_channels,):
            fail(f"({layer.in_channels},)")
        return (layer.out_channels,)
    # windowed layers
    if len(in_shape) != 3:
        fail("(C, H, W)")
    c, h, w = in_shape
    if kind == "conv2d" and c != layer.in_channels:
        fail(f"({layer.in_channels}, H, W)")
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    ho, wo = _window_out(h, k, s, p), _window_out(w, k, s, p)
    if ho < 1 or wo < 1:
        fail(f"(C, H, W) with H, W >= {k - 2 * p}")
    return (layer.out_channels if kind == "conv2d" else c, ho, wo)


def infer_shapes(layers: Sequence[LayerSpec], in_shape: Sequence[int]) -> list:
    """Output shape after every layer; raises ShapeError naming the first bad layer."""
    shapes = []
    shape = tuple(in_shape)
    for i, layer in enumerate(layers):
        shape = output_shape(layer, shape, i)
        shapes.append(shape)
    return shapes


# -- batched kernels (leading axis is the batch) -----------------------------

def _windows(x, k, s, p, pad_value=0.0):
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=pad_value)
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::s, ::s]  # B, C, Ho, Wo, k, k


def _conv2d(layer, x):
    cols = _windows(x.astype(np.float64), layer.kernel_size, layer.stride, layer.padding)
    b, c, ho, wo, k, _ = cols.shape
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    w = layer.weight.astype(np.float64).reshape(layer.out_channels, -1)
    out = cols @ w.T + layer.bias.astype(np.float64)
    return out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2)


def _pool(layer, x, op):
    k, st, p = layer.kernel_size, layer.stride, layer.padding
    b, c, h, w = x.shape
    if k == st and p == 0:
        # non-overlapping windows: a reshape is enough
        ho, wo = h // k, w // k
        tiles = x[:, :, :ho * k, :wo * k].reshape(b, c, ho, k, wo, k)
        if op == "max":
            return tiles.max(axis=(3, 5))
        return tiles.mean(axis=(3, 5), dtype=np.float64)
    pad_value = -np.inf if op == "max" else 0.0
    win = _windows(x.astype(np.float64), layer.kernel_size, layer.stride, layer.padding, pad_value)
    flat = win.reshape(win.shape[:4] + (-1,))
    return flat.max(axis=-1) if op == "max" else flat.mean(axis=-1)


def _softmax(z):
    z = z.astype(np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _run_layer(layer, x, dtype):
    kind = layer.kind
    if kind == "relu":
        out = np.maximum(x, 0)
    elif kind == "flatten":
        out = x.reshape(x.shape[0], -1)
    elif kind == "softmax":
        out = _softmax(x)
    elif kind == "global_avg_pool":
        out = x.mean(axis=(2, 3), dtype=np.float64)
    elif kind == "linear":
        out = x.astype(np.float64) @ layer.weight.astype(np.float64).T + layer.bias.astype(np.float64)
    elif kind == "conv2d":
        out = _conv2d(layer, x)
    elif kind == "maxpool2d":
        out = _pool(layer, x, "max")
    else:
        out = _pool(layer, x, "avg")
    return np.ascontiguousarray(out, dtype=dtype)


def forward_batch(layers: Sequence[LayerSpec], xb: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Run ``layers`` over a batch ``xb`` whose first axis indexes samples."""
    xb = np.asarray(xb, dtype=dtype)
    if xb.ndim < 1:
        raise ShapeError("batched input needs a leading batch axis")
    shape = xb.shape[1:]
    for i, layer in enumerate(layers):
        shape = output_shape(layer, shape, i)
        xb = _run_layer(layer, xb, dtype)
    return xb


def forward_layer(layer: LayerSpec, x: np.ndarray, index: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    output_shape(layer, x.shape, index)
    return _run_layer(layer, x[None], np.float32)[0]


def forward_chain(layers: Sequence[LayerSpec], x: np.ndarray) -> np.ndarray:
    """Left-to-right fold of :func:`forward_layer`; the empty chain is the identity."""
    x = np.asarray(x, dtype=np.float32)
    return forward_batch(layers, x[None])[0]


def logit_layers(head: Sequence[LayerSpec]) -> list:
    """Drop a trailing softmax so the head yields pre-softmax logits."""
    head = list(head)
    if head and head[-1].kind == "softmax":
        head = head[:-1]
    return head


def _check_class(out_shape, class_index):
    if len(out_shape) != 1:
        raise ShapeError(f"head must end in a class vector, got output shape {out_shape}")
    if not 0 <= class_index < out_shape[0]:
        raise ValueError(f"class_index {class_index} out of range for {out_shape[0]} classes")


# -- reverse mode through the head -------------------------------------------

def _backward_layer(layer, x, y, gy):
    """Gradient w.r.t. the layer input ``x`` (batched, float64) given output ``y``."""
    kind = layer.kind
    if kind == "relu":
        return gy * (x > 0)
    if kind == "flatten":
        return gy.reshape(x.shape)
    if kind == "softmax":
        return y * (gy - (gy * y).sum(axis=-1, keepdims=True))
    if kind == "global_avg_pool":
        h, w = x.shape[2:]
        return np.broadcast_to(gy[:, :, None, None] / (h * w), x.shape).copy()
    if kind == "linear":
        return gy @ layer.weight.astype(np.float64)

    k, s, p = layer.kernel_size, layer.stride, layer.padding
    b, c, h, w = x.shape
    ho, wo = gy.shape[2:]
    gx = np.zeros((b, c, h + 2 * p, w + 2 * p))
    if kind == "conv2d":
        wgt = layer.weight.astype(np.float64)
        # B, Ho, Wo, C, k, k
        gcols = np.tensordot(gy.transpose(0, 2, 3, 1), wgt, axes=([3], [0]))
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[..., i, j].transpose(0, 3, 1, 2)
    elif kind == "avgpool2d":
        share = gy / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += share
    else:
        # maxpool: route to the first maximal element in scan order (np.argmax semantics)
        win = _windows(x, k, s, p, -np.inf)
        arg = win.reshape(win.shape[:4] + (-1,)).argmax(axis=-1)
        di, dj = np.divmod(arg, k)
        bi, ci, oi, oj = np.indices(arg.shape)
        np.add.at(gx, (bi, ci, oi * s + di, oj * s + dj), gy)
    return gx[:, :, p:p + h, p:p + w]


def backward_head(head: Sequence[LayerSpec], feature: np.ndarray, class_index: int) -> Gradient:
    """d(logit[class_index]) / d(feature) for the pre-softmax logit of ``head``.

    A trailing softmax is ignored. Maxpool ties send the gradient to the first
    maximal element in row-major scan order.
    """
    layers = logit_layers(head)
    feature = np.asarray(feature, dtype=np.float32)
    shapes = infer_shapes(layers, feature.shape)
    _check_class(shapes[-1] if shapes else feature.shape, class_index)

    # tape holds float64 inputs/outputs; values are rounded through float32 as in forward
    tape = []
    x = feature[None]
    for layer in layers:
        y = _run_layer(layer, x, np.float32)
        tape.append((layer, x.astype(np.float64), y.astype(np.float64)))
        x = y
    g = np.zeros(x.shape)
    g[0, class_index] = 1.0
    for layer, xin, yout in reversed(tape):
        g = _backward_layer(layer, xin, yout, g)
    instrument.tick("backward")
    return Gradient("feature", np.ascontiguousarray(g[0], dtype=np.float32))


def finite_diff_grad(head: Sequence[LayerSpec], feature: np.ndarray, class_index: int,
                     epsilon: float = 1e-3) -> Gradient:
    """Central-difference oracle for :func:`backward_head`.

    Evaluated in float64 end to end so rounding does not swamp the difference
    quotient.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    layers = logit_layers(head)
    feature = np.asarray(feature, dtype=np.float64)
    shapes = infer_shapes(layers, feature.shape)
    _check_class(shapes[-1] if shapes else feature.shape, class_index)

    flat = feature.ravel()
    grad = np.empty(flat.size)
    for start in range(0, flat.size, 256):
        idx = np.arange(start, min(start + 256, flat.size))
        bump = np.zeros((idx.size, flat.size))
        bump[np.arange(idx.size), idx] = epsilon
        plus = forward_batch(layers, (flat + bump).reshape((-1,) + feature.shape), np.float64)
        minus = forward_batch(layers, (flat - bump).reshape((-1,) + feature.shape), np.float64)
        grad[idx] = (plus[:, class_index] - minus[:, class_index]) / (2 * epsilon)
    return Gradient("feature", grad.reshape(feature.shape))


def hadamard(feature: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Elementwise product of a ``K x H x W`` feature map with an ``H x W`` mask."""
    feature = np.asarray(feature, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if feature.ndim != 3 or mask.shape != feature.shape[1:]:
        raise ShapeError(f"mask shape {mask.shape} does not match feature spatial dims {feature.shape[1:]}")
    return feature * mask[None]


def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis, returned as float32."""
    return _softmax(np.asarray(z)).astype(np.float32)
