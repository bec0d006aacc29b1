"""Saliency evaluation: Average Drop/Increase, Coherency, Complexity, ADCC,
Deletion/Insertion AUC and a dataset-level loop.

Conventions
-----------
* Class scores are softmax probabilities.
* The masked input is ``x * upsample(S)`` applied to every channel.
* Deletion replaces pixels with 0; insertion starts from the input blurred
  three times with an 11x11 box filter. Both move ``ceil(H*W/100)`` pixels per
  step in descending saliency order (ties broken by raster index).
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from rxai.cam import SaliencyMap, explain, upsample_map
from rxai.models import Model, SplitModel
from rxai.tensor import _softmax

REPORT_SCHEMA = "rxai-metrics/1"
REPORT_COLUMNS = ("image_id", "class_index", "avg_drop", "avg_inc", "deletion", "insertion",
                  "coherency", "complexity", "adcc")


def _pair(orig, masked):
    orig = np.asarray(orig, dtype=np.float64).ravel()
    masked = np.asarray(masked, dtype=np.float64).ravel()
    if orig.shape != masked.shape:
        raise ValueError(f"length mismatch: {orig.size} original vs {masked.size} masked scores")
    if orig.size == 0:
        raise ValueError("need at least one score")
    return orig, masked


def average_drop(orig_scores, masked_scores) -> float:
    """``100 * mean(max(0, y - o) / y)``, in percent."""
    y, o = _pair(orig_scores, masked_scores)
    if np.any(y <= 0):
        raise ValueError("original scores must be positive")
    return float(100.0 * np.mean(np.maximum(0.0, y - o) / y))


def average_increase(orig_scores, masked_scores) -> float:
    """Percentage of samples whose score rises when masked by their own map."""
    y, o = _pair(orig_scores, masked_scores)
    return float(100.0 * np.mean(o > y))


def _values(smap) -> np.ndarray:
    return np.asarray(smap.values if isinstance(smap, SaliencyMap) else smap, dtype=np.float64)


def complexity(smap) -> float:
    """Mean saliency, i.e. L1 norm over the number of pixels."""
    return float(_values(smap).mean())


def coherency(map_original, map_on_masked) -> float:
    """Absolute Pearson correlation of two maps; 0 when either is constant."""
    a, b = _values(map_original), _values(map_on_masked)
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return 0.0
    return float(min(1.0, abs(float(a @ b)) / denom))


def adcc(avg_drop: float, coherency: float, complexity: float) -> float:
    """Harmonic mean of coherency, ``1 - complexity`` and ``1 - avg_drop`` (fractions).

    Returns 0 when any term is non-positive.
    """
    terms = (coherency, 1.0 - complexity, 1.0 - avg_drop)
    if min(terms) <= 0.0:
        return 0.0
    return 3.0 / sum(1.0 / t for t in terms)


# -- deletion / insertion -------------------------------------------------------

def _class_probs(model: Model, xb: np.ndarray, class_index: int) -> np.ndarray:
    return _softmax(model.logits_batch(xb))[:, class_index].astype(np.float64)


def _pixel_order(model_input: np.ndarray, smap) -> np.ndarray:
    h, w = model_input.shape[1:]
    values = _values(smap)
    if values.shape != (h, w):
        values = upsample_map(values, (h, w)).astype(np.float64)
    return np.argsort(-values.ravel(), kind="stable")


def _schedule(n_pixels: int) -> np.ndarray:
    step = math.ceil(n_pixels / 100)
    counts = np.arange(0, n_pixels + step, step)
    counts[-1] = n_pixels
    return np.unique(counts)


def _curve(model, start, target, order, class_index, batch_size=64):
    """Scores as pixels of ``target`` replace those of ``start`` in ``order``."""
    c, h, w = start.shape
    counts = _schedule(h * w)
    # rank[p] = position of pixel p in the order; a pixel is swapped once count > rank
    rank = np.empty(h * w, np.intp)
    rank[order] = np.arange(h * w)
    scores = np.empty(len(counts))
    for lo in range(0, len(counts), batch_size):
        chunk = counts[lo:lo + batch_size]
        swap = (rank[None, :] < chunk[:, None]).reshape(-1, 1, h, w)
        xb = np.where(swap, target[None], start[None])
        scores[lo:lo + batch_size] = _class_probs(model, xb, class_index)
    return counts / (h * w), scores


def _auc(fractions, scores) -> float:
    return float(np.trapezoid(scores, fractions))


def deletion_curve(model: Model, x: np.ndarray, smap, class_index: int):
    x = np.asarray(x, dtype=np.float32)
    return _curve(model, x, np.zeros_like(x), _pixel_order(x, smap), class_index)


def deletion_auc(model: Model, x: np.ndarray, smap, class_index: int) -> float:
    """Area under the class-probability curve as salient pixels are zeroed."""
    return _auc(*deletion_curve(model, x, smap, class_index))


def blur_baseline(x: np.ndarray) -> np.ndarray:
    """Input blurred by three passes of an 11x11 box filter (edge-replicated)."""
    out = np.asarray(x, dtype=np.float64)
    for _ in range(3):
        out = uniform_filter(out, size=(1, 11, 11), mode="nearest")
    return out.astype(np.float32)


def insertion_curve(model: Model, x: np.ndarray, smap, class_index: int):
    x = np.asarray(x, dtype=np.float32)
    return _curve(model, blur_baseline(x), x, _pixel_order(x, smap), class_index)


def insertion_auc(model: Model, x: np.ndarray, smap, class_index: int) -> float:
    """Area under the class-probability curve as salient pixels are revealed on a blurred start."""
    return _auc(*insertion_curve(model, x, smap, class_index))


# -- dataset evaluation ---------------------------------------------------------------

@dataclass
class ImageRecord:
    image_id: str
    class_index: int
    avg_drop: float        # percent
    increase: bool
    coherency: float
    complexity: float
    adcc: float
    deletion_auc: float
    insertion_auc: float
    orig_score: float
    masked_score: float

    def row(self) -> dict:
        return {
            "image_id": self.image_id,
            "class_index": self.class_index,
            "avg_drop": self.avg_drop,
            "avg_inc": 100.0 if self.increase else 0.0,
            "deletion": self.deletion_auc,
            "insertion": self.insertion_auc,
            "coherency": self.coherency,
            "complexity": self.complexity,
            "adcc": self.adcc,
        }


@dataclass
class MetricReport:
    method: str
    records: list
    failures: list = field(default_factory=list)  # (image_id, message)
    kernel: Optional[str] = None

    @property
    def aggregate(self) -> dict:
        """Means over images; ADCC recomputed from the mean components."""
        if not self.records:
            return {}
        rows = [r.row() for r in self.records]
        agg = {key: float(np.mean([row[key] for row in rows])) for key in REPORT_COLUMNS[2:8]}
        agg["adcc"] = adcc(agg["avg_drop"] / 100.0, agg["coherency"], agg["complexity"])
        return agg

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rec in self.records:
            row = rec.row()
            writer.writerow([row["image_id"], row["class_index"]] + [repr(float(row[k])) for k in REPORT_COLUMNS[2:]])
        agg = self.aggregate
        if agg:
            writer.writerow(["__mean__", ""] + [repr(agg[k]) for k in REPORT_COLUMNS[2:]])
        return buf.getvalue()

    def summary(self) -> str:
        agg = self.aggregate
        lines = [
            f"schema: {REPORT_SCHEMA}",
            f"method: {self.method}" + (f" (kernel {self.kernel})" if self.kernel else ""),
            f"images: {len(self.records)}",
            f"skipped: {len(self.failures)}",
        ]
        if agg:
            lines.append("Drop(%)  Inc(%)   Del      Ins      Coher    Compl    ADCC")
            lines.append("  ".join(f"{agg[k] if k in ('avg_drop', 'avg_inc') else 100 * agg[k]:7.2f}"
                                   for k in REPORT_COLUMNS[2:]))
            lines.append("(Del, Ins, Coher, Compl, ADCC shown x100)")
        for image_id, msg in self.failures:
            lines.append(f"skipped {image_id}: {msg}")
        return "\n".join(lines) + "\n"


def evaluate_image(model: Model, split: SplitModel, x: np.ndarray, class_index: int, method: str,
                   kernel: str = "dirac", image_id: str = "") -> ImageRecord:
    x = np.asarray(x, dtype=np.float32)
    smap = explain(method, split, x, class_index, kernel)
    mask = _values(smap)
    if mask.shape != x.shape[1:]:
        mask = upsample_map(mask, x.shape[1:]).astype(np.float64)
    masked_x = (x.astype(np.float64) * mask[None]).astype(np.float32)

    y, o = _class_probs(model, np.stack([x, masked_x]), class_index)
    smap_masked = explain(method, split, masked_x, class_index, kernel)
    drop = average_drop([y], [o])
    coh = coherency(smap, smap_masked)
    comp = complexity(smap)
    return ImageRecord(
        image_id=image_id,
        class_index=int(class_index),
        avg_drop=drop,
        increase=bool(o > y),
        coherency=coh,
        complexity=comp,
        adcc=adcc(drop / 100.0, coh, comp),
        deletion_auc=deletion_auc(model, x, smap, class_index),
        insertion_auc=insertion_auc(model, x, smap, class_index),
        orig_score=float(y),
        masked_score=float(o),
    )


def default_threads() -> int:
    env = os.environ.get("RXAI_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def evaluate_method(model: Model, split: SplitModel, dataset: Sequence, method: str, *,
                    kernel: str = "dirac", image_ids: Optional[Sequence[str]] = None,
                    threads: Optional[int] = None) -> MetricReport:
    """Evaluate ``method`` over ``(image_tensor, class_index)`` pairs.

    A failing image is recorded in ``report.failures`` and skipped. Records keep
    dataset order whatever the thread count.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    ids = list(image_ids) if image_ids is not None else [str(i) for i in range(len(dataset))]

    def run(i):
        x, c = dataset[i]
        try:
            return evaluate_image(model, split, x, c, method, kernel, ids[i])
        except Exception as exc:  # one bad image must not abort the run
            return (ids[i], f"{type(exc).__name__}: {exc}")

    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(len(dataset))))
    else:
        results = [run(i) for i in range(len(dataset))]
    records = [r for r in results if isinstance(r, ImageRecord)]
    failures = [r for r in results if not isinstance(r, ImageRecord)]
    return MetricReport(method, records, failures, kernel if method == "recipro" else None)
