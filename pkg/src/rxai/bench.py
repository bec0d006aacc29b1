"""Pass accounting and wall-clock timing of the saliency methods.

Timing runs single-threaded (BLAS pools are capped at one thread) and
sequentially. Times are CPU wall-clock in milliseconds.
"""
from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from rxai import instrument
from rxai.cam import METHODS, explain
from rxai.models import Model, SplitModel

DEFAULT_WARMUP = 5


@dataclass
class CostProfile:
    method: str
    full_forwards: int = 0
    head_forwards: int = 0
    backward_passes: int = 0
    wall_ms_mean: float = float("nan")
    wall_ms_p50: float = float("nan")
    wall_ms_p95: float = float("nan")
    images: int = 0


def expected_cost(method: str, split: SplitModel) -> tuple:
    """Analytic ``(full, head, backward)`` pass counts for one map."""
    k, h, w = split.feature_shape
    table = {
        "recipro": (1, h * w, 0),
        "cam": (1, 0, 0),
        "grad": (1, 0, 1),
        "score": (k + 1, 0, 0),
        "ablation": (1, k + 1, 0),
        "fake": (0, 0, 0),
    }
    if method not in table:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return table[method]


def _predicted_class(model: Model, x: np.ndarray) -> int:
    return int(np.argmax(model.logits(x)))


def count_cost(method: str, model: Model, split: SplitModel, x: np.ndarray,
               class_index: Optional[int] = None, kernel: str = "dirac") -> CostProfile:
    """Run ``method`` once under instrumentation and report the passes it made."""
    expected_cost(method, split)  # validates the name
    if class_index is None:
        class_index = _predicted_class(model, x)
    with instrument.count_passes() as counter:
        explain(method, split, x, class_index, kernel)
    return CostProfile(method, counter.full, counter.head, counter.backward, images=1)


def map_digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype=np.float32).tobytes()).hexdigest()


def time_method(method: str, model: Model, split: SplitModel, inputs: Sequence[np.ndarray],
                warmup: int = DEFAULT_WARMUP, kernel: str = "dirac") -> CostProfile:
    """Wall-clock statistics over one invocation per input.

    Each timed output is hashed and compared with an untimed reference run;
    a mismatch raises ``RuntimeError``.
    """
    inputs = [np.asarray(x, dtype=np.float32) for x in inputs]
    if not inputs:
        raise ValueError("need at least one input")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    classes = [_predicted_class(model, x) for x in inputs]
    profile = count_cost(method, model, split, inputs[0], classes[0], kernel)

    with threadpool_limits(limits=1):
        reference = [map_digest(explain(method, split, x, c, kernel).values)
                     for x, c in zip(inputs, classes)]
        for i in range(warmup):
            explain(method, split, inputs[i % len(inputs)], classes[i % len(inputs)], kernel)
        times = np.empty(len(inputs))
        digests = []
        for i, (x, c) in enumerate(zip(inputs, classes)):
            t0 = time.perf_counter()
            smap = explain(method, split, x, c, kernel)
            times[i] = (time.perf_counter() - t0) * 1000.0
            digests.append(map_digest(smap.values))
    if digests != reference:
        raise RuntimeError(f"{method}: saliency maps changed while timing")

    profile.wall_ms_mean = float(times.mean())
    profile.wall_ms_p50 = float(np.percentile(times, 50))
    profile.wall_ms_p95 = float(np.percentile(times, 95))
    profile.images = len(inputs)
    return profile


@dataclass
class BenchReport:
    profiles: list

    def rows(self) -> list:
        fastest = min(p.wall_ms_mean for p in self.profiles)
        rows = []
        for p in self.profiles:
            ratio = p.wall_ms_mean / fastest
            rows.append({
                "method": p.method,
                "time_ms": p.wall_ms_mean,
                "fps": 1000.0 / p.wall_ms_mean,
                "ratio": "-" if p.wall_ms_mean == fastest else f"{ratio:.2f}\u00d7",
                "p50_ms": p.wall_ms_p50,
                "p95_ms": p.wall_ms_p95,
                "full": p.full_forwards,
                "head": p.head_forwards,
                "backward": p.backward_passes,
                "images": p.images,
            })
        return rows

    def text(self) -> str:
        header = f"{'Method':<10} {'Time (ms)':>10} {'FPS':>9} {'Ratio':>9} {'p50':>9} {'p95':>9} {'full':>5} {'head':>5} {'bwd':>4}"
        lines = ["CPU, single-threaded", header, "-" * len(header)]
        for r in self.rows():
            lines.append(
                f"{r['method']:<10} {r['time_ms']:>10.2f} {r['fps']:>9.2f} {r['ratio']:>9} "
                f"{r['p50_ms']:>9.2f} {r['p95_ms']:>9.2f} {r['full']:>5} {r['head']:>5} {r['backward']:>4}"
            )
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        rows = self.rows()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()


def emit_bench_report(profiles: Sequence[CostProfile]) -> BenchReport:
    """Table with execution time, FPS (1000 / ms) and ratio to the fastest method."""
    profiles = list(profiles)
    if not profiles:
        raise ValueError("no profiles to report")
    return BenchReport(profiles)
