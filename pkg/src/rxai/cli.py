"""Command-line entry point: ``rxai {explain,eval,bench,inspect}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from rxai import bench, imaging
from rxai.cam import METHODS, explain, resolve_kernel, upsample_map
from rxai.metrics import evaluate_method, default_threads
from rxai.models import (
    PRESETS,
    Model,
    PreprocessConfig,
    default_split,
    denormalize,
    load_model,
    make_reference_model,
    preprocess_image,
    split_model,
)
from rxai.tensor import _softmax

IMAGE_SUFFIXES = (".ppm", ".png")


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    model: str
    split: Optional[int] = None
    methods: tuple = ("recipro",)
    kernel: Optional[str] = None
    class_index: str = "argmax"
    inputs: tuple = ()
    out: Optional[Path] = None
    seed: int = 0
    image_format: str = "ppm"
    labels: Optional[Path] = None
    n: int = 100
    warmup: int = bench.DEFAULT_WARMUP
    lenient: bool = False

    def validate(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise CliError(f"unknown method {m!r}; valid methods: {', '.join(METHODS)}")
        if self.kernel is not None:
            if set(self.methods) != {"recipro"}:
                raise CliError("--kernel only applies to --method recipro")
            resolve_kernel(self.kernel)
        if self.class_index != "argmax":
            try:
                int(self.class_index)
            except ValueError:
                raise CliError(f"--class must be an integer or 'argmax', got {self.class_index!r}") from None
        if self.command == "bench" and self.n < 1:
            raise CliError("--n must be at least 1")
        if self.warmup < 0:
            raise CliError("--warmup must be >= 0")


def resolve_model(spec: str, seed: int) -> Model:
    """A manifest path, or the name of a reference preset built with ``seed``."""
    path = Path(spec)
    if spec in PRESETS and not path.exists():
        return make_reference_model(seed, spec)
    return load_model(path)


def _split(model: Model, index: Optional[int]):
    return split_model(model, default_split(model) if index is None else index)


def _preprocess_cfg(model: Model) -> PreprocessConfig:
    c, h, w = model.input_shape
    if c != 3 or h != w:
        raise CliError(f"image commands need a square 3-channel model input, got {model.input_shape}")
    return PreprocessConfig.for_input(h)


# -- explain ------------------------------------------------------------------------

def cmd_explain(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model, cfg.seed)
    split = _split(model, cfg.split)
    pcfg = _preprocess_cfg(model)
    image_path = Path(cfg.inputs[0])
    x = preprocess_image(imaging.load_rgb(image_path), pcfg)

    probs = _softmax(model.logits(x))
    predicted = int(np.argmax(probs))
    class_index = predicted if cfg.class_index == "argmax" else int(cfg.class_index)
    method = cfg.methods[0]
    kernel = resolve_kernel(cfg.kernel or "dirac")
    smap = explain(method, split, x, class_index, kernel)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if cfg.image_format == "ppm" else "png"
    stem = f"{image_path.stem}_{method}"
    raw_path = out / f"{stem}_saliency.{ext}"
    overlay_path = out / f"{stem}_overlay.{cfg.image_format}"
    meta_path = out / f"{stem}.json"

    imaging.save_gray(raw_path, smap.values)
    up = upsample_map(smap, x.shape[1:])
    imaging.save_rgb(overlay_path, imaging.overlay(denormalize(x, pcfg), up, alpha=0.5))
    names = model.class_names
    meta = {
        "model": model.name,
        "method": method,
        "kernel": kernel if method == "recipro" else None,
        "split_index": split.split_index,
        "class_index": class_index,
        "class_name": names[class_index] if names else None,
        "predicted_class": predicted,
        "predicted_name": names[predicted] if names else None,
        "score": float(probs[class_index]),
        "predicted_score": float(probs[predicted]),
        "map_shape": list(smap.shape),
        "degenerate": smap.degenerate,
        "seed": cfg.seed,
        "colormap": "rxai-blue-red-256",
        "alpha": 0.5,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for p in (raw_path, overlay_path, meta_path):
        print(p)
    return 0


# -- eval --------------------------------------------------------------------------------

def read_labels(path: Path) -> dict:
    """``filename,class_index`` per line; blank lines and ``#`` comments ignored."""
    labels = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            name, cls = (part.strip() for part in line.rsplit(",", 1))
            labels[name] = int(cls)
        except ValueError:
            raise CliError(f"{path}:{lineno}: expected 'filename,class_index', got {line!r}") from None
    return labels


def cmd_eval(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model, cfg.seed)
    split = _split(model, cfg.split)
    pcfg = _preprocess_cfg(model)
    data_dir = Path(cfg.inputs[0])
    if not data_dir.is_dir():
        raise CliError(f"data directory not found: {data_dir}")
    files = sorted(p for p in data_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise CliError(f"no .ppm/.png images in {data_dir}")
    labels = read_labels(cfg.labels) if cfg.labels else {}

    dataset, ids, skipped = [], [], []
    for path in files:
        if path.name not in labels:
            skipped.append((path.name, "no label"))
            continue
        try:
            dataset.append((preprocess_image(imaging.load_rgb(path), pcfg), labels[path.name]))
            ids.append(path.name)
        except (OSError, ValueError) as exc:
            skipped.append((path.name, f"{type(exc).__name__}: {exc}"))
    if not dataset:
        raise CliError(f"no labelled, loadable images in {data_dir}")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    kernel = resolve_kernel(cfg.kernel or "dirac")
    any_skips = False
    for method in cfg.methods:
        report = evaluate_method(model, split, dataset, method, kernel=kernel, image_ids=ids,
                                 threads=default_threads())
        report.failures = skipped + report.failures
        any_skips |= bool(report.failures)
        (out / f"{method}_report.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / f"{method}_summary.txt").write_text(report.summary(), encoding="utf-8")
        print(report.summary(), end="")
    if any_skips and not cfg.lenient:
        print("error: some images were skipped (use --lenient to accept)", file=sys.stderr)
        return 1
    return 0


# -- bench ---------------------------------------------------------------------------------

def cmd_bench(cfg: RunConfig) -> int:
    model = resolve_model(cfg.model, cfg.seed)
    split = _split(model, cfg.split)
    rng = np.random.default_rng(cfg.seed)
    inputs = rng.standard_normal((cfg.n,) + model.input_shape).astype(np.float32)
    kernel = resolve_kernel(cfg.kernel or "dirac")
    profiles = [bench.time_method(m, model, split, inputs, cfg.warmup, kernel) for m in cfg.methods]
    report = bench.emit_bench_report(profiles)
    text = f"model {model.name}, split {split.split_index}, {cfg.n} inputs, warmup {cfg.warmup}\n" + report.text()
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.txt").write_text(text, encoding="utf-8")
        (out / "bench.csv").write_text(report.csv(), encoding="utf-8")
    print(text, end="")
    return 0


# -- inspect -------------------------------------------------------------------------------

def inspect_table(model: Model) -> str:
    points = set(model.split_points())
    lines = [f"model {model.name}: input {model.input_shape}, {model.num_classes} classes",
             f"{'idx':>3}  {'kind':<16} {'output':<16} {'params':>8}  split"]
    for i, (layer, shape) in enumerate(zip(model.layers, model.shapes)):
        mark = f"<- {i + 1}" if (i + 1) in points else ""
        lines.append(f"{i:>3}  {layer.kind:<16} {'x'.join(map(str, shape)):<16} {layer.num_params:>8}  {mark}")
    lines.append(f"total params: {model.num_params}")
    lines.append(f"valid split points: {sorted(points)}")
    return "\n".join(lines) + "\n"


def cmd_inspect(cfg: RunConfig) -> int:
    print(inspect_table(resolve_model(cfg.model, cfg.seed)), end="")
    return 0


# -- argument parsing -----------------------------------------------------------------------

def _methods(text: str) -> tuple:
    return tuple(m.strip() for m in text.split(",") if m.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rxai", description="CNN saliency maps and their evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, split=True):
        p.add_argument("--model", required=True, help="manifest path or preset name (tiny8, mid16)")
        if split:
            p.add_argument("--split", type=int, default=None, help="split layer index (default: deepest valid)")
        p.add_argument("--seed", type=int, default=0, help="seed for presets and synthetic inputs")

    p = sub.add_parser("explain", help="write a saliency map, overlay and sidecar for one image")
    common(p)
    p.add_argument("--method", default="recipro", choices=METHODS)
    p.add_argument("--kernel", default=None, help="recipro mask kernel: dirac | gauss3")
    p.add_argument("--class", dest="class_index", default="argmax")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", dest="image_format", default="ppm", choices=("ppm", "png"))

    p = sub.add_parser("eval", help="run the metric suite over a directory of images")
    common(p)
    p.add_argument("--methods", type=_methods, default=("recipro",))
    p.add_argument("--kernel", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true", help="exit 0 even if images were skipped")

    p = sub.add_parser("bench", help="time saliency methods single-threaded")
    common(p)
    p.add_argument("--methods", type=_methods, default=("recipro", "grad", "score"))
    p.add_argument("--kernel", default=None)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP)
    p.add_argument("--out", default=None)

    p = sub.add_parser("inspect", help="print layers, shapes, parameters and split points")
    common(p, split=False)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cmd = args.command
    cfg = RunConfig(command=cmd, model=args.model, seed=args.seed)
    cfg.split = getattr(args, "split", None)
    if cmd == "explain":
        cfg.methods = (args.method,)
        cfg.inputs = (args.image,)
        cfg.class_index = args.class_index
        cfg.image_format = args.image_format
    elif cmd == "eval":
        cfg.methods = args.methods
        cfg.inputs = (args.data,)
        cfg.labels = Path(args.labels)
        cfg.lenient = args.lenient
    elif cmd == "bench":
        cfg.methods = args.methods
        cfg.n = args.n
        cfg.warmup = args.warmup
    cfg.kernel = getattr(args, "kernel", None)
    cfg.out = getattr(args, "out", None)
    cfg.validate()
    return cfg


COMMANDS = {"explain": cmd_explain, "eval": cmd_eval, "bench": cmd_bench, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
