"""Compare the Dirac and 3x3 Gaussian mask kernels on the tiny8 fixture scenes.

    python scripts/kernel_comparison.py

Prints aggregate metrics per kernel and the per-image ADCC difference.
"""
import sys
from pathlib import Path

import numpy as np

from rxai import imaging
from rxai.metrics import evaluate_method
from rxai.models import PreprocessConfig, load_model, preprocess_image, split_model

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def main():
    model = load_model(FIXTURES / "tiny8.json")
    split = split_model(model, 6)
    cfg = PreprocessConfig.for_input(32)
    paths = sorted((FIXTURES / "images").glob("*.ppm"))
    dataset = []
    for path in paths:
        x = preprocess_image(imaging.load_rgb(path), cfg)
        dataset.append((x, int(np.argmax(model.logits(x)))))
    ids = [p.name for p in paths]

    reports = {k: evaluate_method(model, split, dataset, "recipro", kernel=k, image_ids=ids)
               for k in ("dirac", "gaussian3x3")}
    for kernel, report in reports.items():
        print(report.summary())

    print(f"{'image':<16} {'dirac':>8} {'gauss':>8} {'diff':>8}")
    for a, b in zip(reports["dirac"].records, reports["gaussian3x3"].records):
        print(f"{a.image_id:<16} {a.adcc:>8.4f} {b.adcc:>8.4f} {a.adcc - b.adcc:>+8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
