"""Regenerate the frozen test fixtures under tests/fixtures/.

    python scripts/make_fixtures.py

Writes the tiny8 (seed 42) manifest and weight blob, 20 synthetic 40x40 PPM
scenes and a labels file whose labels are tiny8's predicted classes.
"""
from pathlib import Path

import numpy as np

from rxai import imaging
from rxai.models import PreprocessConfig, make_reference_model, preprocess_image, save_model
from rxai.synthetic import synthetic_scene

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
N_IMAGES = 20


def main():
    ROOT.mkdir(parents=True, exist_ok=True)
    model = make_reference_model(42, "tiny8")
    save_model(model, ROOT / "tiny8.json")

    img_dir = ROOT / "images"
    img_dir.mkdir(exist_ok=True)
    cfg = PreprocessConfig.for_input(32)
    lines = []
    for seed in range(N_IMAGES):
        name = f"scene_{seed:02d}.ppm"
        img = synthetic_scene(seed)
        imaging.save_rgb(img_dir / name, img)
        pred = int(np.argmax(model.logits(preprocess_image(img, cfg))))
        lines.append(f"{name},{pred}")
    (ROOT / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote fixtures to {ROOT}")


if __name__ == "__main__":
    main()
