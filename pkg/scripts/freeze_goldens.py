"""Recompute the frozen golden values in tests/golden/.

    python scripts/freeze_goldens.py

Only rerun after a deliberate numerical change; the tests cross-check these
values against loop oracles and finite differences, so regenerate and rerun
the suite together.
"""
import hashlib
import json
import tempfile
from pathlib import Path

import numpy as np

from rxai.cli import main as cli_main
from rxai.cam import ablation_cam, grad_cam, recipro_cam, score_cam
from rxai.models import load_model, split_model

ROOT = Path(__file__).resolve().parents[1] / "tests"


def main():
    model = load_model(ROOT / "fixtures" / "tiny8.json")
    split = split_model(model, 6)
    x = np.random.default_rng(7).standard_normal((3, 32, 32)).astype(np.float32)
    logits = model.logits(x)
    c = int(np.argmax(logits))
    golden = {
        "input": "numpy.random.default_rng(7).standard_normal((3, 32, 32)) as float32",
        "logits": [float(v) for v in logits],
        "class_index": c,
        "maps": {
            "recipro": recipro_cam(split, x, c).values.tolist(),
            "grad": grad_cam(split, x, c).values.tolist(),
            "score": score_cam(model, split, x, c).values.tolist(),
            "ablation": ablation_cam(split, x, c).values.tolist(),
        },
    }
    out = ROOT / "golden"
    out.mkdir(exist_ok=True)
    (out / "tiny8_seed42.json").write_text(json.dumps(golden, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out / 'tiny8_seed42.json'}")

    # sha256 of each artifact written by `rxai explain` on the first fixture scene
    hashes = {}
    with tempfile.TemporaryDirectory() as tmp:
        for method in ("recipro", "grad"):
            cli_main(["explain", "--model", str(ROOT / "fixtures" / "tiny8.json"), "--method", method,
                      "--image", str(ROOT / "fixtures" / "images" / "scene_00.ppm"), "--out", tmp,
                      "--seed", "0"])
        for path in sorted(Path(tmp).iterdir()):
            hashes[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    (out / "explain_hashes.json").write_text(json.dumps(hashes, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {out / 'explain_hashes.json'}")


if __name__ == "__main__":
    main()
