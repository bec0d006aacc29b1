from pathlib import Path

import numpy as np
import pytest

from rxai import imaging
from rxai.models import PreprocessConfig, load_model, make_reference_model, preprocess_image, split_model

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"



@pytest.fixture(scope="session")
def tiny8():
    return load_model(FIXTURES / "tiny8.json")


@pytest.fixture(scope="session")
def tiny8_split(tiny8):
    return split_model(tiny8, 6)


@pytest.fixture(scope="session")
def mid16():
    return make_reference_model(42, "mid16")


@pytest.fixture(scope="session")
def mid16_split(mid16):
    return split_model(mid16, 11)


@pytest.fixture(scope="session")
def fixture_images(tiny8):
    """Preprocessed tiny8 fixture scenes with their predicted class, in file order."""
    cfg = PreprocessConfig.for_input(32)
    out = []
    for path in sorted((FIXTURES / "images").glob("*.ppm")):
        x = preprocess_image(imaging.load_rgb(path), cfg)
        out.append((x, int(np.argmax(tiny8.logits(x)))))
    return out
