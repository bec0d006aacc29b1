"""Gradient-free saliency maps for small CNNs, with baselines, metrics and benchmarks."""

from rxai.cam import (
    SaliencyMap,
    ablation_cam,
    cam,
    explain,
    fake_cam,
    generate_spatial_masks,
    grad_cam,
    normalize_map,
    recipro_cam,
    score_cam,
    upsample_map,
)
from rxai.metrics import adcc, average_drop, average_increase, coherency, complexity, evaluate_method
from rxai.models import (
    Model,
    PreprocessConfig,
    SplitModel,
    load_model,
    make_reference_model,
    preprocess_image,
    save_model,
    split_model,
)

__version__ = "0.1.0"
