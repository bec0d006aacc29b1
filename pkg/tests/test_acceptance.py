"""Acceptance checks. Each test prints one PASS/FAIL line with the measured values."""
import time

import numpy as np
import pytest

import oracles
from conftest import FIXTURES
from helpers import max_relative_error, random_head
from rxai import bench
from rxai.cam import generate_spatial_masks, normalize_map, recipro_cam, recipro_scores
from rxai.cli import main as cli_main
from rxai.metrics import adcc, evaluate_method, deletion_auc, insertion_auc
from rxai.models import Model, make_reference_model, split_model
from rxai.tensor import LayerSpec, backward_head, finite_diff_grad


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return emit


def test_01_adcc_reference_rows(verdict):
    a = adcc(0.1569, 0.9668, 0.3290)
    b = adcc(0.2613, 0.9383, 0.2027)
    ok = abs(a - 0.8084) <= 1e-3 and abs(b - 0.8166) <= 1e-3
    verdict(1, "ADCC formula", ok, f"{a:.4f} (want 0.8084), {b:.4f} (want 0.8166), tol 0.001")


def test_02_recipro_matches_loop_oracle(verdict):
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(50):
        preset = "tiny8" if seed % 2 == 0 else "mid16"
        model = make_reference_model(seed, preset)
        split = split_model(model, 6 if preset == "tiny8" else 11)
        x = np.random.default_rng(1000 + seed).standard_normal(model.input_shape).astype(np.float32)
        c = seed % model.num_classes
        _, h, w = split.feature_shape
        masks = [m.values for m in generate_spatial_masks(h, w, "dirac")]
        if recipro_scores(split, x, c).tobytes() != oracles.recipro_scores_loop(split, x, c, masks).tobytes():
            mismatches += 1

    toy = Model("toy", [LayerSpec.relu(), LayerSpec.global_avg_pool(),
                        LayerSpec.linear(np.array([[1.0], [0.0]], np.float32))], (1, 2, 2))
    x = np.array([[[1, 0], [0, 0]]], np.float32)
    scores = recipro_scores(split_model(toy, 1), x, 0)
    smap = recipro_cam(split_model(toy, 1), x, 0).values
    hand_ok = (np.abs(scores - [0.5622, 0.5, 0.5, 0.5]).max() <= 1e-4
               and np.abs(smap - [[1, 0], [0, 0]]).max() <= 1e-4)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and hand_ok and elapsed < 10
    verdict(2, "Recipro batched vs loop", ok,
            f"{50 - mismatches}/50 bit-exact, hand example scores [{', '.join(f'{v:.4f}' for v in scores)}], {elapsed:.1f}s")


def test_03_gradients_match_finite_differences(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        head, feature, c = random_head(seed)
        worst = max(worst, max_relative_error(backward_head(head, feature, c).values,
                                              finite_diff_grad(head, feature, c).values))
    elapsed = time.perf_counter() - t0
    verdict(3, "backward vs finite differences", worst < 1e-4 and elapsed < 30,
            f"max relative error {worst:.2e} over 100 heads (limit 1e-4), {elapsed:.1f}s")


def test_04_normalisation_invariants(verdict):
    rng = np.random.default_rng(4)
    bad, degenerate = 0, 0
    for i in range(500):
        shape = tuple(int(v) for v in rng.integers(1, 9, size=2))
        kind = i % 5
        if kind == 0:
            raw = np.full(shape, rng.normal() * 10.0 ** rng.integers(-8, 8))
        elif kind == 1:
            raw = rng.normal(size=shape) * 10.0 ** rng.integers(-30, 300)
        elif kind == 2:
            raw = rng.integers(-2, 3, size=shape).astype(np.float64)
        else:
            raw = rng.random(shape)
        smap = normalize_map(raw)
        v = smap.values
        if not np.isfinite(v).all():
            bad += 1
        elif smap.degenerate:
            degenerate += 1
            bad += int(v.any())
        else:
            bad += int(v.min() != 0.0 or v.max() != 1.0)
    verdict(4, "normalisation invariants", bad == 0,
            f"{500 - bad}/500 maps valid ({degenerate} degenerate, all zero and flagged)")


def test_05_fake_cam_games_drop_not_adcc(verdict, tiny8, tiny8_split, fixture_images):
    agg = evaluate_method(tiny8, tiny8_split, fixture_images, "fake").aggregate
    ok = agg["avg_drop"] < 1.0 and agg["adcc"] < 0.05
    verdict(5, "Fake-CAM separability", ok,
            f"avg drop {agg['avg_drop']:.3f}% (< 1), ADCC {agg['adcc']:.4f} (< 0.05)")


def test_06_pass_counts(verdict, tiny8, tiny8_split, mid16, mid16_split):
    wrong = []
    for model, split in ((tiny8, tiny8_split), (mid16, mid16_split)):
        x = np.random.default_rng(6).standard_normal(model.input_shape).astype(np.float32)
        k, h, w = split.feature_shape
        contract = {"recipro": (1, h * w, 0), "score": (k + 1, 0, 0),
                    "ablation": (1, k + 1, 0), "grad": (1, 0, 1)}
        for method, want in contract.items():
            p = bench.count_cost(method, model, split, x)
            got = (p.full_forwards, p.head_forwards, p.backward_passes)
            if got != want:
                wrong.append(f"{model.name}/{method} {got} != {want}")
    verdict(6, "cost accounting", not wrong, "; ".join(wrong) or "8/8 method-preset pairs exact")


def test_07_timing_order_on_mid16(verdict, mid16, mid16_split):
    inputs = np.random.default_rng(7).standard_normal((100, 3, 64, 64)).astype(np.float32)
    ms = {m: bench.time_method(m, mid16, mid16_split, inputs, warmup=5).wall_ms_mean
          for m in ("recipro", "grad", "score")}
    score_ratio = ms["score"] / ms["recipro"]
    grad_ratio = max(ms["recipro"] / ms["grad"], ms["grad"] / ms["recipro"])
    ok = score_ratio >= 2 and grad_ratio <= 1.5
    verdict(7, "mid16 timing order", ok,
            f"recipro {ms['recipro']:.2f} ms, grad {ms['grad']:.2f} ms, score {ms['score']:.2f} ms; "
            f"score/recipro {score_ratio:.1f}x (>= 2), recipro vs grad {grad_ratio:.2f}x (<= 1.5)")


def test_08_recipro_beats_random_maps(verdict, tiny8, tiny8_split, fixture_images):
    del_wins = ins_wins = 0
    for seed, (x, c) in enumerate(fixture_images):
        smap = recipro_cam(tiny8_split, x, c)
        rand = np.random.default_rng(seed).random(smap.shape)  # same resolution as the map
        del_wins += deletion_auc(tiny8, x, smap, c) < deletion_auc(tiny8, x, rand, c)
        ins_wins += insertion_auc(tiny8, x, smap, c) > insertion_auc(tiny8, x, rand, c)
    n = len(fixture_images)
    ok = n == 20 and del_wins >= 0.8 * n and ins_wins >= 0.8 * n
    verdict(8, "deletion/insertion vs random", ok,
            f"lower deletion {del_wins}/{n}, higher insertion {ins_wins}/{n} (need >= 80%)")


def test_09_dirac_and_gaussian_kernels(verdict, tiny8, tiny8_split, fixture_images):
    reports = {k: evaluate_method(tiny8, tiny8_split, fixture_images, "recipro", kernel=k)
               for k in ("dirac", "gaussian3x3")}
    degenerate = sum(recipro_cam(tiny8_split, x, c, kernel=k).degenerate
                     for x, c in fixture_images for k in reports)
    diffs = [a.adcc - b.adcc for a, b in zip(reports["dirac"].records, reports["gaussian3x3"].records)]
    complete = all(len(r.records) == len(fixture_images) for r in reports.values())
    verdict(9, "Dirac vs Gaussian kernel", degenerate == 0 and complete,
            f"degenerate maps {degenerate}; ADCC dirac {reports['dirac'].aggregate['adcc']:.4f}, "
            f"gaussian {reports['gaussian3x3'].aggregate['adcc']:.4f}, per-image diff mean "
            f"{np.mean(diffs):+.4f} (min {min(diffs):+.4f}, max {max(diffs):+.4f})")


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_10_cli_artifacts_are_deterministic(verdict, tmp_path):
    model = str(FIXTURES / "tiny8.json")
    runs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        codes = [
            cli_main(["explain", "--model", model, "--image", str(FIXTURES / "images" / "scene_03.ppm"),
                      "--out", str(out / "explain"), "--seed", "5"]),
            cli_main(["explain", "--model", "mid16", "--method", "score", "--seed", "5",
                      "--image", str(FIXTURES / "images" / "scene_04.ppm"), "--out", str(out / "explain")]),
            cli_main(["eval", "--model", model, "--methods", "recipro,grad", "--seed", "5",
                      "--data", str(FIXTURES / "images"), "--labels", str(FIXTURES / "labels.csv"),
                      "--out", str(out / "eval")]),
        ]
        runs.append((codes, _snapshot(out)))
    (codes_a, files_a), (codes_b, files_b) = runs
    ok = codes_a == codes_b == [0, 0, 0] and files_a == files_b and len(files_a) == 10
    verdict(10, "end-to-end determinism", ok,
            f"{len(files_a)} artifacts, {sum(files_a[k] == files_b.get(k) for k in files_a)} byte-identical")
