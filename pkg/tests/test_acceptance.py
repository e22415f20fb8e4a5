"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines as
they complete.  The ablation criterion trains 10 models (2 configs x 5 folds)
on the standard 100-case benchmark and dominates the runtime.
"""

import time
import warnings

import numpy as np
import pytest

import mipcam as mc
from mipcam import benchmark_config, compute_cam, dice, generate_dataset, refine_mask
from mipcam.localization import backproject
from mipcam.pipeline import TrainConfig, cross_validate, gradcheck
from mipcam.pipeline.data import LoadedCase

BENCHMARK_PHANTOM_SEED = 0
BENCHMARK_TRAIN_SEED = 7
BENCHMARK_EPOCHS = 18


def _verdict(number: int, name: str, ok: bool, detail: str) -> bool:
    print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


def _as_loaded(cases):
    return [LoadedCase(c.case_id, c.volume, c.truth.label, c.truth.center, c.truth.mask)
            for c in cases]


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    report = gradcheck(seed=0, instances=5, tolerance=1e-4, lam=1.0)
    elapsed = time.perf_counter() - start
    checked = [i for i in report.instances if not i.skipped_degenerate]
    per_kind = {kind: max(i.max_rel_error[kind] for i in checked)
                for kind in ("loss1", "loss2", "combined")}
    ok = (report.passed and len(checked) >= 5 and elapsed < 60.0
          and per_kind["loss2"] < 1e-4 and per_kind["combined"] < 1e-4)
    assert _verdict(
        1, "gradient correctness", ok,
        f"max rel error {report.max_rel_error:.2e} "
        f"(loss2 {per_kind['loss2']:.2e}, combined {per_kind['combined']:.2e}) "
        f"on {len(checked)} instances in {elapsed:.1f}s")


def test_criterion_2_activation_map_contract():
    rng = np.random.default_rng(202)
    checked = degenerate = 0
    peak_ok = True
    max_scale_diff = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(1000):
            channels = int(rng.integers(1, 9))
            h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            feats = rng.normal(size=(channels, h, w))
            weights = rng.normal(size=channels)
            raw = np.tensordot(weights, feats, axes=([0], [0]))
            cam = compute_cam(feats, weights)
            if (raw > 0).any():
                checked += 1
                peak_ok = peak_ok and float(cam.data.max()) == 1.0
                alpha = float(rng.uniform(1e-3, 1e3))
                scaled = compute_cam(feats, alpha * weights)
                max_scale_diff = max(max_scale_diff,
                                     float(np.abs(cam.data - scaled.data).max()))
            else:
                degenerate += 1
                peak_ok = peak_ok and cam.degenerate and not cam.data.any()
    ok = peak_ok and max_scale_diff <= 1e-6 and checked + degenerate == 1000
    assert _verdict(
        2, "activation map normalization contract", ok,
        f"{checked} positive instances peak==1.0 exactly, {degenerate} degenerate zeroed, "
        f"max scaling deviation {max_scale_diff:.2e} <= 1e-6")


def test_criterion_3_backprojection_oracle():
    rng = np.random.default_rng(303)
    exact = subset = 0
    for trial in range(200):
        density = rng.uniform(0.05, 0.95)
        cor = rng.uniform(size=(8, 8)) < density
        sag = rng.uniform(size=(8, 8)) < density
        out = backproject(cor, sag).data
        oracle = np.zeros((8, 8, 8), dtype=bool)
        for x in range(8):
            for y in range(8):
                for z in range(8):
                    oracle[x, y, z] = cor[x, z] and sag[y, z]
        if np.array_equal(out, oracle):
            exact += 1
        if np.all(out.max(axis=1) <= cor) and np.all(out.max(axis=0) <= sag):
            slice_ok = True
            for z in range(8):
                if cor[:, z].any() and sag[:, z].any():
                    slice_ok = slice_ok and np.array_equal(out[:, :, z].max(axis=1), cor[:, z])
                    slice_ok = slice_ok and np.array_equal(out[:, :, z].max(axis=0), sag[:, z])
            if slice_ok:
                subset += 1
    ok = exact == 200 and subset == 200
    assert _verdict(
        3, "back-projection conjunction oracle", ok,
        f"{exact}/200 exact matches, silhouette invariant {subset}/200")


def test_criterion_4_projection_oracle():
    rng = np.random.default_rng(404)
    exact = max_ok = 0
    for _ in range(100):
        shape = tuple(int(rng.integers(2, 9)) for _ in range(3))
        data = rng.uniform(0, 30, shape).astype(np.float32)
        vol = mc.PetVolume(data, spacing=(2.0, 2.0, 2.0))
        cor = mc.mip_project(vol, mc.View.CORONAL).data
        sag = mc.mip_project(vol, mc.View.SAGITTAL).data
        good = True
        for x in range(shape[0]):
            for z in range(shape[2]):
                good = good and cor[x, z] == max(data[x, y, z] for y in range(shape[1]))
        for y in range(shape[1]):
            for z in range(shape[2]):
                good = good and sag[y, z] == max(data[x, y, z] for x in range(shape[0]))
        exact += good
        max_ok += (float(cor.max()) == float(data.max()) == float(sag.max()))
    ok = exact == 100 and max_ok == 100
    assert _verdict(
        4, "MIP brute-force oracle", ok,
        f"{exact}/100 volumes exact, max preserved in {max_ok}/100")


@pytest.fixture(scope="module")
def benchmark_cases():
    cfg = benchmark_config(rng_seed=BENCHMARK_PHANTOM_SEED)
    return _as_loaded(generate_dataset(cfg, n_per_class=50))


def test_criterion_5_scaled_ablation(benchmark_cases):
    start = time.perf_counter()
    results = {}
    for lam in (1.0, 0.0):
        cfg = TrainConfig(epochs=BENCHMARK_EPOCHS, seed=BENCHMARK_TRAIN_SEED, lam=lam)
        results[lam] = cross_validate(benchmark_cases, cfg, k=5)
    elapsed = time.perf_counter() - start
    margin = results[1.0].dice_mean - results[0.0].dice_mean
    ok = (margin >= 0.05 and results[1.0].accuracy >= 0.95 and elapsed <= 30 * 60)
    assert _verdict(
        5, "ablation ordering on the standard benchmark", ok,
        f"dice(lambda=1) {results[1.0].dice_mean:.3f}+-{results[1.0].dice_std:.3f} vs "
        f"dice(lambda=0) {results[0.0].dice_mean:.3f}+-{results[0.0].dice_std:.3f} "
        f"(margin {margin:.3f} >= 0.05), accuracy {results[1.0].accuracy:.3f} >= 0.95, "
        f"runtime {elapsed / 60:.1f} min <= 30 min")


def test_criterion_6_reproducibility(tmp_path):
    cfg_phantom = benchmark_config(rng_seed=17)
    cfg_phantom = type(cfg_phantom).from_dict({**cfg_phantom.to_dict(), "shape": [64, 64, 96]})
    cases = _as_loaded(generate_dataset(cfg_phantom, n_per_class=10))
    cfg = TrainConfig(epochs=6, seed=23, lam=1.0, report_samples=0)
    byte_streams = []
    for run in ("a", "b"):
        out = tmp_path / run
        cross_validate(cases, cfg, k=5, out_dir=out)
        byte_streams.append((out / "records.jsonl").read_bytes())
    ok = byte_streams[0] == byte_streams[1] and len(byte_streams[0]) > 0
    assert _verdict(
        6, "byte-identical rerun", ok,
        f"records.jsonl identical across runs ({len(byte_streams[0])} bytes, 20 cases)")


def test_criterion_7_dice_and_refine_contracts():
    rng = np.random.default_rng(707)
    sym_ok = bounds_ok = identity_ok = True
    for _ in range(1000):
        shape = tuple(int(rng.integers(1, 7)) for _ in range(3))
        a = rng.uniform(size=shape) < rng.uniform(0, 1)
        b = rng.uniform(size=shape) < rng.uniform(0, 1)
        d = dice(a, b)
        bounds_ok = bounds_ok and 0.0 <= d <= 1.0
        sym_ok = sym_ok and d == dice(b, a)
        if a.any():
            identity_ok = identity_ok and dice(a, a) == 1.0
    empty = np.zeros((3, 3, 3), dtype=bool)
    degenerate_ok = dice(empty, empty) == 1.0 and dice(empty, ~empty) == 0.0

    subset_ok = True
    tested = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(200):
            shape = tuple(int(rng.integers(2, 8)) for _ in range(3))
            mask = rng.uniform(size=shape) < rng.uniform(0, 1)
            vol = mc.PetVolume(rng.uniform(0, 1, shape).astype(np.float32), (1.0, 1.0, 1.0))
            out = refine_mask(mask, vol, float(rng.uniform(0, 0.95)))
            subset_ok = subset_ok and not (out.data & ~mask).any()
            tested += 1
    ok = sym_ok and bounds_ok and identity_ok and degenerate_ok and subset_ok
    assert _verdict(
        7, "dice properties and refinement containment", ok,
        f"1000 mask pairs symmetric/bounded/identity, degenerate cases flagged, "
        f"refine output subset of input on {tested}/200 cases")
