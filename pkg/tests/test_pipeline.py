import json
import math

import numpy as np
import pytest
import torch

from mipcam import (ClassSpec, ConfigError, NumericError, PetVolume, PhantomConfig, Point3D,
                    StratificationError, ValidationError, build_classifier, generate_dataset)
from mipcam.pipeline import (RunReport, TrainConfig, cross_validate, evaluate, gradcheck,
                             load_dataset, localize, make_folds, make_training_example,
                             prepare_case, render_report, train)
from mipcam.pipeline.data import LoadedCase


def tiny_phantom_config(seed=5, **overrides):
    defaults = dict(
        shape=(32, 32, 48),
        class_specs=(
            ClassSpec(region=((5, 27), (5, 27), (28, 45)), radius_range=(2.5, 4.0),
                      intensity_range=(8.0, 15.0), name="upper"),
            ClassSpec(region=((5, 27), (5, 27), (3, 20)), radius_range=(2.5, 4.0),
                      intensity_range=(8.0, 15.0), name="central"),
        ),
        n_confounders=2,
        confounder_radius_range=(1.5, 2.5),
        confounder_intensity_range=(10.0, 20.0),
        noise_level=1.5,
        blur_sigma=1.0,
        rng_seed=seed,
    )
    defaults.update(overrides)
    return PhantomConfig(**defaults)


def tiny_cases(n_per_class=4, seed=5):
    cases = generate_dataset(tiny_phantom_config(seed=seed), n_per_class=n_per_class)
    return [LoadedCase(c.case_id, c.volume, c.truth.label, c.truth.center, c.truth.mask)
            for c in cases]


@pytest.fixture(scope="module")
def eight_cases():
    return tiny_cases(n_per_class=4)


@pytest.fixture(scope="module")
def quick_cfg():
    return TrainConfig(epochs=2, seed=3, lam=1.0)


class TestMakeTrainingExample:
    def test_view_shapes(self):
        vol = PetVolume(np.random.default_rng(0).uniform(0, 1, (64, 64, 96)).astype(np.float32),
                        (2.0, 2.0, 2.0))
        (cor, sag), (pc, ps), label = make_training_example(vol, Point3D(3, 5, 7), 1)
        assert cor.shape == (64, 96) and sag.shape == (64, 96)
        assert label == 1

    def test_projected_centers(self):
        vol = PetVolume(np.zeros((10, 10, 10), dtype=np.float32) , (2.0, 2.0, 2.0))
        _, (pc, ps), _ = make_training_example(vol, Point3D(3, 5, 7), 0)
        assert (pc.u, pc.v) == (3, 7)
        assert (ps.u, ps.v) == (5, 7)

    def test_mip_max_equals_volume_max(self, rng):
        vol = PetVolume(rng.uniform(0, 1, (16, 16, 32)).astype(np.float32), (2.0, 2.0, 2.0))
        (cor, sag), _, _ = make_training_example(vol, Point3D(0, 0, 0), 0)
        assert float(cor.data.max()) == float(vol.data.max())
        assert float(sag.data.max()) == float(vol.data.max())


class TestPrepareCase:
    def test_images_normalized_and_stacked(self, eight_cases, quick_cfg):
        prepared = prepare_case(eight_cases[0], quick_cfg)
        assert prepared.images.shape == (2, 32, 48)
        assert prepared.images.dtype == np.float32
        assert 0.0 <= prepared.images.min() and prepared.images.max() <= 1.0

    def test_center_remapped_identically_for_same_spacing(self, eight_cases, quick_cfg):
        case = eight_cases[0]
        prepared = prepare_case(case, quick_cfg)
        assert (prepared.centers[0].u, prepared.centers[0].v) == (case.center.x, case.center.z)

    def test_mask_resampled_with_volume(self, eight_cases):
        cfg = TrainConfig(epochs=1, target_spacing=(4.0, 4.0, 4.0))
        prepared = prepare_case(eight_cases[0], cfg)
        assert prepared.volume.shape == (16, 16, 24)
        assert prepared.mask.shape == (16, 16, 24)


class TestFolds:
    def test_partition_and_sizes(self):
        ids = [f"c{i}" for i in range(20)]
        labels = [i % 2 for i in range(20)]
        split = make_folds(ids, labels, 5, seed=0)
        assert all(len(f) == 4 for f in split.folds)
        combined = sorted(cid for fold in split.folds for cid in fold)
        assert combined == sorted(ids)

    def test_pairwise_disjoint(self):
        ids = [f"c{i}" for i in range(20)]
        labels = [i % 2 for i in range(20)]
        split = make_folds(ids, labels, 5, seed=1)
        for i in range(5):
            for j in range(i + 1, 5):
                assert not (set(split.folds[i]) & set(split.folds[j]))

    def test_class_balance_within_one(self):
        ids = [f"c{i}" for i in range(22)]
        labels = [i % 2 for i in range(22)]
        split = make_folds(ids, labels, 5, seed=2)
        label_of = dict(zip(ids, labels))
        for fold in split.folds:
            counts = [sum(label_of[c] == lab for c in fold) for lab in (0, 1)]
            assert abs(counts[0] - counts[1]) <= 1

    def test_single_class_fold_rejected(self):
        ids = [f"c{i}" for i in range(6)]
        labels = [0, 0, 0, 0, 0, 1]
        with pytest.raises(StratificationError):
            make_folds(ids, labels, 3, seed=0)

    def test_too_few_cases_rejected(self):
        with pytest.raises(ValidationError):
            make_folds(["a", "b"], [0, 1], 5, seed=0)


class TestTrain:
    def test_zero_epochs_returns_initialized_model(self, eight_cases):
        cfg = TrainConfig(epochs=0, seed=11)
        prepared = [prepare_case(c, cfg) for c in eight_cases]
        model, history = train(prepared, cfg)
        assert history == []
        fresh = build_classifier((32, 48), seed=11)
        for a, b in zip(model.parameters(), fresh.parameters()):
            assert torch.equal(a, b)

    def test_identical_seeds_identical_checkpoints(self, eight_cases):
        cfg = TrainConfig(epochs=2, seed=21, lam=1.0)
        prepared = [prepare_case(c, cfg) for c in eight_cases]
        m1, h1 = train(prepared, cfg)
        m2, h2 = train(prepared, cfg)
        for a, b in zip(m1.parameters(), m2.parameters()):
            assert torch.equal(a, b)
        assert [s.losses for s in h1] == [s.losses for s in h2]

    def test_lambda_zero_trains_without_distance_term(self, eight_cases):
        cfg = TrainConfig(epochs=1, seed=3, lam=0.0)
        prepared = [prepare_case(c, cfg) for c in eight_cases]
        _, history = train(prepared, cfg)
        for step in history:
            assert step.losses.combined == step.losses.classification
            assert step.losses.distance >= 0.0  # logged for the record

    def test_history_combined_recomputable(self, eight_cases, quick_cfg):
        prepared = [prepare_case(c, quick_cfg) for c in eight_cases]
        _, history = train(prepared, quick_cfg)
        for step in history:
            rec = step.losses.to_record()
            assert rec["combined"] == rec["loss1"] + rec["lambda"] * rec["loss2"]

    def test_divergence_aborts_with_dump(self, eight_cases, tmp_path):
        cfg = TrainConfig(epochs=2, seed=3, learning_rate=1e18, lam=1.0)
        prepared = [prepare_case(c, cfg) for c in eight_cases]
        with pytest.raises(NumericError):
            train(prepared, cfg, dump_dir=tmp_path)
        assert list(tmp_path.glob("diverged_step*.npz"))

    def test_empty_dataset_rejected(self, quick_cfg):
        with pytest.raises(ValidationError):
            train([], quick_cfg)

    def test_smoke_run_reaches_full_training_accuracy(self):
        # Separable 20-case set must be fully fit within the preset budget.
        cases = tiny_cases(n_per_class=10, seed=77)
        cfg = TrainConfig(epochs=15, seed=5, lam=1.0)
        prepared = [prepare_case(c, cfg) for c in cases]
        model, _ = train(prepared, cfg)
        records, _ = evaluate(model, prepared, cfg)
        accuracy = sum(r.correct for r in records) / len(records)
        assert accuracy == 1.0


class TestEvaluate:
    def test_record_count_equals_case_count(self, eight_cases, quick_cfg):
        prepared = [prepare_case(c, quick_cfg) for c in eight_cases]
        model, _ = train(prepared, quick_cfg)
        records, predictions = evaluate(model, prepared, quick_cfg)
        assert len(records) == len(prepared) == len(predictions)

    def test_cases_without_ground_truth_skipped(self, eight_cases, quick_cfg):
        prepared = [prepare_case(c, quick_cfg) for c in eight_cases]
        stripped = prepared[0].__class__(**{**prepared[0].__dict__, "mask": None})
        model, _ = train(prepared, quick_cfg)
        with pytest.warns(UserWarning, match="no ground-truth mask"):
            records, _ = evaluate(model, [stripped] + prepared[1:], quick_cfg)
        assert len(records) == len(prepared) - 1

    def test_untrained_model_near_chance_on_balanced_cases(self):
        cases = tiny_cases(n_per_class=50, seed=123)
        cfg = TrainConfig(epochs=0, seed=9)
        prepared = [prepare_case(c, cfg) for c in cases]
        model, _ = train(prepared, cfg)
        records, _ = evaluate(model, prepared, cfg)
        accuracy = sum(r.correct for r in records) / len(records)
        assert abs(accuracy - 0.5) <= 0.15  # 3 sigma for 100 balanced cases

    def test_handbuilt_ideal_cam_recovers_tumor(self):
        # A synthetic prediction path cross-check: when the activation map is
        # an indicator of the tumor silhouette, the pipeline mask equals
        # refine(backproject(silhouettes)).
        from mipcam import backproject, cam_to_mask, refine_mask
        from mipcam.localization import dice as dice_fn

        cases = tiny_cases(n_per_class=1, seed=55)
        cfg = TrainConfig(epochs=0)
        case = prepare_case(cases[0], cfg)
        gt = case.mask
        cor = gt.max(axis=1).astype(np.float32)
        sag = gt.max(axis=0).astype(np.float32)
        mask3 = backproject(cam_to_mask(cor, 0.5), cam_to_mask(sag, 0.5))
        refined = refine_mask(mask3, case.volume, cfg.suv_frac)
        assert dice_fn(refined.data, gt) > 0.8


class TestCrossValidate:
    def test_fold_arithmetic_and_aggregates(self, tmp_path):
        cases = tiny_cases(n_per_class=5, seed=31)
        cfg = TrainConfig(epochs=2, seed=13, lam=1.0, report_samples=2)
        report = cross_validate(cases, cfg, k=5, out_dir=tmp_path)
        assert report.n_cases == 10
        assert [fs["n_test"] for fs in report.fold_summaries] == [2] * 5
        tested = [r.case_id for r in report.case_records]
        assert sorted(tested) == sorted(c.case_id for c in cases)

        # aggregate dice must be recomputable from the records on disk
        lines = (tmp_path / "records.jsonl").read_text().splitlines()
        assert len(lines) == 10
        dices = [json.loads(line)["dice"] for line in lines]
        assert report.dice_mean == pytest.approx(float(np.mean(dices)), abs=1e-12)
        assert report.dice_std == pytest.approx(float(np.std(dices)), abs=1e-12)

        # history is written with the wire keys and recomputable combined loss
        history_lines = (tmp_path / "history.jsonl").read_text().splitlines()
        assert history_lines
        for line in history_lines:
            rec = json.loads(line)
            assert rec["combined"] == rec["loss1"] + rec["lambda"] * rec["loss2"]

        # overlay sample budget respected
        assert len(report.overlay_files) == 2

    def test_report_roundtrip(self, tmp_path):
        cases = tiny_cases(n_per_class=5, seed=31)
        cfg = TrainConfig(epochs=1, seed=13)
        report = cross_validate(cases, cfg, k=5, out_dir=tmp_path)
        loaded = RunReport.load(tmp_path / "report.json")
        assert loaded.dice_mean == report.dice_mean
        assert loaded.accuracy == report.accuracy
        assert len(loaded.case_records) == len(report.case_records)


class TestGradcheck:
    def test_passes_within_tolerance(self):
        report = gradcheck(seed=0, instances=5, tolerance=1e-4)
        assert report.passed, report.failures
        assert report.max_rel_error < 1e-4
        assert sum(not i.skipped_degenerate for i in report.instances) >= 5

    def test_covers_all_loss_kinds(self):
        report = gradcheck(seed=0, instances=1)
        checked = [i for i in report.instances if not i.skipped_degenerate][0]
        assert set(checked.max_rel_error) == {"loss1", "loss2", "combined"}

    def test_degenerate_instance_flagged_and_skipped(self, monkeypatch):
        import importlib

        gc = importlib.import_module("mipcam.pipeline.gradcheck")
        calls = []
        original = gc.check_instance

        def flaky(seed, lam, per_tensor=6):
            calls.append(seed)
            result = original(seed, lam, per_tensor=per_tensor)
            if len(calls) == 1:
                result.skipped_degenerate = True
                result.max_rel_error = {}
            return result

        monkeypatch.setattr(gc, "check_instance", flaky)
        report = gc.gradcheck(seed=0, instances=2)
        assert any(i.skipped_degenerate for i in report.instances)
        assert sum(not i.skipped_degenerate for i in report.instances) == 2
        assert report.passed

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValidationError):
            gradcheck(instances=0)
        with pytest.raises(ValidationError):
            gradcheck(tolerance=0.0)


class TestRenderReport:
    def test_writes_plots_and_summary(self, tmp_path):
        cases = tiny_cases(n_per_class=5, seed=31)
        cfg = TrainConfig(epochs=1, seed=13, report_samples=1)
        run_dir = tmp_path / "run"
        report = cross_validate(cases, cfg, k=5, out_dir=run_dir)
        files = render_report(report, tmp_path / "out")
        names = {f.name for f in files}
        assert "loss_curves.png" in names
        assert "dice_distribution.png" in names
        assert "summary.csv" in names
        overlays = [f for f in files if f.name.startswith("overlay_")]
        assert len(overlays) == 1
        summary = (tmp_path / "out" / "summary.csv").read_text().splitlines()
        assert len(summary) == 2  # header + one method row
        assert "±" in summary[1]

    def test_one_row_per_method_config(self, tmp_path):
        cases = tiny_cases(n_per_class=5, seed=31)
        reports = []
        for lam in (0.0, 1.0):
            cfg = TrainConfig(epochs=1, seed=13, lam=lam, report_samples=0)
            reports.append(cross_validate(cases, cfg, k=5))
        files = render_report(reports, tmp_path / "out")
        summary = (tmp_path / "out" / "summary.csv").read_text().splitlines()
        assert len(summary) == 3
        assert "lambda=0.0" in summary[1] and "lambda=1.0" in summary[2]

    def test_empty_report_rejected_before_writing(self, tmp_path):
        report = RunReport(config={}, k=5, n_cases=0, dice_mean=0, dice_std=0, accuracy=0,
                           fold_summaries=[], case_records=[], history=[])
        out = tmp_path / "nothing"
        with pytest.raises(ValidationError):
            render_report(report, out)
        assert not out.exists()


class TestDatasetIO:
    def test_load_dataset_roundtrip(self, tmp_path):
        cfg = tiny_phantom_config(seed=8)
        generate_dataset(cfg, n_per_class=2, out_dir=tmp_path)
        cases, config = load_dataset(tmp_path / "manifest.json")
        assert len(cases) == 4
        assert config["shape"] == [32, 32, 48]
        labels = sorted(c.label for c in cases)
        assert labels == [0, 0, 1, 1]
        assert all(c.mask is not None and c.mask.any() for c in cases)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_dataset(tmp_path / "nope.json")


class TestLocalize:
    def test_localize_runs_on_raw_volume(self, eight_cases, quick_cfg):
        prepared = [prepare_case(c, quick_cfg) for c in eight_cases]
        model, _ = train(prepared, quick_cfg)
        prediction = localize(model, eight_cases[0].volume, quick_cfg)
        assert prediction.pred_label in (0, 1)
        assert prediction.mask3d.shape == eight_cases[0].volume.shape
        assert math.isclose(sum(prediction.probabilities), 1.0, abs_tol=1e-5)
