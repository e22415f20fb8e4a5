"""Stratified k-fold cross-validation and the aggregated run report.

Every fold trains a fresh model on the other folds and is scored end to end
(MIP -> CAM -> mask -> back-projection -> refinement -> Dice).  All on-disk
records are deterministic byte for byte for a fixed config and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DatasetWriteError
from ..nifti import save_mask
from .config import TrainConfig
from .data import LoadedCase, make_folds, prepare_case
from .evaluate import CaseRecord, evaluate
from .train import train


@dataclass
class RunReport:
    """Aggregate metrics plus every per-case and per-step record of a run."""

    config: dict
    k: int
    n_cases: int
    dice_mean: float
    dice_std: float
    accuracy: float
    fold_summaries: list[dict]
    case_records: list[CaseRecord]
    history: list[dict]
    overlay_files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "k": self.k,
            "n_cases": self.n_cases,
            "dice_mean": self.dice_mean,
            "dice_std": self.dice_std,
            "accuracy": self.accuracy,
            "fold_summaries": self.fold_summaries,
            "case_records": [r.to_record() for r in self.case_records],
            "overlay_files": self.overlay_files,
            "flagged_both_empty": sum(r.both_empty for r in self.case_records),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        records = [CaseRecord(
            case_id=r["case_id"], fold=r["fold"], label=r["label"], pred_label=r["pred_label"],
            dice=r["dice"], degenerate_cam=r["degenerate_cam"], empty_mask=r["empty_mask"],
            both_empty=r.get("both_empty", False),
        ) for r in d["case_records"]]
        return cls(config=d["config"], k=d["k"], n_cases=d["n_cases"], dice_mean=d["dice_mean"],
                   dice_std=d["dice_std"], accuracy=d["accuracy"],
                   fold_summaries=d["fold_summaries"], case_records=records,
                   history=d.get("history", []), overlay_files=d.get("overlay_files", []))

    def save(self, out_dir) -> Path:
        """Write report.json, records.jsonl and history.jsonl; returns report path."""
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            with open(out_dir / "records.jsonl", "w") as fh:
                for record in self.case_records:
                    fh.write(json.dumps(record.to_record(), sort_keys=True) + "\n")
            with open(out_dir / "history.jsonl", "w") as fh:
                for record in self.history:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            report_path = out_dir / "report.json"
            report_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise DatasetWriteError(f"failed to write report to {out_dir}: {exc}") from exc
        return report_path

    @classmethod
    def load(cls, path) -> "RunReport":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"report not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), fold]).generate_state(1)[0] % (2**31))


def _summarize(records: Sequence[CaseRecord]) -> tuple[float, float, float]:
    dices = np.array([r.dice for r in records], dtype=np.float64)
    correct = np.array([r.correct for r in records], dtype=np.float64)
    return float(dices.mean()), float(dices.std()), float(correct.mean())


def _save_overlay_data(out_dir: Path, case, prediction) -> str:
    path = out_dir / "overlays" / f"{case.case_id}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        images=case.images,
        cams=np.stack([c.data for c in prediction.cams]),
        masks2d=np.stack([m.data for m in prediction.masks2d]),
        centers=np.array([[c[0], c[1]] for c in case.centers]) if case.centers else np.zeros((2, 2)),
        label=np.array(case.label),
        pred_label=np.array(prediction.pred_label),
    )
    return str(path)


def cross_validate(cases: Sequence[LoadedCase], cfg: TrainConfig, k: int = 5,
                   out_dir=None, write_masks: bool = False) -> RunReport:
    """Train and score k stratified folds; optionally persist all artifacts."""
    prepared = [prepare_case(c, cfg) for c in cases]
    split = make_folds([c.case_id for c in prepared], [c.label for c in prepared], k, cfg.seed)
    by_id = {c.case_id: c for c in prepared}
    out_path = Path(out_dir) if out_dir is not None else None

    all_records: list[CaseRecord] = []
    history: list[dict] = []
    fold_summaries: list[dict] = []
    overlay_files: list[str] = []
    overlay_budget = cfg.report_samples

    for fold in range(k):
        test_ids = split.test_ids(fold)
        train_ids = split.train_ids(fold)
        assert not (test_ids & train_ids), "a case leaked into its own training fold"
        fold_cfg = cfg.with_overrides(seed=_fold_seed(cfg.seed, fold))
        model, steps = train([by_id[cid] for cid in sorted(train_ids)], fold_cfg,
                             dump_dir=out_path)
        test_cases = [by_id[cid] for cid in sorted(test_ids)]
        records, predictions = evaluate(model, test_cases, cfg, fold=fold)
        all_records.extend(records)
        for step in steps:
            history.append({"fold": fold, **step.to_record()})
        mean, std, acc = _summarize(records)
        fold_summaries.append({"fold": fold, "n_test": len(records), "dice_mean": mean,
                               "dice_std": std, "accuracy": acc})
        if out_path is not None:
            for case, prediction in predictions:
                if overlay_budget > 0:
                    overlay_files.append(_save_overlay_data(out_path, case, prediction))
                    overlay_budget -= 1
                if write_masks:
                    save_mask(out_path / "masks" / f"{case.case_id}_pred.nii.gz",
                              prediction.mask3d.data, case.volume.spacing)

    dice_mean, dice_std, accuracy = _summarize(all_records)
    report = RunReport(config={"train": cfg.to_dict(), "k": k}, k=k, n_cases=len(all_records),
                       dice_mean=dice_mean, dice_std=dice_std, accuracy=accuracy,
                       fold_summaries=fold_summaries, case_records=all_records,
                       history=history, overlay_files=overlay_files)
    if out_path is not None:
        report.save(out_path)
    return report
