"""Plots and summary tables for completed runs.

Writes loss curves, the per-case Dice distribution, view overlays (MIP +
activation heatmap + detection contour + centre marker) and a CSV summary
with one ``mean±std`` row per run configuration.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ..errors import ValidationError
from .crossval import RunReport


def _method_label(report: RunReport) -> str:
    lam = report.config.get("train", {}).get("lambda", "?")
    return f"lambda={lam}"


def _plot_loss_curves(reports, out_path: Path):
    fig, axes = plt.subplots(1, len(reports), figsize=(5.5 * len(reports), 4), squeeze=False)
    for ax, report in zip(axes[0], reports):
        if report.history:
            steps = np.arange(len(report.history))
            for key, label in (("loss1", "classification"), ("loss2", "distance"),
                               ("combined", "combined")):
                ax.plot(steps, [h[key] for h in report.history], label=label, linewidth=0.8)
            ax.legend(fontsize=8)
        ax.set_title(_method_label(report))
        ax.set_xlabel("step (all folds)")
        ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def _plot_dice_distribution(reports, out_path: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    data = [[r.dice for r in rep.case_records] for rep in reports]
    ax.boxplot(data, tick_labels=[_method_label(r) for r in reports])
    ax.set_ylabel("Dice")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def _plot_overlay(npz_path: Path, out_path: Path):
    data = np.load(npz_path)
    images, cams, masks, centers = data["images"], data["cams"], data["masks2d"], data["centers"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for i, (ax, view) in enumerate(zip(axes, ("coronal", "sagittal"))):
        ax.imshow(images[i].T, cmap="gray", origin="lower")
        ax.imshow(cams[i].T, cmap="jet", alpha=0.35, origin="lower")
        if masks[i].any():
            ax.contour(masks[i].T, levels=[0.5], colors="cyan", linewidths=1.0)
        ax.plot(centers[i][0], centers[i][1], "wx", markersize=8)
        ax.set_title(f"{view}  (true {int(data['label'])}, pred {int(data['pred_label'])})",
                     fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def render_report(reports: RunReport | list[RunReport], out_dir) -> list[Path]:
    """Render plots and the summary table; returns the list of files written.

    Refuses empty reports before touching the filesystem.
    """
    if isinstance(reports, RunReport):
        reports = [reports]
    if not reports or any(not r.case_records for r in reports):
        raise ValidationError("cannot render an empty report")
    out_dir = Path(out_dir)
    plots = out_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    path = plots / "loss_curves.png"
    _plot_loss_curves(reports, path)
    written.append(path)

    path = plots / "dice_distribution.png"
    _plot_dice_distribution(reports, path)
    written.append(path)

    for report in reports:
        for overlay in report.overlay_files:
            npz_path = Path(overlay)
            if not npz_path.exists():
                continue
            out_path = plots / f"overlay_{npz_path.stem}.png"
            _plot_overlay(npz_path, out_path)
            written.append(out_path)

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n_cases", "dice", "dice_mean", "dice_std", "accuracy",
                         "folds", "flagged_both_empty"])
        for report in reports:
            writer.writerow([
                _method_label(report),
                report.n_cases,
                f"{report.dice_mean:.2f}±{report.dice_std:.2f}",
                f"{report.dice_mean:.4f}",
                f"{report.dice_std:.4f}",
                f"{report.accuracy:.4f}",
                report.k,
                sum(r.both_empty for r in report.case_records),
            ])
    written.append(summary_path)
    return written
