"""Markdown report and figure rendering for evaluation runs.

Figures are written as PNG with fixed size/dpi on the Agg backend, which
keeps the bytes reproducible run to run; nothing here embeds wall-clock
state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .domain import Detection, GroundTruthBox, Vocabulary
from .metrics import EvalReport, pooled_pr_points

FIG_DPI = 100


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def render_report_md(
    report: EvalReport,
    vocab: Vocabulary,
    selector: str | None = None,
    figure_files: Sequence[str] = (),
) -> str:
    """A table of the headline numbers plus the per-class AP50 breakdown."""
    label = selector or "run"
    lines = [
        "# Evaluation report",
        "",
        "| Method | AP50 (novel) | AP50 (base) | AP50 (all) | mAP (novel) | mAP (base) | mAP (all) |",
        "|---|---|---|---|---|---|---|",
        f"| {label} | {_fmt(report.ap50_novel)} | {_fmt(report.ap50_base)} | {_fmt(report.ap50_all)} "
        f"| {_fmt(report.map_novel)} | {_fmt(report.map_base)} | {_fmt(report.map_all)} |",
        "",
    ]
    if report.vocab_precision is not None:
        lines += [
            "| Vocabulary precision | Vocabulary recall |",
            "|---|---|",
            f"| {_fmt(report.vocab_precision)} | {_fmt(report.vocab_recall)} |",
            "",
        ]
    counts = report.counts
    lines += [
        f"Images: {counts.images}, detections: {counts.detections}, "
        f"ground truths: {counts.ground_truths}, selector fallbacks: {counts.fallbacks}.",
        "",
    ]
    if report.classes_evaluated:
        names = {c.id: c.name for c in vocab.classes}
        lines += ["## AP50 per class", "", "| Class | Group | AP50 |", "|---|---|---|"]
        for class_id in report.classes_evaluated:
            group = report.group_of.get(class_id, "-")
            ap = report.ap_per_class_per_threshold.get((class_id, 0.5))
            lines.append(f"| {names.get(class_id, class_id)} | {group} | {_fmt(ap)} |")
        lines.append("")
    if figure_files:
        lines += ["## Figures", ""]
        lines += [f"- `{name}`" for name in figure_files]
        lines.append("")
    return "\n".join(lines)


def write_figures(
    out_dir: Path,
    report: EvalReport,
    vocab: Vocabulary,
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
) -> list[str]:
    """Render the standard figures; returns file names relative to out_dir."""
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    names = {c.id: c.name for c in vocab.classes}
    written: list[str] = []

    if report.classes_evaluated:
        labels = [names.get(c, str(c)) for c in report.classes_evaluated]
        values = [
            report.ap_per_class_per_threshold[(c, 0.5)] for c in report.classes_evaluated
        ]
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(labels)), 3.2))
        ax.bar(labels, values, color="#4878a8")
        ax.set_ylabel("AP50")
        ax.set_ylim(0, 1.05)
        ax.set_title("AP50 per class")
        ax.tick_params(axis="x", rotation=45)
        fig.tight_layout()
        fig.savefig(fig_dir / "ap50_per_class.png", dpi=FIG_DPI)
        plt.close(fig)
        written.append("figures/ap50_per_class.png")

    points = pooled_pr_points(dets, gts, 0.5)
    fig, ax = plt.subplots(figsize=(4.0, 3.2))
    if points:
        ax.plot(
            [p.recall for p in points],
            [p.precision for p in points],
            marker="o",
            markersize=3,
            color="#a84848",
        )
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.05)
    ax.set_title("Pooled precision-recall (IoU 0.5)")
    fig.tight_layout()
    fig.savefig(fig_dir / "pr_curve_iou50.png", dpi=FIG_DPI)
    plt.close(fig)
    written.append("figures/pr_curve_iou50.png")

    if report.vocab_precision is not None and report.vocab_recall is not None:
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.bar(
            ["precision", "recall"],
            [report.vocab_precision, report.vocab_recall],
            color=["#4878a8", "#6aa84f"],
        )
        ax.set_ylim(0, 1.05)
        ax.set_title("Vocabulary adaptation quality")
        fig.tight_layout()
        fig.savefig(fig_dir / "vocab_quality.png", dpi=FIG_DPI)
        plt.close(fig)
        written.append("figures/vocab_quality.png")
    return written


def metrics_payload(report: EvalReport) -> dict:
    """The metrics.json content; vocabulary keys appear only when computed."""
    payload: dict = {
        "ap50_all": report.ap50_all,
        "ap50_base": report.ap50_base,
        "ap50_novel": report.ap50_novel,
        "map_all": report.map_all,
        "map_base": report.map_base,
        "map_novel": report.map_novel,
    }
    if report.vocab_precision is not None:
        payload["vocab_precision"] = report.vocab_precision
        payload["vocab_recall"] = report.vocab_recall
    payload["counts"] = {
        "images": report.counts.images,
        "detections": report.counts.detections,
        "ground_truths": report.counts.ground_truths,
        "fallbacks": report.counts.fallbacks,
    }
    return payload
