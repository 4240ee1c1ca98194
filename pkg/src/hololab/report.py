"""Report rendering: CSV tables and matplotlib figures next to the JSON."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport
from .world.render import VideoTensor

METRIC_ORDER = ("ssim", "psnr", "frechet_proxy", "orbit_consistency", "ssim_to_input", "n_samples")


def format_table(report: MetricReport) -> str:
    rows = []
    for key in METRIC_ORDER:
        value = getattr(report, key)
        if value is None:
            continue
        rows.append(f"{key:18s} {value:.6g}" if isinstance(value, float) else f"{key:18s} {value}")
    return "\n".join(rows)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _to_unit(frames: np.ndarray) -> np.ndarray:
    return np.clip((frames + 1.0) * 0.5, 0.0, 1.0)


def orbit_strip_figure(path: Path, output: VideoTensor, reference: VideoTensor | None, title: str) -> None:
    n = output.n_frames
    rows = 1 if reference is None else 2
    fig, axes = plt.subplots(rows, n, figsize=(1.1 * n, 1.3 * rows), squeeze=False)
    for f in range(n):
        axes[0][f].imshow(_to_unit(output.frames[f]))
        axes[0][f].set_axis_off()
        if reference is not None:
            axes[1][f].imshow(_to_unit(reference.frames[f]))
            axes[1][f].set_axis_off()
    axes[0][0].set_title("output", loc="left", fontsize=8)
    if reference is not None:
        axes[1][0].set_title("reference", loc="left", fontsize=8)
    fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def metrics_bar_figure(path: Path, rows: list[dict], metric: str = "ssim") -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(rows)), 3))
    labels = [str(r.get("sample", i)) for i, r in enumerate(rows)]
    values = [r[metric] for r in rows]
    ax.bar(labels, values, color="#4878d0")
    ax.set_ylabel(metric)
    ax.set_xlabel("sample")
    ax.set_title(f"per-sample {metric}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval_report(
    out_dir: str | Path,
    report: MetricReport,
    per_sample: list[dict],
    examples: list[tuple[VideoTensor, VideoTensor | None]] | None = None,
    max_examples: int = 4,
) -> Path:
    """Write report.json, report.csv, and figures; returns the JSON path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    report.to_json(json_path)
    write_csv(out / "report.csv", per_sample)
    if per_sample:
        metrics_bar_figure(out / "ssim_per_sample.png", per_sample, "ssim")
    for i, (output, reference) in enumerate((examples or [])[:max_examples]):
        orbit_strip_figure(out / f"orbit_{i:02d}.png", output, reference, f"sample {i}")
    return json_path


def loss_curve_figure(metrics_path: str | Path, out_path: str | Path) -> None:
    records = [json.loads(ln) for ln in Path(metrics_path).read_text().splitlines() if ln.strip()]
    if not records:
        return
    steps = [r["step"] for r in records]
    losses = [r["loss"] for r in records]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, losses, lw=0.6, alpha=0.5, label="loss")
    if len(losses) >= 20:
        k = max(len(losses) // 50, 5)
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(steps[k - 1 :], smooth, lw=1.5, label=f"moving avg ({k})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
