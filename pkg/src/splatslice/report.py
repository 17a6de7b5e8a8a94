"""Report figures written next to the CLI's JSON output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .frames import FrameImage
from .metrics import MetricReport


def write_compare_report(
    out_dir, frame_a: FrameImage, frame_b: FrameImage, report: MetricReport,
    label_a: str = "a", label_b: str = "b",
) -> list[str]:
    """Side-by-side frames plus an absolute-difference heatmap."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(report.to_json() + "\n", "utf-8")

    diff = np.abs(
        frame_a.rgb.astype(np.int16) - frame_b.rgb.astype(np.int16)
    ).max(axis=2)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4.2))
    axes[0].imshow(frame_a.pixels)
    axes[0].set_title(label_a)
    axes[1].imshow(frame_b.pixels)
    axes[1].set_title(label_b)
    im = axes[2].imshow(diff, cmap="magma", vmin=0, vmax=max(1, diff.max()))
    axes[2].set_title("max |difference|")
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(f"PSNR {report.psnr_db:.2f} dB   SSIM {report.ssim:.4f}")
    fig.tight_layout()
    fig_path = out_dir / "comparison.png"
    fig.savefig(fig_path, dpi=110)
    plt.close(fig)
    return [str(json_path), str(fig_path)]


def write_compile_report(out_dir, summary: dict, delta_counts: list[int]) -> list[str]:
    """Compression summary plus a per-state delta-size chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "compile_report.json"
    json_path.write_text(json.dumps(summary, indent=2) + "\n", "utf-8")

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.bar(np.arange(len(delta_counts)), delta_counts, width=1.0, color="steelblue")
    ax1.set_xlabel("state index")
    ax1.set_ylabel("delta primitives")
    ax1.set_title(f"per-state residue (base = {summary['base_count']})")
    sizes = [summary["input_bytes"], summary["output_bytes"]]
    ax2.bar(["input PLY", "asset"], sizes, color=["gray", "seagreen"])
    ax2.set_ylabel("bytes")
    ax2.set_title(f"compression ratio {summary['ratio']:.4f}")
    for i, s in enumerate(sizes):
        ax2.annotate(f"{s:,}", (i, s), ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig_path = out_dir / "compile_report.png"
    fig.savefig(fig_path, dpi=110)
    plt.close(fig)
    return [str(json_path), str(fig_path)]
