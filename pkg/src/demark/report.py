"""Plain-text tables and matplotlib figures for eval reports and loss logs."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_COLS = ("psnr", "ssim", "rmse", "rmse_w", "perceptual")
FIXED_SECTION = ("fixed", "white", "none")
COARSER_SECTION = ("coarser",)


def _fmt(v) -> str:
    if v is None:
        return "   --"
    return f"{v:8.3f}"


def render_report_text(report) -> str:
    """Two-section table: fixed-mask conditions, then the coarser condition."""
    lines = []
    ref = report.reference
    lines.append("Reference row (full-scale training, 60k images; not reproduced here):")
    lines.append(
        f"  PSNR {ref['psnr']:.2f}  SSIM {ref['ssim']:.3f}  RMSE {ref['rmse']:.2f}"
        f"  RMSE_w {ref['rmse_w']:.2f}  LPIPS {ref['lpips']:.3f}"
    )
    lines.append("")

    header = f"{'condition':<12}" + "".join(f"{m:>10}" for m in METRIC_COLS) + f"{'n':>6}"
    rule = "-" * len(header)

    def section(title, conds):
        rows = [c for c in conds if c in report.aggregates]
        if not rows:
            return
        lines.append(title)
        lines.append(rule)
        lines.append(header)
        lines.append(rule)
        for cond in rows:
            agg = report.aggregates[cond]
            cells = "".join(f"{_fmt(agg.get(m)):>10}" for m in METRIC_COLS)
            lines.append(f"{cond:<12}{cells}{agg['n']:>6}")
        lines.append(rule)
        lines.append("")

    section("Performance with fixed mask per image", FIXED_SECTION)
    section("Performance with fixed and coarser mask per image", COARSER_SECTION)
    if report.missing:
        lines.append(f"missing samples: {', '.join(report.missing)}")
        lines.append("")
    return "\n".join(lines)


def render_metric_figure(report, path: str | Path) -> Path | None:
    """Bar chart of mean metrics per mask condition."""
    if not report.aggregates:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    conds = list(report.aggregates)
    fig, axes = plt.subplots(1, len(METRIC_COLS), figsize=(3.2 * len(METRIC_COLS), 3.2))
    for ax, metric in zip(axes, METRIC_COLS):
        vals = [report.aggregates[c].get(metric, float("nan")) for c in conds]
        ax.bar(range(len(conds)), vals, color="steelblue")
        ax.set_xticks(range(len(conds)))
        ax.set_xticklabels(conds, rotation=30, ha="right")
        ax.set_title(metric)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_loss_curves(loss_log: str | Path, path: str | Path) -> Path | None:
    """Per-step loss curves from the JSONL training log."""
    loss_log = Path(loss_log)
    if not loss_log.exists():
        return None
    steps, series = [], {}
    with open(loss_log) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            steps.append(rec.get("step", len(steps)))
            for key in ("L_pixel", "L_per", "L_G", "L_D", "L_per_prime", "P", "total"):
                if key in rec:
                    series.setdefault(key, []).append(rec[key])
    if not steps or not series:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(steps, series.get("total", []), label="total", color="black")
    ax1.set_xlabel("step")
    ax1.set_title("generator total")
    ax1.grid(alpha=0.3)
    for key in ("L_pixel", "L_per", "L_G", "L_D", "L_per_prime"):
        if key in series and len(series[key]) == len(steps):
            ax2.plot(steps, series[key], label=key, linewidth=1)
    ax2.set_xlabel("step")
    ax2.set_title("loss terms")
    ax2.legend(fontsize=7)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
