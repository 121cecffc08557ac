"""Figures written next to the delimited reports.

Uses ``matplotlib.figure.Figure`` directly so no global pyplot state or
interactive backend is touched.
"""
from __future__ import annotations

from pathlib import Path

from matplotlib.figure import Figure

KIND_COLORS = {
    "conv": "#4c72b0",
    "pw": "#55a868",
    "gpw": "#8fd19e",
    "dw": "#c44e52",
    "gconv": "#8172b2",
    "fc": "#937860",
    "pool": "#bbbbbb",
}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def plot_cost_report(report, path) -> Path:
    """Per-layer mult-adds (bars) and arithmetic intensity (points)."""
    rows = [r for r in report.rows if r.kind != "pool"]
    fig = Figure(figsize=(max(8, len(rows) * 0.12), 6))
    ax_f, ax_i = fig.subplots(2, 1, sharex=True)
    xs = range(len(rows))
    colors = [KIND_COLORS.get(r.kind, "k") for r in rows]
    ax_f.bar(xs, [r.mult_adds / 1e6 for r in rows], color=colors, width=0.85)
    ax_f.set_ylabel("mult-adds (M)")
    ax_f.set_title(f"{report.model or 'network'} @ {report.input_hw[0]}x{report.input_hw[1]}: "
                   f"{report.total_mult_adds / 1e6:.1f} MFLOPs")
    ax_i.scatter(xs, [r.intensity for r in rows], c=colors, s=12)
    ax_i.set_yscale("log")
    ax_i.set_ylabel("mult-adds / byte")
    ax_i.set_xlabel("layer index")
    for kind, color in KIND_COLORS.items():
        if any(r.kind == kind for r in rows):
            ax_i.scatter([], [], c=color, label=kind)
    ax_i.legend(loc="upper right", fontsize=8, ncol=3)
    return _save(fig, path)


def plot_bench(report, path) -> Path:
    """Median latency against pixel count, one line per model."""
    fig = Figure(figsize=(6, 4.5))
    ax = fig.subplots()
    for model in report.models():
        rows = sorted((e for e in report.entries if e.model == model), key=lambda e: e.resolution[0] * e.resolution[1])
        px = [e.resolution[0] * e.resolution[1] / 1e6 for e in rows]
        ax.errorbar(px, [e.median_ms for e in rows], yerr=[e.std_ms for e in rows], marker="o", capsize=3, label=model)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("input megapixels")
    ax.set_ylabel("median latency (ms, 1 thread)")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_comparison(rows, path) -> Path:
    """Stage-4 width of each structure at a matched budget."""
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    names = [r["kind"] for r in rows]
    ax.bar(names, [r["stage_widths"][-1] for r in rows], color="#4c72b0")
    for i, r in enumerate(rows):
        ax.text(i, r["stage_widths"][-1], str(r["stage_widths"][-1]), ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("stage 4 output channels")
    ax.set_title(f"matched budget {rows[-1]['mflops']:.0f} MFLOPs")
    return _save(fig, path)
