"""Matplotlib figure writers for the CLI report paths.

Every function here takes data that the library already produced and writes
one PNG.  The Agg backend is forced before pyplot is imported so the CLI
works headless; nothing in this module ever opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schedule import TRAJECTORY_KINDS, make_trajectory, mean_manhattan_step

DPI = 130


def _finish(fig, path):
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_trajectory_figure(path, tiles_x: int, tiles_y: int,
                           kinds=TRAJECTORY_KINDS, block_rotation: int = 0) -> None:
    """One panel per traversal kind, drawn as a polyline over tile centers."""
    fig, axes = plt.subplots(1, len(kinds), figsize=(3.1 * len(kinds), 3.4))
    if len(kinds) == 1:
        axes = [axes]
    for ax, kind in zip(axes, kinds):
        traj = make_trajectory(tiles_x, tiles_y, kind, block_rotation)
        ax.plot(traj[:, 0], traj[:, 1], lw=0.9, color="tab:blue")
        ax.scatter([traj[0, 0]], [traj[0, 1]], s=18, color="tab:green", zorder=3)
        ax.scatter([traj[-1, 0]], [traj[-1, 1]], s=18, color="tab:red", zorder=3)
        ax.set_title(f"{kind}  mean step {mean_manhattan_step(traj):.3f}", fontsize=9)
        ax.set_xlim(-0.8, tiles_x - 0.2)
        ax.set_ylim(tiles_y - 0.2, -0.8)  # y down, image convention
        ax.set_aspect("equal")
        ax.tick_params(labelsize=7)
    fig.suptitle(f"tile traversals on {tiles_x}x{tiles_y}", fontsize=10)
    fig.tight_layout()
    _finish(fig, path)


def save_cache_figure(path, sweep: dict, title: str = "cache hit rate by traversal") -> None:
    """Bar chart over a {kind: CacheStats} sweep result."""
    kinds = list(sweep)
    rates = [sweep[k].hit_rate for k in kinds]
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    bars = ax.bar(kinds, rates, color="tab:blue")
    for b, r in zip(bars, rates):
        ax.text(b.get_x() + b.get_width() / 2, r, f"{r:.4f}",
                ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, min(1.0, max(rates) * 1.15 + 1e-9))
    ax.set_ylabel("hit rate")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _finish(fig, path)


def save_roofline_figure(path, report: dict) -> None:
    peak = report["peak_macs_per_cycle"]
    bw = report["bytes_per_cycle"]
    xs = np.logspace(-1, 9, 400, base=2.0)
    roof = np.minimum(peak, bw * xs)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(xs, roof, color="black", lw=1.2)
    for pt in report["points"]:
        x = pt["intensity_macs_per_byte"]
        y = pt["attainable_macs_per_cycle"]
        ax.plot([x], [y], "o", ms=6, label=f"{pt['name']} ({pt['bound']}-bound)")
        ax.annotate(f"{x:.2f}", (x, y), textcoords="offset points",
                    xytext=(4, -10), fontsize=8)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("operational intensity (MAC/byte)")
    ax.set_ylabel("attainable MAC/cycle")
    ax.set_title("roofline", fontsize=10)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _finish(fig, path)


def save_training_figure(path, rows: list) -> None:
    """Loss and quality curves from a TrainReport row list."""
    steps = [r["step"] for r in rows]
    losses = [r["loss"] for r in rows]
    ev = [(r["step"], r["psnr"]) for r in rows if r["psnr"] is not None]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.2, 4.6), sharex=True)
    ax1.plot(steps, losses, lw=0.8, color="tab:blue")
    ax1.set_ylabel("loss")
    if ev:
        ax2.plot([e[0] for e in ev], [e[1] for e in ev], "o-", ms=3,
                 lw=0.9, color="tab:orange")
    ax2.set_ylabel("PSNR (dB)")
    ax2.set_xlabel("step")
    fig.suptitle("training", fontsize=10)
    fig.tight_layout()
    _finish(fig, path)


def save_dse_figure(path, rows: list) -> None:
    """Quality vs cost scatter for the structure sweep."""
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    for r in rows:
        if r.get("diverged"):
            continue
        ax.plot([r["n_macs"]], [r["final_psnr"]], "o", ms=5)
        label = f"{r['structure']}/{r['hidden_act']}/{r['output_act']}"
        ax.annotate(label, (r["n_macs"], r["final_psnr"]),
                    textcoords="offset points", xytext=(5, 0), fontsize=7)
    ax.set_xlabel("MACs per gaussian")
    ax.set_ylabel("final PSNR (dB)")
    ax.set_title("decay network design space", fontsize=10)
    fig.tight_layout()
    _finish(fig, path)


def save_render_figure(path, image: np.ndarray, title: str = "render") -> None:
    # same display transfer as the PPM writer
    shown = np.clip(image, 0.0, 1.0) ** (1.0 / 2.2)
    fig, ax = plt.subplots(figsize=(4.4, 4.4))
    ax.imshow(shown, interpolation="nearest")
    ax.set_title(title, fontsize=10)
    ax.axis("off")
    fig.tight_layout()
    _finish(fig, path)


def save_fp16_scan_figure(path, scan_dict: dict) -> None:
    """Census of the leaky ReLU hardware shortcut over all 16-bit patterns."""
    keys = list(scan_dict)
    vals = [scan_dict[k] for k in keys]
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    bars = ax.bar(keys, vals, color="tab:purple")
    for b, v in zip(bars, vals):
        ax.text(b.get_x() + b.get_width() / 2, max(v, 0.6), str(v),
                ha="center", va="bottom", fontsize=8)
    ax.set_yscale("symlog")
    ax.set_ylabel("bit patterns")
    ax.set_title("leaky ReLU exponent trick census", fontsize=10)
    ax.tick_params(axis="x", labelsize=7, rotation=12)
    fig.tight_layout()
    _finish(fig, path)


def save_pipeline_figure(path, naive: dict, interleaved: dict) -> None:
    """Side by side cycle totals for the two pipeline schedules."""
    labels = ["naive", "interleaved"]
    totals = [naive["total_cycles"], interleaved["total_cycles"]]
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    bars = ax.bar(labels, totals, color=["tab:gray", "tab:green"])
    for b, v in zip(bars, totals):
        ax.text(b.get_x() + b.get_width() / 2, v, str(v),
                ha="center", va="bottom", fontsize=8)
    speedup = totals[0] / totals[1] if totals[1] else float("inf")
    ax.set_ylabel("cycles per frame")
    ax.set_title(f"pipeline overlap, speedup {speedup:.3f}x", fontsize=10)
    fig.tight_layout()
    _finish(fig, path)
