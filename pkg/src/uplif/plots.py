"""Figures rendered next to the delimited report output."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import Metrics

__all__ = ["render_report_figures", "render_training_curve"]


def _stem(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix("") if p.suffix else p


def render_report_figures(metrics: Sequence[Metrics], csv_path) -> list[Path]:
    """Render throughput/latency (and height, when sampled) PNGs beside the
    report CSV. Returns the written paths."""
    stem = _stem(csv_path)
    written: list[Path] = []
    if not metrics:
        return written

    labels = [f"{m.workload}\n{m.dataset} r{m.run_id}" if m.dataset else f"{m.workload}\nr{m.run_id}" for m in metrics]
    xs = range(len(metrics))

    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(metrics)), 4))
    ax.bar(xs, [m.throughput / 1e6 for m in metrics], color="#4878cf")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("throughput (Mops/s)")
    ax.set_title("benchmark throughput")
    fig.tight_layout()
    out = stem.parent / f"{stem.name}_throughput.png"
    fig.savefig(out, dpi=130)
    plt.close(fig)
    written.append(out)

    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(metrics)), 4))
    width = 0.4
    ax.bar([x - width / 2 for x in xs], [m.p50_us for m in metrics], width, label="p50", color="#6acc65")
    ax.bar([x + width / 2 for x in xs], [m.p99_us for m in metrics], width, label="p99", color="#d65f5f")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("latency (us)")
    ax.set_yscale("log")
    ax.set_title("op latency")
    ax.legend()
    fig.tight_layout()
    out = stem.parent / f"{stem.name}_latency.png"
    fig.savefig(out, dpi=130)
    plt.close(fig)
    written.append(out)

    if any(m.bmat_height_series for m in metrics):
        fig, ax = plt.subplots(figsize=(7, 4))
        for m, label in zip(metrics, labels):
            if m.bmat_height_series:
                ax.plot(m.bmat_height_series, label=label.replace("\n", " "), linewidth=1)
        ax.set_xlabel("sample")
        ax.set_ylabel("tree height")
        ax.set_title("adjustment-tree height over the run")
        ax.legend(fontsize=7)
        fig.tight_layout()
        out = stem.parent / f"{stem.name}_height.png"
        fig.savefig(out, dpi=130)
        plt.close(fig)
        written.append(out)

    return written


def render_training_curve(rewards: Sequence[float], epsilons: Sequence[float], out_path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(rewards, color="#4878cf", linewidth=1, label="reward")
    ax.set_xlabel("tuning step")
    ax.set_ylabel("reward")
    ax2 = ax.twinx()
    ax2.plot(epsilons, color="#d65f5f", linewidth=1, linestyle="--", label="epsilon")
    ax2.set_ylabel("epsilon")
    ax.set_title("agent training")
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out
