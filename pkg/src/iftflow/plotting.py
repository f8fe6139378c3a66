"""File-writing plot helpers for run outputs.

Rendered alongside the CSV/JSONL outputs by the CLI: a loss curve with a
standard-deviation band, a 2D trajectory snapshot (initial cloud, target
sample, final weighted particles with vanished atoms drawn hollow), and a
method-comparison figure. Uses the Agg backend so runs work headless.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import TARGET_SEED_OFFSET, RunSummary
from .measures import sample_target


def plot_losses(summary: RunSummary, path) -> Path:
    """Mean loss curve with a +-1 std band on a log scale."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = summary.steps
    mean = summary.mean_loss
    std = summary.std_loss
    ax.plot(steps, mean, color="C0", label=summary.spec.method)
    lower = np.maximum(mean - std, 1e-300)
    ax.fill_between(steps, lower, mean + std, color="C0", alpha=0.25, linewidth=0)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("squared MMD")
    ax.set_title(f"{summary.spec.name}: mean over {len(summary.final_losses)} repeats")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trajectory(summary: RunSummary, path) -> Path | None:
    """Initial/target/final particle scatter for 2D runs.

    Final particles are colored by weight; atoms whose weight has vanished
    are drawn hollow. Returns None (writing nothing) for dimensions != 2.
    """
    trace = summary.example_trace
    first = trace.snapshots[0][1]
    if first.dim != 2:
        return None
    path = Path(path)
    spec = summary.spec
    target = sample_target(spec.target, seed=spec.flow.seed + TARGET_SEED_OFFSET)
    final = trace.final_measure

    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    ax.scatter(
        target.locations[:, 0], target.locations[:, 1],
        marker="x", color="forestgreen", s=30, label="target sample",
    )
    ax.scatter(
        first.locations[:, 0], first.locations[:, 1],
        color="lightgray", s=18, label="initial",
    )
    alive = ~final.vanished
    if np.any(alive):
        sc = ax.scatter(
            final.locations[alive, 0], final.locations[alive, 1],
            c=final.weights[alive], cmap="viridis", s=36, label="final (weighted)",
        )
        fig.colorbar(sc, ax=ax, label="weight")
    if np.any(final.vanished):
        ax.scatter(
            final.locations[final.vanished, 0], final.locations[final.vanished, 1],
            facecolors="none", edgecolors="crimson", s=36, label="final (vanished)",
        )
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"{spec.name} / {spec.method}, repeat 0")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_comparison(summaries, path) -> Path:
    """One mean loss curve per method on a shared log-scale axis."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, summary in enumerate(summaries):
        ax.plot(
            summary.steps, summary.mean_loss,
            color=f"C{i}", label=summary.spec.method,
        )
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("squared MMD")
    if summaries:
        ax.set_title(summaries[0].spec.name)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
