"""Matplotlib figures written next to the text reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation.metrics import AblationReport  # noqa: E402
from .evaluation.report import EvaluationResult, SimilarityReport  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None}, format="png", dpi=100)
    plt.close(fig)
    return path


def similarity_bars(result: EvaluationResult, path: str | Path) -> Path:
    """Per-task similarity and proportion for the need and solution stages."""
    tasks = [r.task_id for r in result.rows]
    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    width = 0.38
    for ax, stage in zip(axes, ("need", "solution")):
        reps = [getattr(r, stage) for r in result.rows]
        sims = [100 * r.avg_sim if r else 0.0 for r in reps]
        props = [100 * r.proportion if r else 0.0 for r in reps]
        ax.bar([t - width / 2 for t in tasks], sims, width, label="similarity")
        ax.bar([t + width / 2 for t in tasks], props, width, label="proportion")
        ax.set_ylabel(f"{stage} (%)")
        ax.set_ylim(0, 100)
        ax.legend(loc="upper right", fontsize="small")
    axes[-1].set_xlabel("task")
    axes[-1].set_xticks(tasks)
    return _save(fig, Path(path))


def success_bars(counts: Mapping[int, tuple[int, int]], path: str | Path) -> Path:
    tasks = sorted(counts)
    rates = [100 * counts[t][0] / counts[t][1] for t in tasks]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(tasks, rates, color="tab:green")
    total = sum(w for w, _ in counts.values()) / sum(n for _, n in counts.values())
    ax.axhline(100 * total, color="black", linestyle="--", linewidth=1, label=f"pooled {100 * total:.1f}%")
    ax.set_xticks(tasks)
    ax.set_ylim(0, 105)
    ax.set_xlabel("task")
    ax.set_ylabel("success (%)")
    ax.legend(loc="lower right", fontsize="small")
    return _save(fig, Path(path))


def ablation_heatmap(ablation: AblationReport, path: str | Path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, (metric, title) in zip(axes, (("need_sim", "need similarity"), ("sol_sim", "solution similarity"))):
        grid = ablation.grid(metric)
        ax.imshow(grid, cmap="viridis", vmin=0, vmax=100)
        for i in range(2):
            for j in range(2):
                ax.text(j, i, f"{grid[i][j]:.1f}", ha="center", va="center", color="white")
        ax.set_xticks([0, 1], ["w/o AToM", "w/ AToM"])
        ax.set_yticks([0, 1], ["w/o constraints", "w/ constraints"])
        ax.set_title(title)
    return _save(fig, Path(path))


def elbow_curves(reports: Sequence[SimilarityReport], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for rep in reports:
        if rep.sse_curve:
            ks, sse = zip(*rep.sse_curve)
            ax.plot(ks, sse, marker="o", linewidth=1, label=f"{rep.task_id}/{rep.stage}")
    ax.set_xlabel("k")
    ax.set_ylabel("within-cluster SSE")
    if len(reports) <= 8:
        ax.legend(fontsize="x-small")
    return _save(fig, Path(path))


def render_all(result: EvaluationResult, out_dir: str | Path,
               counts: Mapping[int, tuple[int, int]] | None = None) -> list[Path]:
    out = Path(out_dir)
    paths = [similarity_bars(result, out / "similarity.png"), elbow_curves(result.reports, out / "elbow.png")]
    if result.ablation is not None:
        paths.append(ablation_heatmap(result.ablation, out / "ablation.png"))
    if counts:
        paths.append(success_bars(counts, out / "success.png"))
    return paths
