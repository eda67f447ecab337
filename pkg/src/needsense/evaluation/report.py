"""Per-task similarity evaluation and the combined results table."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..errors import DimensionMismatch
from ..model import PromptVariant
from .cluster import K_CLAMP, ElbowResult, assign_cluster, best_of, canonical_relabel, select_k_elbow
from .corpus import CorpusRow, HumanResponseUnit, RobotResponse, likert_by_task, units_by_task
from .metrics import AblationReport, LikertStats, ablation_report, avg_sim, likert_stats, proportion_rate
from .text import Embedder

MODES = ("assigned", "modal")


@dataclass(frozen=True)
class Cluster:
    id: int
    members: tuple[int, ...]  # indices into SimilarityReport.units
    centroid: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class SimilarityReport:
    task_id: int
    stage: str
    k: int
    raw_k: int
    clamped: bool
    units: tuple[str, ...]
    clusters: tuple[Cluster, ...]
    assigned_cluster: int
    avg_sim: float
    proportion: float
    mode: str = "assigned"
    likert: LikertStats | None = None
    sse_curve: tuple[tuple[int, float], ...] = ()

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def notice(self) -> str:
        if not self.clamped:
            return ""
        return f"elbow chose k={self.raw_k}; clamped to {self.k}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "stage": self.stage,
            "k": self.k,
            "raw_k": self.raw_k,
            "clamped": self.clamped,
            "mode": self.mode,
            "n": self.n,
            "clusters": [{"id": c.id, "size": len(c.members), "members": [self.units[i] for i in c.members]}
                         for c in self.clusters],
            "assigned_cluster": self.assigned_cluster,
            "avg_sim": self.avg_sim,
            "proportion": self.proportion,
            "likert": self.likert.to_dict() if self.likert else None,
            "sse_curve": [[k, v] for k, v in self.sse_curve],
        }


def evaluate_task(task_id: int, stage: str, units: Sequence[str], robot_text: str, embedder: Embedder,
                  *, k_range: tuple[int, int] = (2, 6), seed: int = 0, restarts: int = 3,
                  mode: str = "assigned", likert: Sequence[int] | None = None) -> SimilarityReport:
    """Cluster the human units, place the robot response, and score it.

    Units are clustered in sorted text order and cluster ids are canonical
    (largest first), so the report does not depend on input order.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    texts = tuple(sorted(units))
    if not texts:
        raise ValueError(f"task {task_id} {stage}: no human units")
    vectors = embedder.embed(list(texts))
    robot = embedder.embed([robot_text])[0]
    if robot.shape[0] != vectors.shape[1]:
        raise DimensionMismatch(f"robot vector has {robot.shape[0]} dims, units have {vectors.shape[1]}")

    n = len(texts)
    # identical units always share a cluster, so k never exceeds the distinct count
    distinct = len(np.unique(vectors, axis=0))
    lo, hi = k_range
    elbow: ElbowResult | None = None
    if min(hi, distinct) >= lo:
        elbow = select_k_elbow(vectors, (lo, min(hi, distinct)), seed, restarts)
        k = min(elbow.k, distinct)
        raw_k = elbow.raw_k
    else:
        k = raw_k = distinct
    model = best_of(vectors, k, seed, restarts)

    labels = canonical_relabel(model.labels.tolist(), list(texts))
    order = {new: old for old, new in zip(model.labels.tolist(), labels)}
    clusters = tuple(
        Cluster(cid, tuple(i for i, lab in enumerate(labels) if lab == cid), model.centroids[order[cid]])
        for cid in range(k)
    )
    canon_model = type(model)(np.vstack([c.centroid for c in clusters]), np.asarray(labels),
                              model.sse_history, model.iterations)
    if mode == "assigned":
        chosen = assign_cluster(robot, canon_model)
    else:
        chosen = 0  # canonical ids put the largest cluster first
    members = clusters[chosen].members
    return SimilarityReport(
        task_id=task_id,
        stage=stage,
        k=k,
        raw_k=raw_k,
        clamped=k != raw_k or (elbow is not None and elbow.clamped),
        units=texts,
        clusters=clusters,
        assigned_cluster=chosen,
        avg_sim=avg_sim(robot, vectors[list(members)]),
        proportion=proportion_rate(len(members), n),
        mode=mode,
        likert=likert_stats(likert) if likert else None,
        sse_curve=tuple(sorted(elbow.sse.items())) if elbow else (),
    )


def robot_responses_from_runs(runs: Iterable[Any]) -> list[RobotResponse]:
    """One need response and one solution response per run: the report's texts joined in order."""
    out = []
    for run in runs:
        needs = run.report.needs
        out.append(RobotResponse(run.scenario_id, "need", " ".join(n.description for n in needs), run.variant))
        out.append(RobotResponse(run.scenario_id, "solution", " ".join(n.solution for n in needs), run.variant))
    return out


@dataclass
class TaskRow:
    task_id: int
    need: SimilarityReport | None = None
    solution: SimilarityReport | None = None
    need_likert: LikertStats | None = None
    solution_likert: LikertStats | None = None
    execution_likert: LikertStats | None = None
    success: tuple[int, int] | None = None


@dataclass
class EvaluationResult:
    rows: list[TaskRow]
    reports: list[SimilarityReport]
    ablation: AblationReport | None = None
    variant_means: dict[str, dict[str, float]] = field(default_factory=dict)


def _stats(samples: Mapping[tuple[int, str], list[int]], task: int, stage: str) -> LikertStats | None:
    values = samples.get((task, stage))
    return likert_stats(values) if values else None


def evaluate_corpus(rows: Sequence[CorpusRow], robots: Sequence[RobotResponse], embedder: Embedder,
                    *, seed: int = 0, k_range: tuple[int, int] = (2, 6), mode: str = "assigned",
                    success: Mapping[int, tuple[int, int]] | None = None) -> EvaluationResult:
    """Score every (task, stage, variant) robot response that has human units to compare against."""
    units = units_by_task(rows)
    ratings = likert_by_task(rows)
    reports: dict[tuple[int, str, PromptVariant], SimilarityReport] = {}
    for robot in robots:
        human: list[HumanResponseUnit] = units.get((robot.task_id, robot.stage), [])
        if not human:
            continue
        reports[(robot.task_id, robot.stage, robot.variant)] = evaluate_task(
            robot.task_id, robot.stage, [u.text for u in human], robot.text, embedder,
            k_range=k_range, seed=seed, mode=mode,
            likert=ratings.get((robot.task_id, robot.stage)) if robot.variant is PromptVariant.FULL else None,
        )

    tasks = sorted({r.task_id for r in rows} | {t for t, _, _ in reports} | set(success or {}))
    table = []
    for task in tasks:
        table.append(TaskRow(
            task_id=task,
            need=reports.get((task, "need", PromptVariant.FULL)),
            solution=reports.get((task, "solution", PromptVariant.FULL)),
            need_likert=_stats(ratings, task, "need"),
            solution_likert=_stats(ratings, task, "solution"),
            execution_likert=_stats(ratings, task, "execution"),
            success=(success or {}).get(task),
        ))

    means: dict[str, dict[str, float]] = {}
    for variant in PromptVariant:
        for stage, metric in (("need", "need_sim"), ("solution", "sol_sim")):
            sims = [r.avg_sim for (t, s, v), r in reports.items() if v is variant and s == stage]
            if sims:
                means.setdefault(variant.value, {})[metric] = round(100 * statistics.fmean(sims), 10)
    ablation = None
    if all(v.value in means and len(means[v.value]) == 2 for v in PromptVariant if v.is_detection):
        ablation = ablation_report(means)
    ordered = [reports[key] for key in sorted(reports, key=lambda k: (k[0], k[1], k[2].value))]
    return EvaluationResult(table, ordered, ablation, means)


# ---------------------------------------------------------------------------
# rendering

TABLE_HEADER = (
    "Task ID",
    "Need Similarity", "Need Proportion Rate", "Need Satisfaction",
    "Solution Similarity", "Solution Proportion Rate", "Solution Satisfaction",
    "Success Rate", "Execution Satisfaction",
)


def _pct(x: float | None) -> str:
    return "" if x is None else f"{100 * x:.1f}%"


def _likert(s: LikertStats | None) -> str:
    return "" if s is None else f"{s.mean:.2f}±{s.sd:.2f}"


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return statistics.fmean(vals) if vals else None


def table_rows(result: EvaluationResult) -> list[list[str]]:
    body = []
    for row in result.rows:
        body.append([
            str(row.task_id),
            _pct(row.need.avg_sim if row.need else None),
            _pct(row.need.proportion if row.need else None),
            _likert(row.need_likert),
            _pct(row.solution.avg_sim if row.solution else None),
            _pct(row.solution.proportion if row.solution else None),
            _likert(row.solution_likert),
            f"{row.success[0]}/{row.success[1]}" if row.success else "",
            _likert(row.execution_likert),
        ])
    rows = result.rows

    def sat(attr: str) -> str:
        m = _mean(getattr(r, attr).mean if getattr(r, attr) else None for r in rows)
        return "" if m is None else f"{m:.2f} / 7"

    counts = [r.success for r in rows if r.success]
    pooled = sum(w for w, _ in counts) / sum(n for _, n in counts) if counts else None
    body.append([
        "Average",
        _pct(_mean(r.need.avg_sim if r.need else None for r in rows)),
        _pct(_mean(r.need.proportion if r.need else None for r in rows)),
        sat("need_likert"),
        _pct(_mean(r.solution.avg_sim if r.solution else None for r in rows)),
        _pct(_mean(r.solution.proportion if r.solution else None for r in rows)),
        sat("solution_likert"),
        _pct(pooled),
        sat("execution_likert"),
    ])
    return body


def render_markdown(result: EvaluationResult) -> str:
    lines = ["| " + " | ".join(TABLE_HEADER) + " |", "|" + "---|" * len(TABLE_HEADER)]
    lines += ["| " + " | ".join(r) + " |" for r in table_rows(result)]
    notices = [f"- task {r.task_id} {r.stage} ({r.mode}): {r.notice}" for r in result.reports if r.notice]
    if notices:
        lines += ["", "Cluster-count notices:", *notices]
    if result.ablation is not None:
        lines += ["", render_ablation_markdown(result.ablation)]
    return "\n".join(lines) + "\n"


def render_ablation_markdown(ablation: AblationReport) -> str:
    out = []
    for metric, title in (("need_sim", "Need similarity"), ("sol_sim", "Solution similarity")):
        grid = ablation.grid(metric)
        d = ablation.deltas[metric]
        out += [
            f"{title}:",
            "",
            "| Prompt | w/o AToM | w/ AToM |",
            "|---|---|---|",
            f"| w/o Constraints | {grid[0][0]:.1f}% | {grid[0][1]:.1f}% |",
            f"| w/ Constraints | {grid[1][0]:.1f}% | {grid[1][1]:.1f}% |",
            "",
            f"Drop without AToM: {d['atom_removal']:.1f}; drop without constraints: {d['constraint_removal']:.1f}",
            "",
        ]
    return "\n".join(out).rstrip() + "\n"


def render_csv(result: EvaluationResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    writer.writerows(table_rows(result))
    return buf.getvalue()


def render_json(result: EvaluationResult) -> str:
    payload = {
        "table": [dict(zip(TABLE_HEADER, r)) for r in table_rows(result)],
        "reports": [r.to_dict() for r in result.reports],
        "variant_means": result.variant_means,
        "ablation": result.ablation.to_dict() if result.ablation else None,
        "k_clamp": list(K_CLAMP),
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


RENDERERS = {"md": render_markdown, "csv": render_csv, "json": render_json}
