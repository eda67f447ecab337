"""Similarity, proportion, Likert and ablation arithmetic."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from ..errors import EmptyCluster, EmptySamples, MissingCell, OutOfRange
from ..model import DETECTION_VARIANTS, PromptVariant
from .cluster import cosine

LIKERT_MAX = 7


def avg_sim(robot: Sequence[float] | np.ndarray, members: Sequence[Sequence[float]] | np.ndarray) -> float:
    """Mean cosine similarity between the robot vector and every member of its cluster."""
    members = np.asarray(members, dtype=float)
    if len(members) == 0:
        raise EmptyCluster("cluster has no members")
    r = np.asarray(robot, dtype=float)
    return sum(cosine(r, h) for h in members) / len(members)


def proportion_rate(cluster_size: int, n: int) -> float:
    if not 1 <= cluster_size <= n:
        raise OutOfRange(f"need 1 <= cluster size ({cluster_size}) <= n ({n})")
    return cluster_size / n


def likert_percent(mean: float) -> float:
    """Mean on the 7-point scale as a percentage, truncated to one decimal place."""
    return math.floor(mean / LIKERT_MAX * 1000 + 1e-9) / 10


@dataclass(frozen=True)
class LikertStats:
    mean: float
    sd: float
    n: int

    @property
    def percent(self) -> float:
        return likert_percent(self.mean)

    @property
    def percent_exact(self) -> float:
        return self.mean / LIKERT_MAX * 100

    def to_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "sd": self.sd, "n": self.n, "percent": self.percent}


def likert_stats(samples: Sequence[int]) -> LikertStats:
    """Mean, sample standard deviation (0 for a single rating) and count."""
    if not samples:
        raise EmptySamples("no Likert ratings")
    for s in samples:
        if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or not 1 <= s <= LIKERT_MAX:
            raise OutOfRange(f"Likert rating must be an integer in 1..{LIKERT_MAX}, got {s!r}")
    values = [int(s) for s in samples]
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return LikertStats(statistics.fmean(values), sd, len(values))


# ---------------------------------------------------------------------------
# ablation grid

METRICS = ("need_sim", "sol_sim")


def _diff(a: float, b: float) -> float:
    # decimal arithmetic keeps 72.8 - 46.4 == 26.4 for table-style inputs
    return float(Decimal(repr(a)) - Decimal(repr(b)))


@dataclass(frozen=True)
class AblationReport:
    cells: dict[PromptVariant, dict[str, float]]
    # metric -> {"atom_removal": .., "constraint_removal": .., "both_removal": ..}
    deltas: dict[str, dict[str, float]]

    def grid(self, metric: str) -> list[list[float]]:
        """Rows: without / with constraints. Columns: without / with the affective stage."""
        c = self.cells
        return [
            [c[PromptVariant.NO_ATOM_NO_CONSTRAINTS][metric], c[PromptVariant.ATOM_NO_CONSTRAINTS][metric]],
            [c[PromptVariant.NO_ATOM_CONSTRAINTS][metric], c[PromptVariant.FULL][metric]],
        ]

    def to_dict(self) -> dict:
        return {
            "cells": {v.value: dict(m) for v, m in self.cells.items()},
            "deltas": {m: dict(d) for m, d in self.deltas.items()},
        }


def ablation_report(results: Mapping[PromptVariant | str, Mapping[str, float]]) -> AblationReport:
    """2x2 grid plus drops relative to the full variant.

    ``atom_removal`` = full - (constraints, no affective stage);
    ``constraint_removal`` = full - (affective stage, no constraints).
    """
    cells = {PromptVariant.parse(v): {m: float(vals[m]) for m in METRICS if m in vals}
             for v, vals in results.items()}
    for variant in DETECTION_VARIANTS:
        if variant not in cells:
            raise MissingCell(variant.value)
        for metric in METRICS:
            if metric not in cells[variant]:
                raise MissingCell(f"{variant.value}.{metric}")
    full = cells[PromptVariant.FULL]
    deltas = {
        metric: {
            "atom_removal": _diff(full[metric], cells[PromptVariant.NO_ATOM_CONSTRAINTS][metric]),
            "constraint_removal": _diff(full[metric], cells[PromptVariant.ATOM_NO_CONSTRAINTS][metric]),
            "both_removal": _diff(full[metric], cells[PromptVariant.NO_ATOM_NO_CONSTRAINTS][metric]),
        }
        for metric in METRICS
    }
    return AblationReport({v: cells[v] for v in DETECTION_VARIANTS}, deltas)
