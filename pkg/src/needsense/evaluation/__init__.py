"""Clustering-based comparison of robot and human responses, plus Likert and ablation summaries."""

from __future__ import annotations

from .cluster import ClusterModel, ElbowResult, assign_cluster, canonical_relabel, cosine, kmeans, select_k_elbow
from .corpus import (
    CorpusRow,
    HumanResponseUnit,
    RobotResponse,
    load_corpus,
    load_robot_responses,
    parse_corpus,
    parse_robot_responses,
)
from .metrics import AblationReport, LikertStats, ablation_report, avg_sim, likert_percent, likert_stats, proportion_rate
from .report import EvaluationResult, SimilarityReport, evaluate_corpus, evaluate_task, robot_responses_from_runs
from .text import HashingEmbedder, RemoteEmbedder, segment

__all__ = [
    "AblationReport", "ClusterModel", "CorpusRow", "ElbowResult", "EvaluationResult", "HashingEmbedder",
    "HumanResponseUnit", "LikertStats", "RemoteEmbedder", "RobotResponse", "SimilarityReport",
    "ablation_report", "assign_cluster", "avg_sim", "canonical_relabel", "cosine", "evaluate_corpus",
    "evaluate_task", "kmeans", "likert_percent", "likert_stats", "load_corpus", "load_robot_responses",
    "parse_corpus", "parse_robot_responses", "proportion_rate", "robot_responses_from_runs", "segment",
    "select_k_elbow",
]
