"""Human-response corpus and robot-response ingestion from delimited text files."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import CorpusSchemaError, UnknownVariant
from ..model import PromptVariant
from .text import DEFAULT_DELIMITERS, segment

STAGES = ("need", "solution", "execution")
CORPUS_COLUMNS = ("participant_id", "task_id", "stage", "text", "likert")
ROBOT_COLUMNS = ("task_id", "stage", "text")


@dataclass(frozen=True)
class CorpusRow:
    participant_id: str
    task_id: int
    stage: str
    text: str
    likert: int | None
    lang: str = "en"


@dataclass(frozen=True)
class HumanResponseUnit:
    task_id: int
    stage: str
    text: str
    participant_id: str = ""


@dataclass(frozen=True)
class RobotResponse:
    task_id: int
    stage: str
    text: str
    variant: PromptVariant = PromptVariant.FULL


def _reader(text: str, path: str | Path | None) -> csv.DictReader:
    first = text.split("\n", 1)[0]
    tabbed = (path is not None and str(path).endswith(".tsv")) or "\t" in first
    return csv.DictReader(io.StringIO(text), delimiter="\t" if tabbed else ",")


def _require(reader: csv.DictReader, columns: Sequence[str]) -> None:
    present = [c.strip() for c in reader.fieldnames or []]
    for column in columns:
        if column not in present:
            raise CorpusSchemaError(f"missing column {column!r}", 1)


def _int(value: str | None, column: str, line: int) -> int:
    try:
        return int(str(value).strip())
    except ValueError:
        raise CorpusSchemaError(f"{column} must be an integer, got {value!r}", line) from None


def _stage(value: str | None, line: int, allowed: Sequence[str]) -> str:
    stage = (value or "").strip().lower()
    if stage not in allowed:
        raise CorpusSchemaError(f"stage must be one of {', '.join(allowed)}, got {value!r}", line)
    return stage


def parse_corpus(text: str, path: str | Path | None = None) -> list[CorpusRow]:
    """Rows of (participant_id, task_id, stage, text, likert[, lang]); errors carry file line numbers."""
    reader = _reader(text, path)
    _require(reader, CORPUS_COLUMNS)
    rows = []
    for record in reader:
        line = reader.line_num
        record = {(k or "").strip(): v for k, v in record.items()}
        likert_raw = (record.get("likert") or "").strip()
        likert = _int(likert_raw, "likert", line) if likert_raw else None
        if likert is not None and not 1 <= likert <= 7:
            raise CorpusSchemaError(f"likert must be in 1..7, got {likert}", line)
        stage = _stage(record.get("stage"), line, STAGES)
        body = (record.get("text") or "").strip()
        if stage != "execution" and not body and likert is None:
            raise CorpusSchemaError("row has neither text nor likert", line)
        rows.append(CorpusRow(
            participant_id=(record.get("participant_id") or "").strip(),
            task_id=_int(record.get("task_id"), "task_id", line),
            stage=stage,
            text=body,
            likert=likert,
            lang=(record.get("lang") or "en").strip() or "en",
        ))
    return rows


def load_corpus(path: str | Path) -> list[CorpusRow]:
    return parse_corpus(Path(path).read_text("utf-8"), path)


def units_by_task(rows: Iterable[CorpusRow], delimiters: str = DEFAULT_DELIMITERS
                  ) -> dict[tuple[int, str], list[HumanResponseUnit]]:
    """Segmented human units keyed by (task, stage); execution rows carry no units."""
    out: dict[tuple[int, str], list[HumanResponseUnit]] = defaultdict(list)
    for row in rows:
        if row.stage == "execution":
            continue
        for unit in segment(row.text, delimiters):
            out[(row.task_id, row.stage)].append(HumanResponseUnit(row.task_id, row.stage, unit, row.participant_id))
    return dict(out)


def likert_by_task(rows: Iterable[CorpusRow]) -> dict[tuple[int, str], list[int]]:
    out: dict[tuple[int, str], list[int]] = defaultdict(list)
    for row in rows:
        if row.likert is not None:
            out[(row.task_id, row.stage)].append(row.likert)
    return dict(out)


def parse_robot_responses(text: str, path: str | Path | None = None) -> list[RobotResponse]:
    """Rows of (task_id, stage, text[, variant]); variant defaults to the full prompt."""
    reader = _reader(text, path)
    _require(reader, ROBOT_COLUMNS)
    out = []
    seen: set[tuple[int, str, PromptVariant]] = set()
    for record in reader:
        line = reader.line_num
        record = {(k or "").strip(): v for k, v in record.items()}
        try:
            variant = PromptVariant.parse((record.get("variant") or "").strip() or "full")
        except UnknownVariant as exc:
            raise CorpusSchemaError(str(exc), line) from None
        response = RobotResponse(
            task_id=_int(record.get("task_id"), "task_id", line),
            stage=_stage(record.get("stage"), line, STAGES[:2]),
            text=(record.get("text") or "").strip(),
            variant=variant,
        )
        if not response.text:
            raise CorpusSchemaError("empty robot response", line)
        key = (response.task_id, response.stage, response.variant)
        if key in seen:
            raise CorpusSchemaError(f"duplicate robot response for {key}", line)
        seen.add(key)
        out.append(response)
    return out


def load_robot_responses(path: str | Path) -> list[RobotResponse]:
    return parse_robot_responses(Path(path).read_text("utf-8"), path)
