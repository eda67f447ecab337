"""Need detection, constraint screening and action decomposition for one scenario."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

from .constraints import Violation, check_plan, check_quota, check_solution
from .errors import ExhaustedRepairs, ParseError, SolutionPlanMismatch, UnknownVariant
from .gateway import ChatRequest, Gateway
from .model import (
    ActionPlan,
    NeedReport,
    PromptVariant,
    RobotConstraints,
    ScenarioSpec,
    parse_action_list,
    parse_need_report,
    plan_from_dict,
    plan_to_dict,
    report_from_record,
    report_to_record,
    solution_key,
)
from .prompts import get_prompt, render_action_request
from .scenarios import load_world

log = logging.getLogger(__name__)

CORRECTIVE = "Reply with valid JSON only."
DEFAULT_REPAIR_LIMIT = 2


@dataclass(frozen=True)
class Finding:
    """A constraint violation tagged with where it was found."""

    stage: str  # "solution" or "plan"
    need_id: str
    violation: Violation

    def to_dict(self) -> dict[str, str]:
        return {"stage": self.stage, "need_id": self.need_id, **self.violation.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Finding":
        return cls(data["stage"], data["need_id"], Violation.from_dict(data))


@dataclass
class PipelineRun:
    scenario_id: int
    variant: PromptVariant
    report: NeedReport
    plans: list[ActionPlan]
    violations: list[Finding]
    attempts: int  # detection call; never more than 1 + repair_limit
    timestamps: dict[str, str] = field(default_factory=dict)
    # need ids whose solutions survived screening, aligned with plans
    plan_need_ids: list[str] = field(default_factory=list)
    action_attempts: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "variant": self.variant.value,
            "attempts": self.attempts,
            "action_attempts": self.action_attempts,
            "report": report_to_record(self.report),
            "plans": [dict(plan_to_dict(p), need_id=n) for p, n in zip(self.plans, self.plan_need_ids)],
            "violations": [f.to_dict() for f in self.violations],
            "timestamps": dict(self.timestamps),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineRun":
        return cls(
            scenario_id=data["scenario_id"],
            variant=PromptVariant.parse(data["variant"]),
            report=report_from_record(data["report"]),
            plans=[plan_from_dict(p) for p in data["plans"]],
            violations=[Finding.from_dict(f) for f in data["violations"]],
            attempts=data["attempts"],
            timestamps=dict(data.get("timestamps", {})),
            plan_need_ids=[p.get("need_id", "") for p in data["plans"]],
            action_attempts=data.get("action_attempts", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def align_plans(solutions: Sequence[str], plans: Sequence[ActionPlan]) -> list[ActionPlan]:
    """Order ``plans`` to match ``solutions``.

    Matching is by normalized key text; when the model rewrote its keys and the
    counts agree, plans are paired by position instead.
    """
    by_key: dict[str, ActionPlan] = {}
    for plan in plans:
        by_key.setdefault(solution_key(plan.source_key), plan)
    matched = [by_key.get(solution_key(s)) for s in solutions]
    if all(p is not None for p in matched):
        chosen = matched
    elif len(plans) == len(solutions):
        chosen = list(plans)
    else:
        raise SolutionPlanMismatch(f"{len(solutions)} solutions requested, {len(plans)} plans returned")
    return [ActionPlan(s, p.steps, p.source_key) for s, p in zip(solutions, chosen)]  # type: ignore[union-attr]


class Pipeline:
    def __init__(self, gateway: Gateway, *, repair_limit: int = DEFAULT_REPAIR_LIMIT,
                 constraints: RobotConstraints | None = None, strict: bool = False,
                 clock: Callable[[], str] = _now):
        if repair_limit < 0:
            raise ValueError("repair_limit must be >= 0")
        self.gateway = gateway
        self.repair_limit = repair_limit
        self.constraints = constraints or RobotConstraints()
        self.strict = strict
        self.clock = clock

    def _ask(self, request: ChatRequest, parse: Callable[[str], Any]) -> tuple[Any, int]:
        """Send ``request``; on a parse error re-ask with the corrective appended."""
        last: ParseError | None = None
        for attempt in range(1, self.repair_limit + 2):
            if attempt > 1:
                request = ChatRequest(
                    request.system_text, f"{request.user_text}\n\n{CORRECTIVE}", request.image_ref,
                    request.temperature, request.max_retries, request.timeout,
                    request.scenario_id, request.variant,
                )
            reply = self.gateway.complete(request)
            try:
                return parse(reply.text), attempt
            except ParseError as exc:
                log.info("attempt %d: unparseable reply (%s)", attempt, exc)
                last = exc
        assert last is not None
        raise ExhaustedRepairs(self.repair_limit + 1, last)

    def detect(self, scenario: ScenarioSpec, variant: PromptVariant | str) -> tuple[NeedReport, int]:
        variant = PromptVariant.parse(variant)
        if not variant.is_detection:
            raise UnknownVariant(f"{variant.value} is not a detection variant")
        request = ChatRequest("", get_prompt(variant).text, scenario.image_ref,
                              scenario_id=scenario.id, variant=variant)
        return self._ask(request, lambda text: parse_need_report(text, variant))

    def detect_needs(self, scenario: ScenarioSpec, variant: PromptVariant | str) -> NeedReport:
        return self.detect(scenario, variant)[0]

    def decompose(self, report: NeedReport, scenario_id: int | None = None,
                  solutions: Sequence[str] | None = None) -> list[ActionPlan]:
        """Plans for ``solutions`` (default: every solution in the report), in that order."""
        return self.decompose_counted(report, scenario_id, solutions)[0]

    def decompose_counted(self, report: NeedReport, scenario_id: int | None = None,
                          solutions: Sequence[str] | None = None) -> tuple[list[ActionPlan], int]:
        if not report.needs:
            raise ValueError("report has no needs")
        solutions = list(report.solutions if solutions is None else solutions)
        request = ChatRequest("", render_action_request(solutions), None,
                              scenario_id=scenario_id, variant=PromptVariant.ACTION_GENERATION)
        plans, attempts = self._ask(request, parse_action_list)
        return align_plans(solutions, plans), attempts

    def run_full(self, scenario: ScenarioSpec, variant: PromptVariant | str) -> PipelineRun:
        started = self.clock()
        report, attempts = self.detect(scenario, variant)
        if self.strict:
            check_quota(report)
        findings: list[Finding] = []
        surviving = []
        for need in report.needs:
            hits = check_solution(need.solution, report.environment, self.constraints)
            findings += [Finding("solution", need.id, v) for v in hits]
            if not hits:
                surviving.append(need)
        plans: list[ActionPlan] = []
        action_attempts = 0
        if surviving:
            plans, action_attempts = self.decompose_counted(report, scenario.id, [n.solution for n in surviving])
            world = load_world(scenario.id)
            for need, plan in zip(surviving, plans):
                hits = check_plan(plan, world, self.constraints, report.environment.possible_items)
                findings += [Finding("plan", need.id, v) for v in hits]
        return PipelineRun(
            scenario_id=scenario.id,
            variant=report.variant,
            report=report,
            plans=plans,
            violations=findings,
            attempts=attempts,
            timestamps={"started": started, "finished": self.clock()},
            plan_need_ids=[n.id for n in surviving],
            action_attempts=action_attempts,
        )


def write_run(run: PipelineRun, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"task_{run.scenario_id:02d}_{run.variant.value}.json"
    path.write_text(run.to_json(), "utf-8")
    return path


def read_run(path: str | Path) -> PipelineRun:
    return PipelineRun.from_dict(json.loads(Path(path).read_text("utf-8")))
