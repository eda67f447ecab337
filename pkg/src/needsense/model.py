"""Domain types and tolerant parsing of model replies.

Model output in the wild mixes key spellings ("possible item" vs
"possible_items", "suggested robot solution" vs "suggested_robot_action") and
nests the ``human`` block either inside ``Environment`` or next to it. Parsing
normalizes all of that into frozen dataclasses; serialization always emits one
canonical shape.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Union

from .errors import MalformedMoveValue, NoJsonFound, SchemaViolation
from .names import mentions, normalize_name


class PromptVariant(str, enum.Enum):
    FULL = "full_atom_constraints"
    NO_ATOM_NO_CONSTRAINTS = "no_atom_no_constraints"
    ATOM_NO_CONSTRAINTS = "atom_no_constraints"
    NO_ATOM_CONSTRAINTS = "no_atom_constraints"
    ACTION_GENERATION = "action_generation"

    @property
    def is_detection(self) -> bool:
        return self is not PromptVariant.ACTION_GENERATION

    @property
    def uses_atom(self) -> bool:
        return self in (PromptVariant.FULL, PromptVariant.ATOM_NO_CONSTRAINTS)

    @property
    def uses_constraints(self) -> bool:
        return self in (PromptVariant.FULL, PromptVariant.NO_ATOM_CONSTRAINTS)

    @property
    def expects_environment(self) -> bool:
        return self.is_detection and self is not PromptVariant.NO_ATOM_NO_CONSTRAINTS

    @classmethod
    def parse(cls, value: "str | PromptVariant") -> "PromptVariant":
        from .errors import UnknownVariant

        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        if key == "full":
            return cls.FULL
        try:
            return cls(key)
        except ValueError:
            raise UnknownVariant(f"unknown prompt variant {value!r}") from None


DETECTION_VARIANTS = tuple(v for v in PromptVariant if v.is_detection)


class Scene(str, enum.Enum):
    KITCHEN = "kitchen"
    OFFICE = "office"
    HOME_GYM = "home_gym"
    LIVING_ROOM = "living_room"


OBSERVATION_KEYS = ("facial_expression", "eye_gaze", "head_direction", "gesture", "posture", "activity")
PHYSICAL_KEYS = ("touch", "taste", "vision", "sound", "smell", "vestibular", "proprioception", "interoception")
MENTAL_KEYS = ("emotion", "attention", "desire", "intention")
ENV_TEXT_KEYS = ("location", "lighting", "sound", "temperature")
SOLUTION_KEY = "suggested_robot_solution"
PERSON = "person"


# ---------------------------------------------------------------------------
# key normalization


@lru_cache(maxsize=1)
def _aliases() -> dict[str, str]:
    text = resources.files("needsense.data").joinpath("aliases.json").read_text("utf-8")
    return json.loads(text)


_PAREN_RE = re.compile(r"^([^()]+?)_*\(.*$")


def normalize_keys(raw_key: str) -> str:
    """Map a model-emitted key onto its canonical snake_case spelling.

    Lowercases, turns runs of spaces/hyphens into one underscore, drops a
    trailing parenthetical ("navigation(object_name)") and then applies the
    alias table. Idempotent.
    """
    key = raw_key.strip().lower()
    key = re.sub(r"[\s\-]+", "_", key)
    key = re.sub(r"_+", "_", key).strip("_")
    m = _PAREN_RE.match(key)
    if m:
        key = m.group(1).strip("_")
    return _aliases().get(key, key)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class HumanObservation:
    facial_expression: str = ""
    eye_gaze: str = ""
    head_direction: str = ""
    gesture: str = ""
    posture: str = ""
    activity: str = ""
    # keys the model invented beyond the observation vocabulary, kept for round-trips
    extra: dict[str, str] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not any(getattr(self, k) for k in OBSERVATION_KEYS) and not self.extra


@dataclass(frozen=True)
class EnvironmentObservation:
    location: str = ""
    lighting: str = ""
    sound: str = ""
    temperature: str = ""
    objects: dict[str, str] = field(default_factory=dict)
    possible_items: tuple[str, ...] = ()


@dataclass(frozen=True)
class InternalState:
    physical: dict[str, str] = field(default_factory=dict)
    mental: dict[str, str] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.physical and not self.mental


@dataclass(frozen=True)
class Need:
    id: str
    description: str
    solution: str
    uses_possible_item: bool = False


@dataclass(frozen=True)
class NeedReport:
    environment: EnvironmentObservation
    human: HumanObservation
    state: InternalState
    needs: tuple[Need, ...]
    variant: PromptVariant = PromptVariant.FULL
    raw_text: str = field(default="", compare=False, repr=False)

    @property
    def solutions(self) -> list[str]:
        return [n.solution for n in self.needs]


@dataclass(frozen=True)
class Navigate:
    target: str
    kind = "navigate"


@dataclass(frozen=True)
class Move:
    object: str
    destination: str
    kind = "move"


@dataclass(frozen=True)
class Use:
    object: str
    kind = "use"


ActionPrimitive = Union[Navigate, Move, Use]


@dataclass(frozen=True)
class ActionPlan:
    solution_text: str
    steps: tuple[ActionPrimitive, ...]
    # key the model used for this entry; differs from solution_text after alignment
    source_key: str = ""

    def __post_init__(self) -> None:
        if not self.steps:
            raise SchemaViolation(self.solution_text[:40] or "<plan>", "plan has no steps")
        if not isinstance(self.steps[0], Navigate):
            raise SchemaViolation(self.solution_text[:40] or "<plan>", "first step must be navigation")
        if not self.source_key:
            object.__setattr__(self, "source_key", self.solution_text)


@dataclass(frozen=True)
class RobotConstraints:
    arm_count: int = 1
    can_reach_floor: bool = False
    verbal_allowed: bool = False
    forbidden_device_classes: frozenset[str] = frozenset({"computer", "phone", "laptop"})
    mobility: bool = True


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    scene: Scene
    image_ref: str
    visible_objects: tuple[str, ...]
    auxiliary_objects: tuple[str, ...]
    annotation: str = ""

    def __post_init__(self) -> None:
        if not 1 <= self.id <= 16:
            raise ValueError(f"scenario id out of range: {self.id}")
        if not 10 <= len(self.auxiliary_objects) <= 18:
            raise ValueError(
                f"scenario {self.id}: {len(self.auxiliary_objects)} auxiliary objects, expected 10-18"
            )


# ---------------------------------------------------------------------------
# JSON extraction


class _Obj(dict):
    """dict that also remembers every (key, value) pair in source order, duplicates included."""

    pairs: list[tuple[str, Any]]


def _hook(pairs: list[tuple[str, Any]]) -> _Obj:
    obj = _Obj(pairs)
    obj.pairs = pairs
    return obj


_DECODER = json.JSONDecoder(object_pairs_hook=_hook)
_FENCE_RE = re.compile(r"```[a-zA-Z]*\s*\n?(.*?)```", re.S)


def strip_fences(text: str) -> str:
    """Return the body of the first fenced block, or the text unchanged."""
    m = _FENCE_RE.search(text)
    return m.group(1) if m else text


def extract_json(text: str) -> _Obj:
    """Find the outermost JSON object in a reply that may carry prose or code fences."""
    for candidate in (strip_fences(text), text):
        start = candidate.find("{")
        while start != -1:
            try:
                obj, _ = _DECODER.raw_decode(candidate, start)
            except json.JSONDecodeError:
                start = candidate.find("{", start + 1)
                continue
            return obj
    raise NoJsonFound(text)


# ---------------------------------------------------------------------------
# need reports


def _normalized(obj: Any, path: str) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, f"expected an object, got {type(obj).__name__}")
    out: dict[str, Any] = {}
    for key, value in getattr(obj, "pairs", obj.items()):
        norm = normalize_keys(key)
        if norm in out:
            raise SchemaViolation(f"{path}.{norm}", "key given twice")
        out[norm] = value
    return out


def _text(value: Any, path: str) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return ", ".join(v.strip() for v in value)
    raise SchemaViolation(path, f"expected text, got {type(value).__name__}")


def _objects(value: Any, path: str) -> dict[str, str]:
    if value is None:
        return {}
    if isinstance(value, list):
        return {_text(v, path): "" for v in value if _text(v, path)}
    if not isinstance(value, dict):
        raise SchemaViolation(path, "expected a name -> affordance map")
    out = {}
    for name, affordance in value.items():
        name = name.strip()
        if not name:
            raise SchemaViolation(path, "empty object name")
        out[name] = _text(affordance, f"{path}.{name}")
    return out


def _items(value: Any, path: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, dict):
        inner = _normalized(value, path)
        if "items" in inner:
            return _items(inner["items"], f"{path}.items")
        return _items(list(value), path)
    if isinstance(value, str):
        value = [v for v in value.split(",")]
    if not isinstance(value, list):
        raise SchemaViolation(path, "expected a list of item names")
    seen: dict[str, str] = {}
    for item in value:
        name = _text(item, path)
        if name and normalize_name(name) not in seen:
            seen[normalize_name(name)] = name
    return tuple(seen.values())


_NEED_ID_RE = re.compile(r"^need_?\d+$")


def _needs(value: Any, path: str, possible: tuple[str, ...]) -> tuple[Need, ...]:
    block = _normalized(value, path)
    needs = []
    for need_id, body in block.items():
        body = _normalized(body, f"{path}.{need_id}")
        description = _text(body.get("description"), f"{path}.{need_id}.description")
        solution = _text(body.get(SOLUTION_KEY), f"{path}.{need_id}.{SOLUTION_KEY}")
        if not description:
            raise SchemaViolation(f"{path}.{need_id}.description", "missing or empty")
        if not solution:
            raise SchemaViolation(f"{path}.{need_id}.{SOLUTION_KEY}", "missing or empty")
        uses = any(mentions(solution, item) for item in possible)
        needs.append(Need(need_id, description, solution, uses))
    return tuple(needs)


def _find_needs(top: dict, env: dict | None, human: dict | None):
    for block, path in ((human, "human"), (env, "environment"), (top, "$")):
        if block is not None and "needs" in block:
            return block["needs"], f"{path}.needs"
    loose = {k: v for k, v in top.items() if _NEED_ID_RE.match(k)}
    if loose:
        return loose, "$"
    raise SchemaViolation("needs", "no needs block in reply")


def parse_need_report(raw: str, variant: "PromptVariant | str" = PromptVariant.FULL) -> NeedReport:
    """Parse a detection reply into a validated :class:`NeedReport`.

    Raises:
        NoJsonFound: the reply carries no JSON object.
        SchemaViolation: the object does not fit the report schema.
    """
    variant = PromptVariant.parse(variant)
    top = _normalized(extract_json(raw), "$")

    env = top.get("environment")
    env = _normalized(env, "environment") if env is not None else None
    human = None
    if env is not None and "human" in env:
        if "human" in top:
            raise SchemaViolation("human", "given both inside and beside environment")
        human = _normalized(env["human"], "environment.human")
    elif "human" in top:
        human = _normalized(top["human"], "human")

    env_fields = env or {}
    possible = _items(env_fields.get("possible_items", top.get("possible_items")), "environment.possible_items")
    environment = EnvironmentObservation(
        **{k: _text(env_fields.get(k), f"environment.{k}") for k in ENV_TEXT_KEYS},
        objects=_objects(env_fields.get("objects"), "environment.objects"),
        possible_items=possible,
    )

    observation: dict[str, str] = {}
    extra: dict[str, str] = {}
    physical: dict[str, str] = {}
    mental: dict[str, str] = {}
    for key, value in (human or {}).items():
        if key == "needs":
            continue
        text = _text(value, f"human.{key}")
        if key in OBSERVATION_KEYS:
            observation[key] = text
        elif key in PHYSICAL_KEYS:
            physical[key] = text
        elif key in MENTAL_KEYS:
            mental[key] = text
        else:
            extra[key] = text
    human_obs = HumanObservation(**observation, extra=extra)
    state = InternalState(physical=physical, mental=mental)

    needs_value, needs_path = _find_needs(top, env, human)
    needs = _needs(needs_value, needs_path, possible)
    report = NeedReport(environment, human_obs, state, needs, variant, raw)
    validate_report(report)
    return report


def validate_report(report: NeedReport) -> None:
    """Check the structural invariants; which ones apply depends on the prompt variant."""
    if not report.needs:
        raise SchemaViolation("needs", "no needs")
    ids = [n.id for n in report.needs]
    if len(set(ids)) != len(ids):
        raise SchemaViolation("needs", "duplicate need ids")
    if report.variant.expects_environment and not report.environment.objects:
        raise SchemaViolation("environment.objects", "empty")
    if report.variant.uses_atom:
        if report.human.is_empty() and not report.state.physical:
            raise SchemaViolation("human", "no observation fields")
        for key in ("emotion", "intention"):
            if not report.state.mental.get(key):
                raise SchemaViolation(f"human.{key}", "missing")


def report_to_json(report: NeedReport) -> dict[str, Any]:
    """Canonical model-shaped JSON: the human block always nests under environment."""
    env = report.environment
    out: dict[str, Any] = {k: getattr(env, k) for k in ENV_TEXT_KEYS if getattr(env, k)}
    out["objects"] = dict(env.objects)
    out["possible_items"] = {"items": list(env.possible_items)}
    needs = {
        n.id: {"description": n.description, SOLUTION_KEY: n.solution} for n in report.needs
    }
    human: dict[str, Any] = {k: getattr(report.human, k) for k in OBSERVATION_KEYS if getattr(report.human, k)}
    human.update(report.human.extra)
    human.update(report.state.physical)
    human.update(report.state.mental)
    if human:
        human["needs"] = needs
        out["human"] = human
    else:
        out["needs"] = needs
    return {"environment": out}


def report_to_record(report: NeedReport) -> dict[str, Any]:
    return {"variant": report.variant.value, "report": report_to_json(report), "raw_text": report.raw_text}


def report_from_record(record: dict[str, Any]) -> NeedReport:
    text = json.dumps(record["report"], ensure_ascii=False)
    report = parse_need_report(text, record["variant"])
    return NeedReport(
        report.environment, report.human, report.state, report.needs, report.variant,
        record.get("raw_text", ""),
    )


# ---------------------------------------------------------------------------
# action lists


def parse_move_value(value: Any) -> Move:
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, str) for v in value):
        obj, dest = value
    elif isinstance(value, str) and "," in value:
        obj, dest = value.split(",", 1)
    else:
        raise MalformedMoveValue(str(value))
    obj, dest = obj.strip(), dest.strip()
    if not obj or not dest:
        raise MalformedMoveValue(str(value))
    return Move(obj, dest)


def _name(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise SchemaViolation(path, "expected a non-empty object name")
    return value.strip()


def _plan_steps(entry: Any, path: str) -> tuple[ActionPrimitive, ...]:
    if not isinstance(entry, dict):
        raise SchemaViolation(path, "expected an object of actions")
    steps: list[ActionPrimitive] = []
    for key, value in getattr(entry, "pairs", entry.items()):
        op = normalize_keys(key)
        if op == "navigation":
            steps.append(Navigate(_name(value, f"{path}.navigation")))
        elif op == "move":
            steps.append(parse_move_value(value))
        elif op == "use":
            steps.append(Use(_name(value, f"{path}.use")))
        else:
            raise SchemaViolation(f"{path}.{op}", "unknown action key")
    return tuple(steps)


def parse_action_list(raw: str) -> list[ActionPlan]:
    """Parse an action-generation reply into plans, one per top-level key, in source order."""
    top = extract_json(raw)
    plans = []
    for key, entry in top.pairs:
        text = key.strip()
        if not text:
            raise SchemaViolation("$", "empty solution key")
        plans.append(ActionPlan(text, _plan_steps(entry, text[:40])))
    if not plans:
        raise SchemaViolation("$", "no action entries")
    return plans


def _step_pair(step: ActionPrimitive) -> tuple[str, str]:
    if isinstance(step, Navigate):
        return "navigation", step.target
    if isinstance(step, Move):
        return "move", f"{step.object}, {step.destination}"
    return "use", step.object


def dump_action_list(plans: list[ActionPlan]) -> str:
    """Serialize plans in the model's own shape. Repeated action keys are written as-is."""
    dumps = lambda s: json.dumps(s, ensure_ascii=False)  # noqa: E731
    chunks = []
    for plan in plans:
        inner = ",\n".join(f"        {dumps(k)}: {dumps(v)}" for k, v in map(_step_pair, plan.steps))
        chunks.append(f"    {dumps(plan.solution_text)}: {{\n{inner}\n    }}")
    return "{\n" + ",\n".join(chunks) + "\n}\n"


def step_to_dict(step: ActionPrimitive) -> dict[str, str]:
    if isinstance(step, Navigate):
        return {"op": "navigate", "target": step.target}
    if isinstance(step, Move):
        return {"op": "move", "object": step.object, "destination": step.destination}
    return {"op": "use", "object": step.object}


def step_from_dict(data: dict[str, str]) -> ActionPrimitive:
    op = data.get("op")
    if op == "navigate":
        return Navigate(data["target"])
    if op == "move":
        return Move(data["object"], data["destination"])
    if op == "use":
        return Use(data["object"])
    raise SchemaViolation("op", f"unknown primitive {op!r}")


def plan_to_dict(plan: ActionPlan) -> dict[str, Any]:
    return {
        "solution_text": plan.solution_text,
        "source_key": plan.source_key,
        "steps": [step_to_dict(s) for s in plan.steps],
    }


def plan_from_dict(data: dict[str, Any]) -> ActionPlan:
    return ActionPlan(
        data["solution_text"],
        tuple(step_from_dict(s) for s in data["steps"]),
        data.get("source_key", ""),
    )


def solution_key(text: str) -> str:
    """Comparison key for solution sentences: case-folded, whitespace-collapsed, no trailing punctuation."""
    return " ".join(text.casefold().split()).rstrip(" .!;")
