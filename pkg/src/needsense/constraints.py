"""Embodiment rules applied to solution text and to decomposed plans.

Findings are values, not exceptions: every check returns a (possibly empty)
list of :class:`Violation` in a stable order.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Sequence

from .errors import ObjectNotFound, QuotaNotMet
from .model import ActionPlan, EnvironmentObservation, Move, Navigate, NeedReport, RobotConstraints, Use
from .names import names_match, normalize_name, singular
from .sim import World


class Code(str, enum.Enum):
    GROUND_PICKUP = "GroundPickup"
    SECOND_ARM_NEEDED = "SecondArmNeeded"
    VERBAL_SOLUTION = "VerbalSolution"
    FORBIDDEN_DEVICE = "ForbiddenDevice"
    NO_ACTION = "NoAction"
    UNKNOWN_OBJECT = "UnknownObject"
    HUMAN_CONTACT = "HumanContact"


@dataclass(frozen=True)
class Violation:
    code: Code
    subject: str
    detail: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code.value, "subject": self.subject, "detail": self.detail}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Violation":
        return cls(Code(data["code"]), data["subject"], data.get("detail", ""))


@dataclass(frozen=True)
class Lexicon:
    verbal_verbs: frozenset[str]
    action_verbs: frozenset[str]
    # class name -> tuple of token sequences naming it
    device_classes: dict[str, tuple[tuple[str, ...], ...]]
    function_words: frozenset[str]
    device_parts: frozenset[str]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Lexicon":
        devices = {
            name: tuple(tuple(s.lower().split()) for s in synonyms)
            for name, synonyms in data["device_classes"].items()
        }
        return cls(
            verbal_verbs=frozenset(data["verbal_verbs"]),
            action_verbs=frozenset(data["action_verbs"]),
            device_classes=devices,
            function_words=frozenset(data.get("function_words", ())),
            device_parts=frozenset(data.get("device_parts", ())),
        )


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    text = resources.files("needsense.data").joinpath("rules", "lexicon.json").read_text("utf-8")
    return Lexicon.from_dict(json.loads(text))


_WORD_OR_PUNCT = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def _tokens(text: str) -> list[str]:
    return _WORD_OR_PUNCT.findall(text.lower().replace("_", " ").replace("-", " "))


def _stems(token: str) -> set[str]:
    """Crude inflection stripping, enough for verb lists ("fetching", "placed")."""
    out = {token, singular(token)}
    for suffix, repl in (("ing", ""), ("ing", "e"), ("ed", ""), ("ed", "e"), ("es", ""), ("s", "")):
        if token.endswith(suffix) and len(token) - len(suffix) >= 2:
            out.add(token[: -len(suffix)] + repl)
    return out


def _has_any(tokens: Iterable[str], vocab: frozenset[str]) -> str | None:
    for tok in tokens:
        if _stems(tok) & vocab:
            return tok
    return None


def _masked(tokens: list[str], names: Iterable[str], devices: set[str]) -> list[str]:
    """Blank out object names that merely contain a device word as a modifier ("phone stand")."""
    out = list(tokens)
    for name in names:
        seq = _tokens(normalize_name(name))
        if len(seq) < 2 or not any(singular(t) in devices for t in seq[:-1]):
            continue
        for i in range(len(out) - len(seq) + 1):
            if out[i : i + len(seq)] == seq:
                out[i : i + len(seq)] = [""] * len(seq)
    return out


def _forbidden_devices(tokens: list[str], constraints: RobotConstraints, lex: Lexicon) -> list[str]:
    found: list[str] = []
    for cls in sorted(constraints.forbidden_device_classes):
        patterns = lex.device_classes.get(cls, ((cls,),))
        for pattern in sorted(patterns, key=len, reverse=True):
            n = len(pattern)
            for i in range(len(tokens) - n + 1):
                window = [singular(t) for t in tokens[i : i + n]]
                if window != [singular(p) for p in pattern]:
                    continue
                nxt = tokens[i + n] if i + n < len(tokens) else None
                # the device must be the head noun; "phone stand" is a stand
                is_head = nxt is None or not nxt[0].isalnum() or nxt in lex.function_words or nxt in lex.device_parts
                if is_head and cls not in found:
                    found.append(cls)
    return found


def check_solution(solution: str, env: EnvironmentObservation | None = None,
                   constraints: RobotConstraints | None = None,
                   lexicon: Lexicon | None = None) -> list[Violation]:
    """Token-level findings for one solution sentence."""
    constraints = constraints or RobotConstraints()
    lex = lexicon or default_lexicon()
    tokens = _tokens(solution)
    words = [t for t in tokens if t[0].isalnum()]
    findings: list[Violation] = []

    physical = _has_any(words, lex.action_verbs)
    verbal = _has_any(words, lex.verbal_verbs)
    if verbal and not physical and not constraints.verbal_allowed:
        findings.append(Violation(Code.VERBAL_SOLUTION, verbal, "verbal-only solution"))

    device_words = {singular(w) for pats in lex.device_classes.values() for p in pats for w in p}
    names = list(env.objects) + list(env.possible_items) if env is not None else []
    for cls in _forbidden_devices(_masked(tokens, names, device_words), constraints, lex):
        findings.append(Violation(Code.FORBIDDEN_DEVICE, cls, f"solution interacts with a {cls}"))

    if not physical and not (verbal and not constraints.verbal_allowed):
        findings.append(Violation(Code.NO_ACTION, solution.strip()[:60], "no action verb"))
    return findings


def _named(world: World, name: str, possible_items: Sequence[str]) -> bool:
    if world.is_human(name):
        return True
    try:
        world.resolve(name)
        return True
    except ObjectNotFound:
        return any(names_match(name, item) for item in possible_items)


def check_plan(plan: ActionPlan, world: World, constraints: RobotConstraints | None = None,
               possible_items: Sequence[str] = ()) -> list[Violation]:
    """Static findings for a plan against a scenario world. Does not execute it."""
    constraints = constraints or RobotConstraints()
    findings: list[Violation] = []
    approached = False
    for step in plan.steps:
        names: list[str]
        if isinstance(step, Navigate):
            names = [step.target]
        elif isinstance(step, Move):
            names = [step.object, step.destination]
        else:
            names = [step.object]
        for name in names:
            if not _named(world, name, possible_items):
                findings.append(Violation(Code.UNKNOWN_OBJECT, name, "not in scenario inventory or possible items"))

        if isinstance(step, Navigate):
            approached = True
        elif isinstance(step, Move):
            if world.is_human(step.object):
                findings.append(Violation(Code.HUMAN_CONTACT, step.object, "cannot grasp the person"))
                continue
            if constraints.arm_count < 2 and not approached:
                findings.append(Violation(Code.SECOND_ARM_NEEDED, step.object,
                                          "grasp while the single gripper is still committed to the previous move"))
            approached = False
            try:
                obj = world.resolve(step.object)
            except ObjectNotFound:
                continue
            if obj.on_floor and not constraints.can_reach_floor:
                findings.append(Violation(Code.GROUND_PICKUP, obj.name, "object rests on the floor"))
        elif isinstance(step, Use) and world.is_human(step.object):
            findings.append(Violation(Code.HUMAN_CONTACT, step.object, "use target is the person"))
    return findings


def check_quota(report: NeedReport, needs: int = 6, possible: int = 3) -> None:
    """Strict-mode check of the full prompt's "6 needs, 3 from possible items" request."""
    have = len(report.needs)
    using = sum(1 for n in report.needs if n.uses_possible_item)
    if have < needs or using < possible:
        raise QuotaNotMet(f"{have} needs ({needs} required), {using} use possible items ({possible} required)")
