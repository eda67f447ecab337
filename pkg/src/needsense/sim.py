"""Discrete household simulator for Navigate / Move / Use plans.

Space is a graph of named locations; "adjacent to an object" means standing at
the object's location. Perception and motion noise collapse into four
stochastic checkpoints: one scan per Navigate, a grasp and a place per Move,
and one per Use. Navigation itself never fails once the scan succeeded.
"""

from __future__ import annotations

import json
import random
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Sequence

from .errors import (
    GraspFailed,
    GripperOccupied,
    GroundPickup,
    HumanContact,
    NoApproach,
    NoSkill,
    NotAdjacent,
    NotGraspable,
    NotUsable,
    ObjectNotFound,
    PlaceFailed,
    ScanFailed,
    SimError,
    UseFailed,
)
from .model import PERSON, ActionPlan, ActionPrimitive, Move, Navigate, RobotConstraints, Use, step_to_dict
from .names import names_match, normalize_name

HELD = "@gripper"


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    location: str
    on_floor: bool = False
    graspable: bool = True
    usable: bool = False
    use_effect: str | None = None
    category: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("object name must be non-empty")
        if self.usable and not self.use_effect:
            raise ValueError(f"{self.name}: usable objects need a use_effect")


@dataclass(frozen=True)
class NoiseConfig:
    p_scan_fail: float = 0.0
    p_grasp_fail: float = 0.0
    p_place_fail: float = 0.0
    p_use_fail: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_scan_fail", "p_grasp_fail", "p_place_fail", "p_use_fail"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @classmethod
    def parse(cls, text: str) -> "NoiseConfig":
        """Parse ``"scan,grasp,place,use"``; a single value applies to all four."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) == 1:
            parts *= 4
        if len(parts) != 4:
            raise ValueError("noise takes 1 or 4 comma-separated probabilities")
        return cls(*parts)

    @property
    def is_zero(self) -> bool:
        return not any((self.p_scan_fail, self.p_grasp_fail, self.p_place_fail, self.p_use_fail))


@dataclass
class World:
    """Mutable simulator state. One execution owns a World at a time; clone for trials."""

    locations: dict[str, tuple[str, ...]]
    objects: tuple[ObjectSpec, ...]
    human: str
    robot: str
    held: str | None = None
    human_aliases: tuple[str, ...] = (PERSON,)
    rng_seed: int = 0
    skills: dict[str, str] | None = None
    positions: dict[str, str] = field(default_factory=dict)
    states: dict[str, dict[str, bool]] = field(default_factory=dict)
    # set by Navigate, consumed by Move: every grasp starts from a fresh approach pose
    posed: bool = False

    def __post_init__(self) -> None:
        seen = set()
        for obj in self.objects:
            key = normalize_name(obj.name)
            if key in seen:
                raise ValueError(f"duplicate object name {obj.name!r}")
            seen.add(key)
            if obj.location not in self.locations:
                raise ValueError(f"{obj.name}: unknown location {obj.location!r}")
            self.positions.setdefault(obj.name, obj.location)
            self.states.setdefault(obj.name, {})
        for loc in (self.human, self.robot):
            if loc not in self.locations:
                raise ValueError(f"unknown location {loc!r}")
        self._by_name = {o.name: o for o in self.objects}
        self._by_key = {normalize_name(o.name): o for o in self.objects}
        self._component = self._components()
        self._aliases = frozenset(normalize_name(a) for a in self.human_aliases)

    def clone(self) -> "World":
        twin = object.__new__(World)
        twin.__dict__.update(self.__dict__)
        twin.positions = dict(self.positions)
        # inner state dicts are copied on write by _use
        twin.states = dict(self.states)
        return twin

    def spec(self, name: str) -> ObjectSpec:
        return self._by_name[name]

    def is_human(self, name: str) -> bool:
        return normalize_name(name) in self._aliases

    def resolve(self, name: str) -> ObjectSpec:
        """Exact normalized match first, then token-subset match in object order."""
        found = self._by_key.get(normalize_name(name))
        if found is not None:
            return found
        for obj in self.objects:
            if names_match(name, obj.name):
                return obj
        raise ObjectNotFound(name)

    def _components(self) -> dict[str, int]:
        comp: dict[str, int] = {}
        for root in self.locations:
            if root in comp:
                continue
            comp[root] = len(comp)
            frontier = deque([root])
            while frontier:
                here = frontier.popleft()
                for nxt in self.locations.get(here, ()):
                    if nxt not in comp:
                        comp[nxt] = comp[root]
                        frontier.append(nxt)
        return comp

    def reachable(self, start: str, goal: str) -> bool:
        return start == goal or self._component.get(start, -1) == self._component.get(goal, -2)

    def names(self) -> list[str]:
        return sorted(self.positions)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "World":
        objects = tuple(
            ObjectSpec(
                name=o["name"],
                location=o["location"],
                on_floor=o.get("on_floor", False),
                graspable=o.get("graspable", True),
                usable=o.get("usable", False),
                use_effect=o.get("use_effect"),
                category=o.get("category", ""),
            )
            for o in data["objects"]
        )
        locations = {k: tuple(v) for k, v in data["locations"].items()}
        for here, neighbours in list(locations.items()):
            for nxt in neighbours:
                if here not in locations.setdefault(nxt, ()):
                    locations[nxt] = locations[nxt] + (here,)
        return cls(
            locations=locations,
            objects=objects,
            human=data["human"],
            robot=data["robot"],
            human_aliases=tuple(data.get("human_aliases", (PERSON,))),
            rng_seed=data.get("rng_seed", 0),
            skills=data.get("skills"),
        )


# ---------------------------------------------------------------------------
# skills


@lru_cache(maxsize=1)
def similarity_groups() -> tuple[tuple[str, ...], ...]:
    text = resources.files("needsense.data").joinpath("skills.json").read_text("utf-8")
    return tuple(tuple(g) for g in json.loads(text)["groups"])


def retrieve_skill(obj: ObjectSpec, library: dict[str, str],
                   groups: Sequence[Sequence[str]] | None = None) -> str:
    """Demo id for manipulating ``obj``: exact category, else a visually similar one."""
    if not library:
        raise ValueError("skill library is empty")
    category = obj.category or normalize_name(obj.name)
    if category in library:
        return library[category]
    for group in groups if groups is not None else similarity_groups():
        if category in group:
            for other in group:
                if other in library:
                    return library[other]
    raise NoSkill(f"no demonstration covers {obj.name!r} ({category})")


# ---------------------------------------------------------------------------
# execution


def _checkpoint(rng: random.Random | None, p: float, error: type[SimError], what: str) -> None:
    if rng is not None and rng.random() < p:
        raise error(what)


def scan_for(world: World, name: str, noise: NoiseConfig | None = None,
             rng: random.Random | None = None) -> ObjectSpec:
    obj = world.resolve(name)
    if noise is not None:
        _checkpoint(rng or random.Random(world.rng_seed), noise.p_scan_fail, ScanFailed, name)
    return obj


def _navigate(world: World, step: Navigate, noise: NoiseConfig, rng: random.Random | None) -> dict:
    if world.is_human(step.target):
        _checkpoint(rng, noise.p_scan_fail, ScanFailed, step.target)
        goal = world.human
    else:
        obj = scan_for(world, step.target)
        _checkpoint(rng, noise.p_scan_fail, ScanFailed, step.target)
        goal = world.positions[obj.name]
        if goal == HELD:
            goal = world.robot
    if not world.reachable(world.robot, goal):
        raise NotAdjacent(f"{goal} is not reachable from {world.robot}")
    delta = {"robot": [world.robot, goal]}
    world.robot = goal
    world.posed = True
    return delta


def _move(world: World, step: Move, noise: NoiseConfig, rng: random.Random | None,
          constraints: RobotConstraints) -> dict:
    if world.is_human(step.object):
        raise HumanContact(step.object)
    obj = world.resolve(step.object)
    if world.is_human(step.destination):
        dest = world.human
    else:
        target = world.resolve(step.destination)
        dest = world.positions[target.name]
        if target.name == obj.name or dest == HELD:
            raise NotAdjacent(f"cannot move {obj.name} onto itself")
    if obj.on_floor and not constraints.can_reach_floor:
        raise GroundPickup(obj.name)
    if not obj.graspable:
        raise NotGraspable(obj.name)
    if world.held is not None:
        raise GripperOccupied(f"already holding {world.held}")
    if not world.posed:
        raise NoApproach(f"no approach pose before grasping {obj.name}")
    if world.positions[obj.name] != world.robot:
        raise NotAdjacent(f"{obj.name} is at {world.positions[obj.name]}, robot at {world.robot}")
    if world.skills:
        retrieve_skill(obj, world.skills)
    _checkpoint(rng, noise.p_grasp_fail, GraspFailed, obj.name)
    start = world.robot
    world.held = obj.name
    world.positions[obj.name] = HELD
    world.robot = dest
    world.posed = False
    _checkpoint(rng, noise.p_place_fail, PlaceFailed, obj.name)
    world.positions[obj.name] = dest
    world.held = None
    return {"robot": [start, dest], "object": {obj.name: [start, dest]}}


def _use(world: World, step: Use, noise: NoiseConfig, rng: random.Random | None) -> dict:
    if world.is_human(step.object):
        raise HumanContact(step.object)
    obj = world.resolve(step.object)
    if world.positions[obj.name] != world.robot:
        raise NotAdjacent(f"{obj.name} is at {world.positions[obj.name]}, robot at {world.robot}")
    if not obj.usable:
        raise NotUsable(obj.name)
    if world.held is not None:
        raise GripperOccupied(f"already holding {world.held}")
    if world.skills:
        retrieve_skill(obj, world.skills)
    _checkpoint(rng, noise.p_use_fail, UseFailed, obj.name)
    state = dict(world.states[obj.name])
    world.states[obj.name] = state
    key = obj.use_effect or "used"
    state[key] = not state.get(key, False)
    return {"state": {obj.name: {key: state[key]}}}


def execute_primitive(world: World, p: ActionPrimitive, noise: NoiseConfig | None = None,
                      rng: random.Random | None = None,
                      constraints: RobotConstraints | None = None) -> dict:
    """Apply one primitive to ``world`` in place and return the world delta.

    Raises a :class:`SimError` subclass when the primitive cannot run; the
    world may be partially updated (a failed place leaves the object held).
    """
    noise = noise or NoiseConfig()
    if rng is None and not noise.is_zero:
        rng = random.Random(world.rng_seed)
    if isinstance(p, Navigate):
        return _navigate(world, p, noise, rng)
    if isinstance(p, Move):
        return _move(world, p, noise, rng, constraints or RobotConstraints())
    if isinstance(p, Use):
        return _use(world, p, noise, rng)
    raise TypeError(f"not an action primitive: {p!r}")


@dataclass
class StepRecord:
    primitive: ActionPrimitive
    ok: bool
    reason: str | None = None
    detail: str = ""
    delta: dict = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"primitive": step_to_dict(self.primitive),
                               "outcome": "ok" if self.ok else "failed"}
        if not self.ok:
            out["reason"] = self.reason
            out["detail"] = self.detail
        out["delta"] = self.delta
        return out


@dataclass
class ExecTrace:
    steps: list[StepRecord]
    world: World

    @property
    def success(self) -> bool:
        return all(s.ok for s in self.steps)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict(), ensure_ascii=False) + "\n" for s in self.steps)


def _steps(plan: ActionPlan | Sequence[ActionPrimitive]) -> tuple[ActionPrimitive, ...]:
    steps = tuple(plan.steps) if isinstance(plan, ActionPlan) else tuple(plan)
    if not steps:
        raise ValueError("plan must contain at least one primitive")
    return steps


def execute_plan(world: World, plan: ActionPlan | Sequence[ActionPrimitive],
                 noise: NoiseConfig | None = None, seed: int | None = None,
                 constraints: RobotConstraints | None = None) -> ExecTrace:
    """Run a plan on a clone of ``world``, stopping at the first failing step."""
    steps = _steps(plan)
    noise = noise or NoiseConfig()
    state = world.clone()
    rng = random.Random(world.rng_seed if seed is None else seed)
    records = []
    for step in steps:
        try:
            delta = execute_primitive(state, step, noise, rng, constraints)
        except SimError as exc:
            records.append(StepRecord(step, False, exc.reason, str(exc)))
            break
        records.append(StepRecord(step, True, delta=delta))
    return ExecTrace(records, state)


def _trial_seed(seed: int, i: int) -> int:
    return seed * 1_000_003 + i


def _count_successes(world: World, steps: tuple[ActionPrimitive, ...], noise: NoiseConfig,
                     seed: int, start: int, stop: int,
                     constraints: RobotConstraints | None) -> int:
    constraints = constraints or RobotConstraints()
    wins = 0
    for i in range(start, stop):
        state = world.clone()
        rng = random.Random(_trial_seed(seed, i))
        try:
            for step in steps:
                execute_primitive(state, step, noise, rng, constraints)
        except SimError:
            continue
        wins += 1
    return wins


def monte_carlo_success(world: World, plan: ActionPlan | Sequence[ActionPrimitive],
                        noise: NoiseConfig, trials: int, seed: int = 0, jobs: int = 1,
                        constraints: RobotConstraints | None = None) -> float:
    """Fraction of ``trials`` independent seeded executions that succeed.

    Trial ``i`` always uses the same derived seed, so the result does not
    depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    steps = _steps(plan)
    if jobs <= 1 or trials < 2 * jobs:
        return _count_successes(world, steps, noise, seed, 0, trials, constraints) / trials
    bounds = [trials * k // jobs for k in range(jobs + 1)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_count_successes, world, steps, noise, seed, lo, hi, constraints)
            for lo, hi in zip(bounds, bounds[1:])
        ]
        wins = sum(f.result() for f in futures)
    return wins / trials


def pooled_success(counts: Iterable[tuple[int, int]]) -> float:
    """Pool per-task (successes, attempts) into one rate."""
    counts = list(counts)
    total = sum(n for _, n in counts)
    if total == 0:
        raise ValueError("no attempts to pool")
    for wins, n in counts:
        if not 0 <= wins <= n:
            raise ValueError(f"invalid count {wins}/{n}")
    return sum(w for w, _ in counts) / total


def _task_wins(world: World, plans: tuple[tuple[ActionPrimitive, ...], ...], noise: NoiseConfig,
               seed: int, start: int, stop: int, constraints: RobotConstraints | None) -> int:
    constraints = constraints or RobotConstraints()
    wins = 0
    for i in range(start, stop):
        rng = random.Random(_trial_seed(seed, i))
        try:
            for steps in plans:
                state = world.clone()
                for step in steps:
                    execute_primitive(state, step, noise, rng, constraints)
        except SimError:
            continue
        wins += 1
    return wins


def task_trials(world: World, plans: Sequence[ActionPlan | Sequence[ActionPrimitive]], noise: NoiseConfig,
                trials: int, seed: int = 0, constraints: RobotConstraints | None = None) -> tuple[int, int]:
    """(successes, trials) where a trial succeeds only if every plan succeeds.

    Each plan starts from a fresh copy of ``world``; plans within a trial
    share one random stream.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not plans:
        raise ValueError("no plans to execute")
    steps = tuple(_steps(p) for p in plans)
    return _task_wins(world, steps, noise, seed, 0, trials, constraints), trials
