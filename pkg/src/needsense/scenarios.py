"""The sixteen bundled scenarios: metadata plus a simulator world each."""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .model import Scene, ScenarioSpec
from .sim import World

SCENARIO_IDS = tuple(range(1, 17))


class UnknownScenario(ValueError):
    pass


@lru_cache(maxsize=None)
def _raw(scenario_id: int) -> dict:
    if scenario_id not in SCENARIO_IDS:
        raise UnknownScenario(f"unknown scenario {scenario_id}")
    path = resources.files("needsense.data").joinpath("scenarios", f"task_{scenario_id:02d}.json")
    return json.loads(path.read_text("utf-8"))


def load_spec(scenario_id: int) -> ScenarioSpec:
    data = _raw(scenario_id)
    return ScenarioSpec(
        id=data["id"],
        scene=Scene(data["scene"]),
        image_ref=data["image_ref"],
        visible_objects=tuple(data["visible_objects"]),
        auxiliary_objects=tuple(data["auxiliary_objects"]),
        annotation=data.get("annotation", ""),
    )


def load_world(scenario_id: int) -> World:
    """A fresh world; callers may mutate it freely."""
    return World.from_dict(_raw(scenario_id)["world"])


def load_scenario(scenario_id: int) -> tuple[ScenarioSpec, World]:
    return load_spec(scenario_id), load_world(scenario_id)


def scenarios_in(scene: Scene | str) -> list[int]:
    scene = Scene(scene)
    return [i for i in SCENARIO_IDS if _raw(i)["scene"] == scene.value]


def parse_task_selection(text: str) -> list[int]:
    """Parse ``"1..16"``, ``"1,3,5"`` or a mix such as ``"1..4,9"``."""
    chosen: list[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(\d+)\s*\.\.\s*(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise UnknownScenario(f"empty range {part!r}")
            ids: Iterable[int] = range(lo, hi + 1)
        elif part.isdigit():
            ids = [int(part)]
        else:
            raise UnknownScenario(f"cannot parse task selection {part!r}")
        for i in ids:
            if i not in SCENARIO_IDS:
                raise UnknownScenario(f"unknown scenario {i}")
            if i not in chosen:
                chosen.append(i)
    if not chosen:
        raise UnknownScenario("no scenarios selected")
    return chosen
