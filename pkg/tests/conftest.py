from __future__ import annotations

import json
from pathlib import Path

import pytest

from needsense.gateway import fixture_root
from needsense.model import parse_action_list, parse_need_report

SNAPSHOTS = Path(__file__).parent / "snapshots"
TASKS = tuple(range(1, 17))


def needs_text(task: int) -> str:
    return (fixture_root() / f"task_{task:02d}" / "needs.json").read_text("utf-8")


def actions_text(task: int) -> str:
    return (fixture_root() / f"task_{task:02d}" / "actions.json").read_text("utf-8")


def fixture_report(task: int):
    return parse_need_report(needs_text(task))


def fixture_plans(task: int):
    return parse_action_list(actions_text(task))


def load_snapshot(name: str):
    path = SNAPSHOTS / name
    if path.suffix == ".json":
        return json.loads(path.read_text("utf-8"))
    return path.read_text("utf-8")


class ScriptedGateway:
    """Returns canned replies in order (the last one repeats) and records every request."""

    def __init__(self, *replies: str):
        self.replies = list(replies)
        self.requests = []

    def complete(self, request):
        from needsense.gateway import ChatResponse

        self.requests.append(request)
        text = self.replies[min(len(self.requests), len(self.replies)) - 1]
        return ChatResponse(text, "scripted")


@pytest.fixture
def scripted():
    return ScriptedGateway
