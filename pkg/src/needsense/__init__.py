"""Proactive need detection for a one-armed mobile robot: prompting, parsing, constraint
checking, plan execution in a discrete household simulator, and response evaluation."""

from __future__ import annotations

__version__ = "0.1.0"
