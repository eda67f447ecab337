"""Verbatim prompt assets and the action-request renderer."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .errors import ChecksumMismatch, EmptySolutions, UnknownVariant
from .model import PromptVariant

__all__ = [
    "PromptAsset",
    "PromptVariant",
    "ablation_cell",
    "build_manifest",
    "get_prompt",
    "render_action_request",
]


@dataclass(frozen=True)
class PromptAsset:
    variant: PromptVariant
    text: str
    checksum: str


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def checksum(text: str) -> str:
    return hashlib.sha256(normalize_whitespace(text).encode("utf-8")).hexdigest()


def _prompt_dir():
    return resources.files("needsense.data").joinpath("prompts")


def build_manifest() -> dict[str, str]:
    """Checksums of every prompt file currently on disk, keyed by variant name."""
    return {v.value: checksum(_prompt_dir().joinpath(f"{v.value}.txt").read_text("utf-8")) for v in PromptVariant}


@lru_cache(maxsize=None)
def _load(variant: PromptVariant) -> PromptAsset:
    text = _prompt_dir().joinpath(f"{variant.value}.txt").read_text("utf-8").strip()
    manifest = json.loads(_prompt_dir().joinpath("manifest.json").read_text("utf-8"))
    digest = checksum(text)
    if manifest.get(variant.value) != digest:
        raise ChecksumMismatch(f"prompt {variant.value} does not match its manifest checksum")
    return PromptAsset(variant, text, digest)


def get_prompt(variant: PromptVariant | str) -> PromptAsset:
    return _load(PromptVariant.parse(variant))


def ablation_cell(variant: PromptVariant | str) -> tuple[bool, bool]:
    """(uses AToM, uses constraints) for a detection variant."""
    variant = PromptVariant.parse(variant)
    if not variant.is_detection:
        raise UnknownVariant(f"{variant.value} is not a detection variant")
    return variant.uses_atom, variant.uses_constraints


def render_action_request(solutions: Sequence[str]) -> str:
    """Action-generation prompt followed by one ``solution requirement N:`` line per solution."""
    if not solutions:
        raise EmptySolutions("at least one solution is required")
    lines = [get_prompt(PromptVariant.ACTION_GENERATION).text, ""]
    lines += [f"solution requirement {i}: {text.strip()}" for i, text in enumerate(solutions, 1)]
    return "\n".join(lines)
