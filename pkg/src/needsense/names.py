"""Object-name normalization and token matching shared by the parser, simulator and rules."""

from __future__ import annotations

import re
from functools import lru_cache

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Function words and vague locatives that models attach to object names
# ("nearby shelf", "closer to the stove", "pantry or fridge").
STOPWORDS = frozenset(
    {
        "a", "an", "the", "to", "of", "or", "and", "in", "on", "at", "for",
        "from", "with", "by", "into", "onto", "some", "any", "nearby", "near",
        "closer", "close", "next", "its", "their", "his", "her", "my", "your",
    }
)


@lru_cache(maxsize=4096)
def normalize_name(name: str) -> str:
    """Case-, space- and underscore-insensitive form of an object name."""
    name = name.lower().replace("'s ", " ").replace("_", " ").replace("-", " ")
    if name.endswith("'s"):
        name = name[:-2]
    return " ".join(name.split())


def singular(token: str) -> str:
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


@lru_cache(maxsize=4096)
def name_tokens(name: str) -> frozenset[str]:
    """Content tokens of a name, singularized, stopwords removed."""
    words = _TOKEN_RE.findall(normalize_name(name))
    return frozenset(singular(w) for w in words if w not in STOPWORDS)


def text_tokens(text: str) -> list[str]:
    """All lowercase word tokens of free text, in order (no stopword removal)."""
    return _TOKEN_RE.findall(text.lower().replace("_", " "))


def names_match(query: str, candidate: str) -> bool:
    """Token-subset match in either direction ("water_bottle" ~ "water bottle")."""
    q, c = name_tokens(query), name_tokens(candidate)
    if not q or not c:
        return False
    return q <= c or c <= q


def mentions(text: str, name: str) -> bool:
    """True when every content token of ``name`` occurs in ``text``."""
    tokens = name_tokens(name)
    if not tokens:
        return False
    present = {singular(t) for t in text_tokens(text)}
    return tokens <= present
