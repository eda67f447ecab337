"""Response segmentation and sentence embeddings (local hashed or remote)."""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, Sequence

import httpx
import numpy as np

from ..errors import DimensionMismatch, ProviderError

DEFAULT_DELIMITERS = ".;!?。；！？、"
LOCAL_DIM = 384

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def segment(raw: str, delimiters: str = DEFAULT_DELIMITERS) -> list[str]:
    """Split a free-text response into units at punctuation; trims and drops empties."""
    if not raw:
        return []
    pattern = "[" + re.escape(delimiters) + "]"
    return [part.strip() for part in re.split(pattern, raw) if part.strip()]


class Embedder(Protocol):
    name: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _bucket(token: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    return value % dim, (1.0 if (value >> 63) & 1 == 0 else -1.0)


class HashingEmbedder:
    """Deterministic bag-of-tokens embedding: signed token hashing, then L2 normalization.

    Stable across processes and platforms because it uses blake2b, not ``hash()``.
    """

    name = "local"

    def __init__(self, dim: int = LOCAL_DIM):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def vector(self, text: str) -> np.ndarray:
        acc = np.zeros(self.dim)
        for token in _TOKEN_RE.findall(text.lower()):
            idx, sign = _bucket(token, self.dim)
            acc[idx] += sign
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            raise ProviderError(f"text has no embeddable tokens: {text!r}")
        return acc / norm

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.vector(t) for t in texts])


class RemoteEmbedder:
    """Embedding endpoint speaking the common ``{"input": [...]} -> {"data": [{"embedding": [...]}]}`` shape."""

    name = "remote"

    def __init__(self, endpoint: str, model: str = "paraphrase-multilingual-MiniLM-L12-v2",
                 client: httpx.Client | None = None, timeout: float = 60.0, api_key: str = ""):
        self.endpoint = endpoint
        self.model = model
        self.client = client or httpx.Client()
        self.timeout = timeout
        self.api_key = api_key

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ProviderError("nothing to embed")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(self.endpoint, json={"model": self.model, "input": list(texts)},
                                    headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            rows = [item["embedding"] for item in resp.json()["data"]]
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        if len(rows) != len(texts):
            raise ProviderError(f"asked for {len(texts)} embeddings, got {len(rows)}")
        return stack_uniform(rows)


def stack_uniform(rows: Sequence[Sequence[float]]) -> np.ndarray:
    dims = {len(r) for r in rows}
    if len(dims) > 1:
        raise DimensionMismatch(f"embedding dimensions differ: {sorted(dims)}")
    return np.asarray(rows, dtype=float)
