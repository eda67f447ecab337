"""Chat-with-image completion client with a remote and a replay backend.

The replay backend is the reproducibility anchor: it serves stored model
replies keyed by (scenario, variant) and never touches the network.
"""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .errors import FixtureMissing, RateLimited, Timeout, TransportError
from .model import PromptVariant

log = logging.getLogger(__name__)

API_KEY_ENV = "NEEDSENSE_API_KEY"
DEFAULT_MAX_IN_FLIGHT = 4


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    image_ref: str | None = None
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    # replay lookup key; the remote backend ignores both
    scenario_id: int | None = None
    variant: PromptVariant | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 1 <= self.max_retries <= 5:
            raise ValueError("max_retries must be in 1..5")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend: str
    latency: float = 0.0


class Backend(Protocol):
    name: str

    def complete(self, request: ChatRequest) -> ChatResponse: ...


def fixture_root() -> Path:
    return Path(str(resources.files("needsense.data").joinpath("fixtures")))


def fixture_path(root: Path, scenario_id: int, variant: PromptVariant) -> Path:
    folder = root / f"task_{scenario_id:02d}"
    if variant is PromptVariant.FULL:
        return folder / "needs.json"
    if variant is PromptVariant.ACTION_GENERATION:
        return folder / "actions.json"
    return folder / f"{variant.value}.json"


class ReplayBackend:
    """Returns stored replies verbatim. Read-only, safe to share across threads."""

    name = "replay"

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else fixture_root()

    def has_fixture(self, scenario_id: int, variant: PromptVariant) -> bool:
        return fixture_path(self.root, scenario_id, variant).is_file()

    def complete(self, request: ChatRequest) -> ChatResponse:
        if request.scenario_id is None or request.variant is None:
            raise FixtureMissing(request.scenario_id, request.variant)
        variant = PromptVariant.parse(request.variant)
        path = fixture_path(self.root, request.scenario_id, variant)
        if not path.is_file():
            raise FixtureMissing(request.scenario_id, variant.value)
        return ChatResponse(path.read_text("utf-8"), self.name, 0.0)


def encode_image(image_ref: str, inline: bool) -> str:
    """URL for the image part: the reference itself, or a base64 data URL."""
    if not inline or image_ref.startswith(("http://", "https://", "data:")):
        return image_ref
    path = Path(image_ref)
    if not path.is_file():
        raise TransportError(f"image not found: {image_ref}")
    mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
    return f"data:{mime};base64,{base64.b64encode(path.read_bytes()).decode('ascii')}"


def build_payload(request: ChatRequest, model: str, inline_images: bool) -> dict[str, Any]:
    """Chat-completion body: ordered role/content messages with at most one image part."""
    messages: list[dict[str, Any]] = []
    if request.system_text:
        messages.append({"role": "system", "content": request.system_text})
    content: list[dict[str, Any]] = [{"type": "text", "text": request.user_text}]
    if request.image_ref:
        url = encode_image(request.image_ref, inline_images)
        content.append({"type": "image_url", "image_url": {"url": url}})
    messages.append({"role": "user", "content": content})
    return {"model": model, "temperature": request.temperature, "messages": messages}


class RemoteBackend:
    """OpenAI-style chat-completions endpoint with exponential backoff.

    ``max_retries`` on the request is the total number of attempts; each
    failure waits ``backoff * 2**attempt`` seconds before the next one.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str = "gpt-4-vision-preview",
        *,
        inline_images: bool = True,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        api_key: str | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.inline_images = inline_images
        self.backoff = backoff
        self.client = client or httpx.Client()
        self.sleep = sleep
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")

    def _attempt(self, payload: dict[str, Any], timeout: float) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(self.endpoint, json=payload, headers=headers, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimited(f"rate limited by {self.endpoint}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.endpoint}")
        try:
            text = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {exc}") from exc
        if not isinstance(text, str) or not text.strip():
            raise TransportError("empty completion")
        return text

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = build_payload(request, self.model, self.inline_images)
        started = time.perf_counter()
        last: Exception | None = None
        for attempt in range(request.max_retries):
            try:
                text = self._attempt(payload, request.timeout)
            except (Timeout, RateLimited, TransportError) as exc:
                last = exc
                log.warning("attempt %d/%d failed: %s", attempt + 1, request.max_retries, exc)
                if attempt + 1 < request.max_retries:
                    self.sleep(self.backoff * 2**attempt)
                continue
            return ChatResponse(text, self.name, time.perf_counter() - started)
        assert last is not None
        raise last


@dataclass
class Gateway:
    """Shareable front door; caps concurrent in-flight requests."""

    backend: Backend
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._slots = threading.BoundedSemaphore(self.max_in_flight)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._slots:
            return self.backend.complete(request)


def make_gateway(backend: str, *, endpoint: str | None = None, fixtures: str | Path | None = None,
                 max_in_flight: int = DEFAULT_MAX_IN_FLIGHT, model: str | None = None) -> Gateway:
    if backend == "replay":
        return Gateway(ReplayBackend(fixtures), max_in_flight)
    if backend == "remote":
        if not endpoint:
            raise ValueError("remote backend needs an endpoint URL")
        kwargs = {"model": model} if model else {}
        return Gateway(RemoteBackend(endpoint, **kwargs), max_in_flight)
    raise ValueError(f"unknown backend {backend!r}")
