"""Chat-completion gateway: one interface over live HTTP, replay, and scripted backends."""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import httpx

from .core import canonical_json, sha256_text

API_KEY_ENV = "AUTOVERIFIX_API_KEY"


class GatewayError(Exception):
    pass


class AuthError(GatewayError):
    pass


class ProtocolError(GatewayError):
    """Non-retryable 4xx-class failure."""


class TransientError(GatewayError):
    """Retryable transport or rate-limit failure."""


class TruncatedResponseError(GatewayError):
    """The model stopped at the token limit; truncated code is never used."""


class ReplayMissError(GatewayError):
    def __init__(self, digest: str):
        super().__init__(f"no transcript entry for request digest {digest}")
        self.digest = digest


class NoCodeBlockError(GatewayError):
    pass


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.8
    max_tokens: int = 4096
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.messages[0].role is Role.ASSISTANT:
            raise ValueError("first message must be system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: FinishReason = FinishReason.STOP
    usage: dict[str, int] = field(default_factory=dict)


def request_digest(request: ChatRequest) -> str:
    """Content-address a request by model id and messages only.

    Temperature and seed are deliberately excluded so recorded transcripts
    survive sampling-config tweaks.
    """
    payload = {
        "model": request.model,
        "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
    }
    return sha256_text(canonical_json(payload))


class LiveBackend:
    """HTTP backend speaking the common chat-completions wire format."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout_s: float = 120.0):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise AuthError(f"no API key: set the {API_KEY_ENV} environment variable")
        self._base_url = base_url.rstrip("/")
        self._key = key
        self._client = httpx.Client(timeout=timeout_s)

    def send(self, request: ChatRequest) -> ChatResponse:
        body: dict[str, Any] = {
            "model": request.model,
            "messages": [{"role": m.role.value, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        try:
            resp = self._client.post(
                self._base_url + "/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self._key}"},
            )
        except httpx.HTTPError as e:
            raise TransientError(f"transport failure: {e}") from e
        if resp.status_code == 401 or resp.status_code == 403:
            raise AuthError(f"auth failure: HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise TransientError("rate limited (HTTP 429)")
        if resp.status_code >= 500:
            raise TransientError(f"server error: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        data = resp.json()
        try:
            choice = data["choices"][0]
            content = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError):
            raise ProtocolError(f"malformed completion payload: {resp.text[:500]}") from None
        usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}
        reason = FinishReason.LENGTH if finish == "length" else FinishReason.STOP
        return ChatResponse(content=content, finish_reason=reason, usage=usage)


class ReplayBackend:
    """Serves recorded responses keyed by request digest. Pure and deterministic."""

    def __init__(self, transcript_path: str | Path):
        self._entries: dict[str, str] = {}
        path = Path(transcript_path)
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            # first occurrence wins so replays are stable under re-recording
            self._entries.setdefault(entry["digest"], entry["response"])

    def send(self, request: ChatRequest) -> ChatResponse:
        digest = request_digest(request)
        if digest not in self._entries:
            raise ReplayMissError(digest)
        return ChatResponse(content=self._entries[digest])


class RecordingBackend:
    """Proxies another backend and appends {digest, response} transcript lines."""

    def __init__(self, inner, transcript_path: str | Path):
        self._inner = inner
        self._path = Path(transcript_path)

    def send(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.send(request)
        line = canonical_json({"digest": request_digest(request), "response": response.content})
        with self._path.open("a") as fh:
            fh.write(line + "\n")
        return response


class ScriptedBackend:
    """Test double fed a fixed sequence of responses (or exceptions)."""

    def __init__(self, script: list[str | Exception | ChatResponse] | None = None):
        self._script = list(script or [])
        self.calls: list[ChatRequest] = []

    def push(self, item: str | Exception | ChatResponse) -> None:
        self._script.append(item)

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        if not self._script:
            raise GatewayError("scripted backend exhausted")
        item = self._script.pop(0)
        if isinstance(item, Exception):
            raise item
        if isinstance(item, ChatResponse):
            return item
        return ChatResponse(content=item)


class ChatGateway:
    """Retry wrapper around a backend; the handle every stage talks to.

    Transient failures are retried with exponential backoff; 4xx-class
    protocol and auth errors are not. A length-truncated completion raises
    rather than flowing downstream.
    """

    def __init__(self, backend, retries: int = 3, backoff_s: float = 0.5, sleep: Callable[[float], None] = time.sleep):
        self._backend = backend
        self._retries = retries
        self._backoff_s = backoff_s
        self._sleep = sleep
        self.last_attempts = 0

    def complete(self, request: ChatRequest) -> ChatResponse:
        attempts = 0
        delay = self._backoff_s
        while True:
            attempts += 1
            self.last_attempts = attempts
            try:
                response = self._backend.send(request)
            except TransientError:
                if attempts > self._retries:
                    raise
                self._sleep(delay)
                delay *= 2
                continue
            if response.finish_reason is FinishReason.LENGTH:
                raise TruncatedResponseError("completion truncated at max_tokens")
            return response


_FENCE_RE = re.compile(r"^```([^\n`]*)\n(.*?)^```[ \t]*$", re.MULTILINE | re.DOTALL)

_TAG_ALIASES = {
    "python": {"python", "py", "python3"},
    "verilog": {"verilog", "v", "systemverilog", "sv"},
    "json": {"json"},
}


def _fences(text: str) -> list[tuple[str, str]]:
    return [(m.group(1).strip().lower(), m.group(2)) for m in _FENCE_RE.finditer(text)]


def _normalize(body: str) -> str:
    return body.rstrip("\n") + "\n"


def extract_code_block(response: str, tag: str) -> str:
    """Contents of the first fenced block with a matching language tag.

    Tag-less fences are accepted as a fallback; the result carries exactly
    one trailing newline and no fence markers.
    """
    aliases = _TAG_ALIASES.get(tag, {tag})
    blocks = _fences(response)
    for block_tag, body in blocks:
        if block_tag in aliases:
            return _normalize(body)
    for block_tag, body in blocks:
        if block_tag == "":
            return _normalize(body)
    raise NoCodeBlockError(f"no {tag} code block in response")


def extract_code_blocks(response: str, tag: str) -> list[str]:
    """All matching fenced blocks, in order (tag-less included as fallback pool)."""
    aliases = _TAG_ALIASES.get(tag, {tag})
    blocks = _fences(response)
    matched = [_normalize(body) for block_tag, body in blocks if block_tag in aliases]
    if matched:
        return matched
    return [_normalize(body) for block_tag, body in blocks if block_tag == ""]
