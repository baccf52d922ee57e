"""Completion providers: live chat-completions HTTP, scripted cassettes, record/replay."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence

import httpx

from .dialogue import estimate_tokens

log = logging.getLogger(__name__)

SPEAKERS = ("system", "user", "assistant")
RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})

POLICY_KEY_ENV = "ORCH_POLICY_API_KEY"
EXECUTOR_KEY_ENV = "ORCH_EXEC_API_KEY"

EXECUTOR_PROMPT_TEMPLATE = (
    "You are {agent_role}. Please read the provided content (including previous conversations "
    "and the current task) and help the user complete the task or answer the question."
)


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    pass


class WireFormatError(BackendError):
    pass


class CassetteMismatch(BackendError):
    pass


class CassetteExhausted(CassetteMismatch):
    pass


@dataclass(frozen=True)
class ChatMessage:
    speaker: str
    content: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"unknown speaker {self.speaker!r}")
        if self.content is None:
            raise ValueError("content must be defined")

    def to_wire(self) -> dict:
        return {"role": self.speaker, "content": self.content}


@dataclass(frozen=True)
class CompletionResult:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    token_logprobs: Optional[tuple[tuple[str, float], ...]] = None

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.token_logprobs is not None and len(self.token_logprobs) != self.completion_tokens:
            raise ValueError("token_logprobs length must equal completion_tokens")

    @property
    def logprob_values(self) -> Optional[list[float]]:
        if self.token_logprobs is None:
            return None
        return [lp for _, lp in self.token_logprobs]


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    logprobs: bool = False
    seed: Optional[int] = None


class BackendHandle(Protocol):
    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> CompletionResult: ...


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    for m in messages[1:]:
        if m.speaker == "system":
            raise ValueError("a system message may only appear first")


def complete(handle: BackendHandle, messages: Sequence[ChatMessage], params: SamplingParams = SamplingParams()) -> CompletionResult:
    _check_messages(messages)
    return handle.complete(messages, params)


def executor_system_prompt(agent_role: str) -> str:
    if not agent_role or not agent_role.strip():
        raise ValueError("agent_role must be non-empty")
    return EXECUTOR_PROMPT_TEMPLATE.format(agent_role=agent_role)


def fingerprint(messages: Iterable[ChatMessage]) -> str:
    canon = json.dumps(
        [[m.speaker, m.content] for m in messages], ensure_ascii=True, separators=(",", ":")
    )
    return hashlib.sha256(canon.encode("ascii")).hexdigest()


# --- live HTTP -------------------------------------------------------------


class HttpChatBackend:
    """Chat-completions client with exponential backoff on transient failures.

    The API key is read from the environment variable named by ``api_key_env``;
    keys are never accepted as literal config values.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: Optional[str] = None,
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        timeout: float = 120.0,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            else:
                log.warning("environment variable %s is not set; sending no API key", api_key_env)
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _body(self, messages: Sequence[ChatMessage], params: SamplingParams) -> dict:
        body = {
            "model": self.model,
            "messages": [m.to_wire() for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.logprobs:
            body["logprobs"] = True
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams = SamplingParams()) -> CompletionResult:
        _check_messages(messages)
        body = self._body(messages, params)
        last_exc: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
            try:
                resp = self._client.post(self.url, json=body)
            except httpx.TransportError as exc:
                last_exc = exc
                log.warning("transport error on attempt %d: %s", attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_exc = TransportError(f"HTTP {resp.status_code}")
                log.warning("HTTP %d on attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return parse_chat_response(resp.content)
        raise TransportError(f"giving up after {self.max_attempts} attempts: {last_exc}")


def parse_chat_response(raw: bytes | str) -> CompletionResult:
    try:
        data = json.loads(raw)
        choice = data["choices"][0]
        content = choice["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise WireFormatError(f"malformed chat-completions response: {exc}") from None
    if not isinstance(content, str):
        raise WireFormatError("message content is not a string")
    usage = data.get("usage") or {}
    prompt_tokens = int(usage.get("prompt_tokens", 0))
    completion_tokens = int(usage.get("completion_tokens", 0))
    logprobs = None
    lp = choice.get("logprobs")
    if isinstance(lp, dict) and isinstance(lp.get("content"), list):
        logprobs = tuple((str(t.get("token", "")), float(t["logprob"])) for t in lp["content"])
        # usage counts can disagree with the logprob list (e.g. stop tokens); trust the list
        completion_tokens = len(logprobs)
    return CompletionResult(content, prompt_tokens, completion_tokens, logprobs)


# --- cassettes -------------------------------------------------------------


@dataclass
class CassetteEntry:
    content: str
    fingerprint: str = ""
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None
    token_logprobs: Optional[list[tuple[str, float]]] = None

    def to_dict(self) -> dict:
        d = {
            "fingerprint": self.fingerprint,
            "content": self.content,
            "prompt_tokens": self.prompt_tokens or 0,
            "completion_tokens": self.completion_tokens or 0,
        }
        if self.token_logprobs is not None:
            d["token_logprobs"] = [[t, lp] for t, lp in self.token_logprobs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CassetteEntry":
        lps = d.get("token_logprobs")
        return cls(
            content=d["content"],
            fingerprint=d.get("fingerprint", ""),
            prompt_tokens=d.get("prompt_tokens"),
            completion_tokens=d.get("completion_tokens"),
            token_logprobs=[(str(t), float(lp)) for t, lp in lps] if lps is not None else None,
        )


@dataclass
class Cassette:
    entries: list[CassetteEntry] = field(default_factory=list)
    strict: bool = False

    @classmethod
    def load(cls, path: str | os.PathLike, strict: bool = False) -> "Cassette":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entries.append(CassetteEntry.from_dict(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad cassette entry: {exc}") from None
        return cls(entries, strict)

    def dump(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")


class CassetteBackend:
    """Replays canned completions in order.

    In strict mode each request's fingerprint must equal the next entry's.
    Non-strict mode plays entries back sequentially, which is what hand-authored
    scripts need.
    """

    def __init__(self, cassette: Cassette):
        self.cassette = cassette
        self._pos = 0
        self._lock = threading.Lock()

    @classmethod
    def scripted(cls, contents: Sequence[str]) -> "CassetteBackend":
        return cls(Cassette([CassetteEntry(c) for c in contents]))

    @classmethod
    def from_file(cls, path: str | os.PathLike, strict: bool = False) -> "CassetteBackend":
        return cls(Cassette.load(path, strict))

    @property
    def remaining(self) -> int:
        return len(self.cassette.entries) - self._pos

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams = SamplingParams()) -> CompletionResult:
        _check_messages(messages)
        with self._lock:
            if self._pos >= len(self.cassette.entries):
                raise CassetteExhausted(f"cassette exhausted after {self._pos} entries")
            entry = self.cassette.entries[self._pos]
            if self.cassette.strict:
                fp = fingerprint(messages)
                if fp != entry.fingerprint:
                    raise CassetteMismatch(
                        f"entry {self._pos}: request fingerprint {fp[:12]} != recorded {entry.fingerprint[:12]}"
                    )
            self._pos += 1
        prompt_tokens = entry.prompt_tokens
        if prompt_tokens is None:
            prompt_tokens = sum(estimate_tokens(m.content) for m in messages)
        lps = tuple(entry.token_logprobs) if entry.token_logprobs is not None else None
        completion_tokens = entry.completion_tokens
        if lps is not None:
            completion_tokens = len(lps)
        elif completion_tokens is None:
            completion_tokens = estimate_tokens(entry.content)
        return CompletionResult(entry.content, prompt_tokens, completion_tokens, lps)


class RecordingBackend:
    """Forwards to ``inner`` and appends every exchange to a cassette file."""

    def __init__(self, inner: BackendHandle, path: str | os.PathLike):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams = SamplingParams()) -> CompletionResult:
        result = self.inner.complete(messages, params)
        entry = CassetteEntry(
            content=result.content,
            fingerprint=fingerprint(messages),
            prompt_tokens=result.prompt_tokens,
            completion_tokens=result.completion_tokens,
            token_logprobs=list(result.token_logprobs) if result.token_logprobs is not None else None,
        )
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
        return result


def record_or_replay(inner: Optional[BackendHandle], path: str | os.PathLike, strict: bool = True) -> BackendHandle:
    """Replay ``path`` if it exists, otherwise record ``inner`` into it."""
    path = Path(path)
    if path.exists():
        return CassetteBackend.from_file(path, strict=strict)
    if inner is None:
        raise FileNotFoundError(f"no cassette at {path} and no live backend to record from")
    return RecordingBackend(inner, path)
