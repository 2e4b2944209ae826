"""Chat-completion clients: two HTTP dialects plus a scripted replay provider."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

import httpx

log = logging.getLogger(__name__)

REPLAY_SEPARATOR = "---8<---"
RETRY_DELAYS = (1.0, 2.0, 4.0)


class LLMError(Exception):
    pass


class ConversationError(LLMError):
    """A message sequence that breaks the system/user/assistant ordering."""


class AuthError(LLMError):
    pass


class RateLimited(LLMError):
    def __init__(self, retry_after: Optional[float]):
        super().__init__(f"rate limited (retry after {retry_after})")
        self.retry_after = retry_after


class TransportError(LLMError):
    pass


class MalformedResponse(LLMError):
    pass


class ReplayExhausted(LLMError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str


class Conversation:
    """Role-checked message history. Grows only through :meth:`append`."""

    def __init__(self, messages: Iterable[Message] = ()):
        self._messages: list[Message] = []
        for m in messages:
            self.append(m)

    @property
    def messages(self) -> tuple[Message, ...]:
        return tuple(self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    def copy(self) -> "Conversation":
        c = Conversation()
        c._messages = list(self._messages)
        return c

    def expected_role(self) -> str:
        turns = [m for m in self._messages if m.role != "system"]
        return "user" if len(turns) % 2 == 0 else "assistant"

    def append(self, message: Message) -> None:
        if message.role not in ("system", "user", "assistant"):
            raise ConversationError(f"unknown role {message.role!r}")
        if message.role == "system":
            if self._messages:
                raise ConversationError("system message must come first and only once")
        else:
            if not message.content:
                raise ConversationError(f"empty {message.role} message")
            want = self.expected_role()
            if message.role != want:
                raise ConversationError(f"expected a {want} message, got {message.role}")
        self._messages.append(message)


class ProviderKind(str, Enum):
    OPENAI = "openai_compatible"
    ANTHROPIC = "anthropic_compatible"
    REPLAY = "replay"


@dataclass(frozen=True)
class ProviderSpec:
    kind: ProviderKind = ProviderKind.REPLAY
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None
    temperature: float = 0.2
    max_tokens: int = 4096
    replay_file: Optional[Path] = None
    price_per_million_input: float = 0.0
    price_per_million_output: float = 0.0
    request_timeout: float = 600.0

    def problems(self) -> list[str]:
        out = []
        if self.kind is ProviderKind.REPLAY:
            if not self.replay_file:
                out.append("replay provider needs provider.replay_file")
        else:
            for name in ("endpoint", "model", "api_key_env"):
                if not getattr(self, name):
                    out.append(f"{self.kind.value} provider needs provider.{name}")
        if not 0.0 <= self.temperature <= 2.0:
            out.append("provider.temperature must lie in [0, 2]")
        if self.max_tokens < 1:
            out.append("provider.max_tokens must be positive")
        if self.price_per_million_input < 0 or self.price_per_million_output < 0:
            out.append("provider prices must be non-negative")
        return out


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.input_tokens + other.input_tokens,
                     self.output_tokens + other.output_tokens)


def cost_usd(usage: Usage, spec: ProviderSpec) -> float:
    return (usage.input_tokens * spec.price_per_million_input / 1e6
            + usage.output_tokens * spec.price_per_million_output / 1e6)


def load_replay_script(path: str | Path) -> list[str]:
    """Split a replay file into responses at ``---8<---`` lines."""
    text = Path(path).read_text(encoding="utf-8").replace("\r\n", "\n")
    if text.endswith("\n"):
        text = text[:-1]
    chunks: list[list[str]] = [[]]
    for line in text.split("\n"):
        if line == REPLAY_SEPARATOR:
            chunks.append([])
        else:
            chunks[-1].append(line)
    return ["\n".join(c) for c in chunks]


def _check_turn(conv: Conversation) -> None:
    msgs = conv.messages
    if not msgs or msgs[-1].role != "user":
        raise ConversationError("conversation must end with a user message")


class ChatClient:
    """Base client. Subclasses implement :meth:`_send`."""

    def __init__(self, spec: ProviderSpec):
        self.spec = spec

    def preflight(self) -> None:
        """Fail fast on configuration that would break the first call."""

    def complete(self, conv: Conversation) -> tuple[Message, Usage]:
        _check_turn(conv)
        return self._send(conv.messages)

    def _send(self, messages: tuple[Message, ...]) -> tuple[Message, Usage]:
        raise NotImplementedError


class ReplayClient(ChatClient):
    """Returns scripted responses in order; usage is estimated as chars/4."""

    def __init__(self, spec: ProviderSpec, script: Optional[list[str]] = None):
        super().__init__(spec)
        self.script = script if script is not None else load_replay_script(spec.replay_file)
        self.cursor = 0

    def _send(self, messages):
        if self.cursor >= len(self.script):
            raise ReplayExhausted(f"replay script has only {len(self.script)} responses")
        text = self.script[self.cursor]
        self.cursor += 1
        if not text:
            raise MalformedResponse(f"replay response {self.cursor} is empty")
        prompt_chars = sum(len(m.content) for m in messages)
        return Message("assistant", text), Usage(prompt_chars // 4, len(text) // 4)


class HTTPClient(ChatClient):
    def __init__(
        self,
        spec: ProviderSpec,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(spec)
        self._transport = transport
        self._sleep = sleep

    def _api_key(self) -> str:
        key = os.environ.get(self.spec.api_key_env or "")
        if not key:
            raise AuthError(f"environment variable {self.spec.api_key_env} is not set")
        return key

    def preflight(self) -> None:
        self._api_key()

    def _headers(self, key: str) -> dict[str, str]:
        raise NotImplementedError

    def _body(self, messages: tuple[Message, ...]) -> dict:
        raise NotImplementedError

    def _parse(self, data: dict) -> tuple[Message, Usage]:
        raise NotImplementedError

    def _post_once(self, key: str, body: dict) -> dict:
        try:
            with httpx.Client(transport=self._transport, timeout=self.spec.request_timeout) as client:
                resp = client.post(self.spec.endpoint, json=body, headers=self._headers(key))
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"provider rejected credentials ({resp.status_code})")
        if resp.status_code == 429:
            ra = resp.headers.get("retry-after")
            try:
                retry_after = float(ra) if ra is not None else None
            except ValueError:
                retry_after = None
            raise RateLimited(retry_after)
        if resp.status_code >= 400:
            # context-overflow and similar errors are surfaced verbatim
            raise TransportError(f"HTTP {resp.status_code}: {resp.text}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"response is not JSON: {resp.text[:200]}") from exc

    def _send(self, messages):
        key = self._api_key()
        body = self._body(messages)
        for attempt in range(len(RETRY_DELAYS) + 1):
            try:
                data = self._post_once(key, body)
                break
            except RateLimited:
                if attempt == len(RETRY_DELAYS):
                    raise
                delay = RETRY_DELAYS[attempt]
                log.warning("rate limited; retrying in %.0f s", delay)
                self._sleep(delay)
        try:
            return self._parse(data)
        except (KeyError, IndexError, TypeError, StopIteration) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc!r}") from exc


class OpenAIClient(HTTPClient):
    """System message travels inside the message list."""

    def _headers(self, key):
        return {"Authorization": f"Bearer {key}"}

    def _body(self, messages):
        return {
            "model": self.spec.model,
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }

    def _parse(self, data):
        text = data["choices"][0]["message"]["content"]
        if not text:
            raise MalformedResponse("empty assistant message")
        usage = data.get("usage") or {}
        return Message("assistant", text), Usage(
            int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
        )


class AnthropicClient(HTTPClient):
    """System message travels as a top-level field."""

    api_version = "2023-06-01"

    def _headers(self, key):
        return {"x-api-key": key, "anthropic-version": self.api_version}

    def _body(self, messages):
        body = {
            "model": self.spec.model,
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
            "messages": [
                {"role": m.role, "content": m.content} for m in messages if m.role != "system"
            ],
        }
        system = [m.content for m in messages if m.role == "system"]
        if system:
            body["system"] = system[0]
        return body

    def _parse(self, data):
        text = next(p["text"] for p in data["content"] if p.get("type") == "text")
        if not text:
            raise MalformedResponse("empty assistant message")
        usage = data.get("usage") or {}
        return Message("assistant", text), Usage(
            int(usage.get("input_tokens", 0)), int(usage.get("output_tokens", 0))
        )


def make_client(spec: ProviderSpec, **kwargs) -> ChatClient:
    if spec.kind is ProviderKind.REPLAY:
        return ReplayClient(spec)
    if spec.kind is ProviderKind.OPENAI:
        return OpenAIClient(spec, **kwargs)
    return AnthropicClient(spec, **kwargs)


def complete(conv: Conversation, client: ChatClient) -> tuple[Message, Usage]:
    return client.complete(conv)
