"""Chat-completion access for both pipeline steps.

A :class:`Gateway` wraps one backend:

* :class:`HTTPChatBackend` speaks the OpenAI-compatible ``/chat/completions`` protocol.
* :class:`ReplayBackend` answers from a JSON-lines store keyed by request digest
  and never falls through to a live endpoint.
* :class:`RecordingBackend` forwards to another backend and appends to a store.
* :class:`CallableBackend` adapts a plain function (mocks, tests).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

import httpx

log = logging.getLogger(__name__)

LLM_API_KEY_ENV = "KGETOOL_LLM_API_KEY"
DEFAULT_TEMPERATURE = 0.7


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    pass


class AuthenticationError(GatewayError):
    pass


class EndpointError(GatewayError):
    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class ReplayMissError(GatewayError):
    pass


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = DEFAULT_TEMPERATURE
    tools: tuple[dict[str, Any], ...] | None = None
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        msgs = tuple(m if isinstance(m, Message) else Message(m["role"], m["content"]) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if self.tools is not None:
            object.__setattr__(self, "tools", tuple(self.tools))
        if not msgs:
            raise ValueError("chat request needs at least one message")
        if msgs[0].role not in ("system", "user"):
            raise ValueError(f"first message must be system or user, got {msgs[0].role!r}")

    def payload(self) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
        }
        if self.tools:
            body["tools"] = list(self.tools)
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body

    def digest(self) -> str:
        canonical = json.dumps(self.payload(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class NativeToolCall:
    name: str
    arguments: str


@dataclass(frozen=True)
class ChatResponse:
    text: str | None = None
    native_tool_calls: tuple[NativeToolCall, ...] | None = None
    usage: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.native_tool_calls is not None:
            object.__setattr__(self, "native_tool_calls", tuple(self.native_tool_calls))
        if self.text is None and not self.native_tool_calls:
            raise ValueError("chat response carries neither text nor tool calls")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"text": self.text}
        if self.native_tool_calls is not None:
            out["native_tool_calls"] = [{"name": c.name, "arguments": c.arguments} for c in self.native_tool_calls]
        out["usage"] = dict(self.usage)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ChatResponse:
        calls = data.get("native_tool_calls")
        return cls(
            text=data.get("text"),
            native_tool_calls=tuple(NativeToolCall(c["name"], c["arguments"]) for c in calls) if calls else None,
            usage=dict(data.get("usage") or {}),
        )

    @classmethod
    def from_openai(cls, body: Mapping[str, Any]) -> ChatResponse:
        """Parse an OpenAI-style ``chat.completion`` body."""
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed completion body: {exc!r}") from exc
        calls = []
        for tc in message.get("tool_calls") or []:
            fn = tc.get("function") or {}
            args = fn.get("arguments", "")
            if not isinstance(args, str):
                args = json.dumps(args, ensure_ascii=False)
            calls.append(NativeToolCall(fn.get("name", ""), args))
        text = message.get("content")
        if text is None and not calls:
            text = ""
        usage = {k: v for k, v in (body.get("usage") or {}).items() if isinstance(v, int)}
        return cls(text=text, native_tool_calls=tuple(calls) or None, usage=usage)


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


class HTTPChatBackend:
    """POST ``{base_url}/chat/completions`` with retries on transport failures,
    HTTP 429 and 5xx; 401/403 raise :class:`AuthenticationError` at once."""

    def __init__(
        self,
        base_url: str,
        *,
        api_key: str | None = None,
        retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(LLM_API_KEY_ENV)
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        failures: list[str] = []
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=request.payload(), headers=headers)
            except httpx.TransportError as exc:
                failures.append(f"{type(exc).__name__}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        body = resp.json()
                    except ValueError as exc:
                        raise EndpointError(f"non-JSON body from {self.url}", 200) from exc
                    return ChatResponse.from_openai(body)
                if resp.status_code in (401, 403):
                    raise AuthenticationError(f"{self.url} rejected credentials (HTTP {resp.status_code})")
                if resp.status_code != 429 and resp.status_code < 500:
                    raise EndpointError(
                        f"{self.url} returned HTTP {resp.status_code}: {resp.text[:500]}", resp.status_code
                    )
                failures.append(f"HTTP {resp.status_code}")
            if attempt < self.retries:
                time.sleep(self.backoff * 2**attempt)
        raise TransportError(f"{self.url} failed after {self.retries + 1} attempt(s): " + "; ".join(failures))


class ReplayStore:
    """JSON-lines ``{"digest", "response"}`` records; appends are serialized."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        self._records[rec["digest"]] = rec["response"]
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise GatewayError(f"{self.path}:{lineno}: bad replay record ({exc})") from exc

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, digest: str) -> bool:
        return digest in self._records

    def get(self, digest: str) -> ChatResponse | None:
        rec = self._records.get(digest)
        return ChatResponse.from_dict(rec) if rec is not None else None

    def put(self, digest: str, response: ChatResponse) -> None:
        rec = response.to_dict()
        with self._lock:
            if digest in self._records:
                return
            self._records[digest] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as f:
                    f.write(json.dumps({"digest": digest, "response": rec}, ensure_ascii=False, sort_keys=True) + "\n")


class ReplayBackend:
    def __init__(self, store: ReplayStore | str | Path) -> None:
        self.store = store if isinstance(store, ReplayStore) else ReplayStore(store)

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = request.digest()
        found = self.store.get(digest)
        if found is None:
            raise ReplayMissError(f"no recorded response for request digest {digest[:16]}... (model {request.model!r})")
        return found


class RecordingBackend:
    def __init__(self, inner: ChatBackend, store: ReplayStore) -> None:
        self.inner = inner
        self.store = store

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.complete(request)
        self.store.put(request.digest(), response)
        return response


class CallableBackend:
    """Wraps ``fn(request) -> ChatResponse | str``; a string becomes the response text."""

    def __init__(self, fn: Callable[[ChatRequest], ChatResponse | str]) -> None:
        self.fn = fn

    def complete(self, request: ChatRequest) -> ChatResponse:
        out = self.fn(request)
        return ChatResponse(text=out) if isinstance(out, str) else out


class Gateway:
    """Model-bound entry point with a cap on concurrent in-flight requests."""

    def __init__(self, backend: ChatBackend, model: str, *, max_concurrency: int = 4,
                 temperature: float = DEFAULT_TEMPERATURE, max_tokens: int | None = None) -> None:
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.backend = backend
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def request(self, messages: Sequence[Message | Mapping[str, str]],
                tools: Sequence[dict[str, Any]] | None = None) -> ChatRequest:
        return ChatRequest(self.model, tuple(messages), self.temperature,
                           tuple(tools) if tools else None, self.max_tokens)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._slots:
            return self.backend.complete(request)


# -- prompt templates --------------------------------------------------------

PLACEHOLDERS = ("query", "relations", "paths", "tools")
_PLACEHOLDER = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt body with ``{query}``, ``{relations}``, ``{paths}``, ``{tools}`` slots.

    Other braces in the body are literal text.
    """

    id: str
    body: str

    @property
    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.body))

    def render(self, **values: str) -> str:
        missing = sorted(self.placeholders - values.keys())
        if missing:
            raise TemplateError(f"template {self.id!r}: unfilled placeholder(s) {missing}")
        return _PLACEHOLDER.sub(lambda m: values[m.group(1)], self.body)

    @classmethod
    def from_file(cls, path: str | Path, id: str | None = None) -> PromptTemplate:
        p = Path(path)
        return cls(id or p.stem, p.read_text(encoding="utf-8"))


def default_template(name: str) -> PromptTemplate:
    """Bundled template: ``path_generation`` or ``tool_use``."""
    body = resources.files("kgetool").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name, body)


def render_path_prompt(kg, query: str, template: PromptTemplate | None = None) -> list[Message]:
    template = template or default_template("path_generation")
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    for slot in ("relations", "query"):
        if slot not in template.placeholders:
            raise TemplateError(f"path template {template.id!r} lacks {{{slot}}}")
    relations = "\n".join(f"- {r}" for r in kg.sorted_relations())
    return [Message("user", template.render(query=query, relations=relations))]


def render_tools(tools: Sequence) -> str:
    return "\n".join(json.dumps(t.to_schema(), ensure_ascii=False) for t in tools)


def render_tool_prompt(query, tools: Sequence, template: PromptTemplate | None = None) -> list[Message]:
    """Tool-use prompt for an augmented query (anything with ``.rendered``, or a str)."""
    template = template or default_template("tool_use")
    text = getattr(query, "rendered", query)
    if not text or not str(text).strip():
        raise ValueError("query must be non-empty")
    if not tools:
        raise ValueError("at least one candidate tool is required")
    for slot in ("tools", "query"):
        if slot not in template.placeholders:
            raise TemplateError(f"tool template {template.id!r} lacks {{{slot}}}")
    return [Message("user", template.render(query=str(text), tools=render_tools(tools)))]
