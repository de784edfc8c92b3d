"""Chat-completion backends and prompt templates.

Two backends share one ``complete(exchange) -> str`` method: ``HttpBackend``
talks to an OpenAI-style ``/chat/completions`` endpoint, ``ScriptedBackend``
answers from an ordered rule list and is what the tests use.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Protocol

import httpx

from .errors import BackendError, MissingBinding, NoMatchingRule, PromptOverflow
from .textcore import count_tokens, truncate_middle

log = logging.getLogger(__name__)

TEMPLATE_NAMES = ("memorize", "header", "plan", "integrate", "reflect", "extract", "answer")


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatExchange:
    system: str
    messages: tuple[Message, ...]
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("exchange needs at least one user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def last_user(self) -> str:
        return next(m.content for m in reversed(self.messages) if m.role == "user")

    @classmethod
    def single(cls, system: str, user: str, **kw) -> ChatExchange:
        return cls(system, (Message("user", user),), **kw)


class Backend(Protocol):
    def complete(self, exchange: ChatExchange) -> str: ...


# -- prompt templates --------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str
    template: str

    @property
    def placeholders(self) -> list[str]:
        names = []
        for m in Template.pattern.finditer(self.template):
            name = m.group("named") or m.group("braced")
            if name and name not in names:
                names.append(name)
        return names


_template_cache: dict[str, PromptTemplate] = {}


def load_template(name: str) -> PromptTemplate:
    """Load a bundled template. Files hold the system text, a ``---`` line, then the user text."""
    if name not in _template_cache:
        if name not in TEMPLATE_NAMES:
            raise KeyError(f"unknown template {name!r}")
        raw = resources.files("gam").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
        system, _, user = raw.partition("\n---\n")
        _template_cache[name] = PromptTemplate(name, system.strip(), user.strip() + "\n")
    return _template_cache[name]


def render_prompt(template: PromptTemplate, bindings: dict[str, str], context_budget: int = 96_000,
                  max_output_tokens: int = 1024, temperature: float = 0.0) -> ChatExchange:
    """Fill ``template`` and shrink it to ``context_budget`` tokens.

    When the prompt is too long the largest binding is middle-truncated
    first, then the next largest, until the whole exchange fits.
    """
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise MissingBinding(f"template {template.name!r} needs {missing}")
    values = {p: str(bindings[p]) for p in template.placeholders}
    tmpl = Template(template.template)
    system_tokens = count_tokens(template.system)
    while True:
        user = tmpl.substitute(values)
        total = system_tokens + count_tokens(user)
        if total <= context_budget:
            return ChatExchange.single(template.system, user, max_output_tokens=max_output_tokens,
                                       temperature=temperature)
        sizes = {p: count_tokens(v) for p, v in values.items()}
        shrinkable = [p for p in values if sizes[p] > 2]
        if not shrinkable:
            raise PromptOverflow(f"template {template.name!r} cannot fit in {context_budget} tokens")
        largest = max(shrinkable, key=lambda p: sizes[p])
        values[largest] = truncate_middle(values[largest], max(2, sizes[largest] - (total - context_budget)))


def prompt(name: str, bindings: dict[str, str], context_budget: int = 96_000, **kw) -> ChatExchange:
    return render_prompt(load_template(name), bindings, context_budget, **kw)


# -- scripted backend ------------------------------------------------------------

@dataclass
class ScriptRule:
    """Answer ``response`` when ``matcher`` occurs in the last user message.

    With ``regex=True`` the matcher is a ``re.search`` pattern. A rule with
    ``error`` set raises BackendError of that kind instead of answering.
    """

    matcher: str
    response: str = ""
    max_uses: int | None = None
    regex: bool = False
    error: str | None = None
    uses: int = field(default=0, compare=False)

    def __post_init__(self):
        self._pattern = re.compile(self.matcher) if self.regex else None

    def matches(self, text: str) -> bool:
        if self.max_uses is not None and self.uses >= self.max_uses:
            return False
        if self._pattern is not None:
            return self._pattern.search(text) is not None
        return self.matcher in text

    @classmethod
    def from_dict(cls, row: dict) -> ScriptRule:
        response = row.get("response", "")
        if not isinstance(response, str):
            response = json.dumps(response)
        return cls(row["match"], response, row.get("max_uses"), bool(row.get("regex", False)), row.get("error"))


class ScriptedBackend:
    """Deterministic backend: first rule matching the last user message wins."""

    def __init__(self, rules=(), default: str | None = None):
        self.rules = [r if isinstance(r, ScriptRule) else ScriptRule(*r) for r in rules]
        self.default = default
        self.calls: list[ChatExchange] = []
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, path) -> ScriptedBackend:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, list):
            data = {"rules": data}
        default = data.get("default")
        if default is not None and not isinstance(default, str):
            default = json.dumps(default)
        return cls([ScriptRule.from_dict(r) for r in data.get("rules", [])], default)

    def complete(self, exchange: ChatExchange) -> str:
        text = exchange.last_user
        with self._lock:
            self.calls.append(exchange)
            for rule in self.rules:
                if rule.matches(text):
                    rule.uses += 1
                    if rule.error:
                        raise BackendError(f"scripted {rule.error} failure", kind=rule.error)
                    return rule.response
            if self.default is not None:
                return self.default
        raise NoMatchingRule(f"no rule matches: {text[:80]!r}")


# -- HTTP backend ------------------------------------------------------------

class HttpBackend:
    """Client for an OpenAI-compatible chat-completion endpoint.

    Transport errors, timeouts and 5xx answers are retried with exponential
    backoff; 4xx answers are not.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 model: str = "gpt-4o-mini", timeout: float = 120.0, max_attempts: int = 3,
                 backoff: float = 0.5, max_concurrency: int = 4, client: httpx.Client | None = None):
        self.base_url = (base_url or os.environ.get("GAM_BASE_URL") or "http://localhost:8000/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("GAM_API_KEY")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def payload(self, exchange: ChatExchange) -> dict:
        messages = [{"role": "system", "content": exchange.system}] if exchange.system else []
        messages += [{"role": m.role, "content": m.content} for m in exchange.messages]
        return {"model": self.model, "messages": messages, "temperature": exchange.temperature,
                "max_tokens": exchange.max_output_tokens}

    def complete(self, exchange: ChatExchange) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = self.payload(exchange)
        url = f"{self.base_url}/chat/completions"
        last: BackendError | None = None
        with self._slots:
            for attempt in range(self.max_attempts):
                if attempt:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._client.post(url, json=body, headers=headers)
                except httpx.TimeoutException as exc:
                    last = BackendError(f"timeout: {exc}", kind="timeout")
                    continue
                except httpx.TransportError as exc:
                    last = BackendError(f"transport: {exc}", kind="transport")
                    continue
                if resp.status_code >= 500:
                    last = BackendError(f"HTTP {resp.status_code}", kind="status", status=resp.status_code)
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}", kind="status",
                                       status=resp.status_code)
                try:
                    return resp.json()["choices"][0]["message"]["content"] or ""
                except (ValueError, KeyError, IndexError, TypeError):
                    raise BackendError("malformed completion body", kind="status",
                                       status=resp.status_code) from None
        log.warning("chat completion failed after %d attempts", self.max_attempts)
        raise last
