"""Online stage: plan, search, integrate and reflect over the page-store.

``research`` runs the loop for one request against a frozen store snapshot
and returns the assembled context together with a trace of every iteration.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    BackendError,
    IntegrationParseError,
    ParseError,
    PlanParseError,
    ReflectionParseError,
    ResearchAborted,
    UnknownPageId,
)
from .memorizer import render_memory
from .modelbackend import Backend, ChatExchange, prompt
from .pagestore import TOOLS, PageStore, StoreView
from .records import MemoryState, Page

log = logging.getLogger(__name__)

PARSE_RETRIES = 2

TOOL_DESCRIPTIONS = {
    "bm25": '- bm25: keyword search over pages. Parameters: {"tool": "bm25", "query": "keywords"}',
    "embedding": '- embedding: vector similarity search over pages. Parameters: {"tool": "embedding", "query": "text"}',
    "page_id": '- page_id: fetch pages by id, e.g. ids listed in the memory. Parameters: {"tool": "page_id", "ids": [0, 1]}',
}


class OutputFormat(str, Enum):
    INTEGRATION_ONLY = "integration-only"
    INTEGRATION_WITH_PAGE = "integration-with-page"
    INTEGRATION_WITH_EXTRACTION = "integration-with-extraction"


@dataclass(frozen=True)
class ResearchConfig:
    max_reflection_depth: int = 3
    top_k: int = 5
    output_format: OutputFormat = OutputFormat.INTEGRATION_ONLY
    enabled_tools: tuple[str, ...] = TOOLS
    reflect_sees_pages: bool = False
    context_budget: int = 96_000
    parallel_calls: bool = True


@dataclass(frozen=True)
class Request:
    text: str
    refined_from: Request | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("request text is empty")

    def refine(self, text: str) -> Request:
        return Request(text, self)


@dataclass(frozen=True)
class ToolCall:
    tool: str
    query: str | None = None
    ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.tool not in TOOLS:
            raise ValueError(f"unknown tool {self.tool!r}")
        if self.tool == "page_id":
            if self.ids is None or self.query is not None:
                raise ValueError("page_id calls take ids only")
        elif self.query is None or self.ids is not None:
            raise ValueError(f"{self.tool} calls take a query only")

    def to_dict(self) -> dict:
        if self.tool == "page_id":
            return {"tool": self.tool, "ids": list(self.ids)}
        return {"tool": self.tool, "query": self.query}


@dataclass(frozen=True)
class SearchPlan:
    reasoning: str = ""
    calls: tuple[ToolCall, ...] = ()
    sufficient_from_memory: bool = False

    def to_dict(self) -> dict:
        return {"reasoning": self.reasoning, "calls": [c.to_dict() for c in self.calls],
                "sufficient_from_memory": self.sufficient_from_memory}


@dataclass(frozen=True)
class CallRecord:
    call: ToolCall
    page_ids: tuple[int, ...]
    misses: tuple = ()
    error: str | None = None

    def to_dict(self) -> dict:
        row = {"call": self.call.to_dict(), "page_ids": list(self.page_ids)}
        if self.misses:
            row["misses"] = list(self.misses)
        if self.error:
            row["error"] = self.error
        return row


@dataclass(frozen=True)
class RetrievedSet:
    """Pages gathered so far, keyed by id in first-retrieved order."""

    pages: dict[int, Page] = field(default_factory=dict)
    provenance: tuple[CallRecord, ...] = ()

    @property
    def ids(self) -> list[int]:
        return list(self.pages)


@dataclass(frozen=True)
class IntegrationResult:
    text: str = ""
    cited_page_ids: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"text": self.text, "cited_page_ids": list(self.cited_page_ids)}


@dataclass(frozen=True)
class ReflectionOutcome:
    sufficient: bool
    refined_request: str | None = None
    reasoning: str = ""

    def to_dict(self) -> dict:
        return {"sufficient": self.sufficient, "refined_request": self.refined_request,
                "reasoning": self.reasoning}


@dataclass
class Iteration:
    request: str
    plan: SearchPlan
    new_page_ids: list[int] = field(default_factory=list)
    calls: list[CallRecord] = field(default_factory=list)
    integration: IntegrationResult | None = None
    reflection: ReflectionOutcome | None = None

    def to_dict(self) -> dict:
        return {
            "request": self.request,
            "plan": self.plan.to_dict(),
            "calls": [c.to_dict() for c in self.calls],
            "new_page_ids": self.new_page_ids,
            "integration": self.integration.to_dict() if self.integration else None,
            "reflection": self.reflection.to_dict() if self.reflection else None,
        }


class Termination(str, Enum):
    SUFFICIENT = "sufficient"
    NO_NEW_CALLS = "no_new_calls"
    DEPTH_REACHED = "depth_reached"
    MEMORY_SUFFICIENT = "memory_sufficient"


@dataclass
class ResearchTrace:
    request: str
    iterations: list[Iteration] = field(default_factory=list)
    termination: Termination | None = None
    warnings: list[str] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "request": self.request,
            "iterations": [it.to_dict() for it in self.iterations],
            "termination": self.termination.value if self.termination else None,
            "warnings": list(self.warnings),
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


@dataclass
class FinalContext:
    context: str
    format: OutputFormat
    trace: ResearchTrace

    def to_dict(self) -> dict:
        return {"context": self.context, "format": self.format.value, "trace": self.trace.to_dict()}


# -- structured completions ----------------------------------------------------

def extract_json(text: str) -> dict:
    """Parse the first balanced ``{...}`` object in a completion.

    Code fences are ignored and braces inside JSON strings do not count.
    """
    text = text.replace("```json", "").replace("```", "")
    start = text.find("{")
    while start != -1:
        depth, in_str, escaped = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = text.find("{", start + 1)
    raise ParseError("no JSON object in completion")


def _complete_parsed(backend: Backend, exchange: ChatExchange, parse, error_cls):
    last = None
    for _ in range(PARSE_RETRIES + 1):
        completion = backend.complete(exchange)
        try:
            return parse(extract_json(completion))
        except (ParseError, ValueError, TypeError, KeyError) as exc:
            last = exc
    raise error_cls(f"unparseable completion after {PARSE_RETRIES + 1} attempts: {last}")


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "yes", "false", "no"):
        return value.strip().lower() in ("true", "yes")
    raise ValueError(f"not a boolean: {value!r}")


# -- operations ------------------------------------------------------------------

def toolkit_description(enabled_tools=TOOLS) -> str:
    return "\n".join(TOOL_DESCRIPTIONS[t] for t in TOOLS if t in enabled_tools)


def _parse_plan(obj: dict, enabled_tools) -> SearchPlan:
    sufficient = _as_bool(obj.get("sufficient_from_memory", False))
    raw_calls = obj.get("calls") or []
    if not isinstance(raw_calls, list):
        raise ValueError("calls must be a list")
    calls = []
    for raw in raw_calls:
        tool = raw["tool"]
        if tool not in enabled_tools:
            raise ValueError(f"tool {tool!r} is not enabled")
        if tool == "page_id":
            ids = raw["ids"]
            if not isinstance(ids, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in ids):
                raise ValueError("ids must be a list of integers")
            calls.append(ToolCall("page_id", ids=tuple(ids)))
        else:
            query = raw["query"]
            if not isinstance(query, str) or not query.strip():
                raise ValueError("query must be a non-empty string")
            calls.append(ToolCall(tool, query=query))
    reasoning = obj.get("reasoning", "")
    # a plan that says memory suffices never searches
    return SearchPlan(str(reasoning), () if sufficient else tuple(calls), sufficient)


def plan(request: Request, memory: MemoryState, toolkit: str, backend: Backend, *,
         enabled_tools=TOOLS, context_budget: int = 96_000) -> SearchPlan:
    exchange = prompt("plan", {"request": request.text, "memory": render_memory(memory) or "(empty)",
                               "toolkit": toolkit}, context_budget)
    return _complete_parsed(backend, exchange, lambda o: _parse_plan(o, enabled_tools), PlanParseError)


def _run_call(call: ToolCall, view: StoreView, top_k: int) -> CallRecord:
    try:
        if call.tool == "bm25":
            return CallRecord(call, tuple(r.page_id for r in view.search_bm25(call.query, top_k)))
        if call.tool == "embedding":
            return CallRecord(call, tuple(r.page_id for r in view.search_embedding(call.query, top_k)))
        try:
            pages = view.get_by_ids(call.ids)
            return CallRecord(call, tuple(p.id for p in pages))
        except UnknownPageId as exc:
            return CallRecord(call, tuple(p.id for p in exc.pages), tuple(exc.missing))
    except Exception as exc:  # per-call failures are recorded, not raised
        log.warning("tool call %s failed: %s", call, exc)
        return CallRecord(call, (), error=f"{type(exc).__name__}: {exc}")


def execute_plan(search_plan: SearchPlan, store: PageStore | StoreView, accumulated: RetrievedSet,
                 top_k: int = 5, *, parallel: bool = True) -> RetrievedSet:
    """Run every call of the plan and union the hits into ``accumulated``.

    Calls may run concurrently, results are merged in call order.
    """
    if not search_plan.calls:
        raise ValueError("plan has no calls")
    view = store.snapshot() if isinstance(store, PageStore) else store
    calls = search_plan.calls
    if parallel and len(calls) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(calls))) as pool:
            records = list(pool.map(lambda c: _run_call(c, view, top_k), calls))
    else:
        records = [_run_call(c, view, top_k) for c in calls]
    pages = dict(accumulated.pages)
    for rec in records:
        for pid in rec.page_ids:
            if pid not in pages:
                pages[pid] = view.pages[pid]
    return RetrievedSet(pages, accumulated.provenance + tuple(records))


def render_pages(pages) -> str:
    return "\n\n".join(p.render() for p in pages)


def _parse_integration(obj: dict, allowed: set[int]) -> IntegrationResult:
    text = obj["text"]
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    cited = obj.get("cited") or []
    if not isinstance(cited, list):
        raise ValueError("cited must be a list")
    ids = []
    for c in cited:
        if isinstance(c, int) and not isinstance(c, bool) and c in allowed and c not in ids:
            ids.append(c)
    return IntegrationResult(text, tuple(ids))


def integrate(retrieved: RetrievedSet, previous: IntegrationResult, request: Request, backend: Backend,
              *, new_pages=None, evidence: str | None = None,
              context_budget: int = 96_000) -> IntegrationResult:
    """Merge evidence into the running integration.

    ``evidence`` defaults to the rendering of ``new_pages`` (or of every
    retrieved page). Citations outside the retrieved set are dropped.
    """
    if evidence is None:
        pages = retrieved.pages.values() if new_pages is None else new_pages
        evidence = render_pages(pages) or "(no new pages)"
    exchange = prompt("integrate", {"request": request.text, "previous": previous.text or "(empty)",
                                    "evidence": evidence}, context_budget)
    allowed = set(retrieved.pages)
    return _complete_parsed(backend, exchange, lambda o: _parse_integration(o, allowed),
                            IntegrationParseError)


def _parse_reflection(obj: dict) -> ReflectionOutcome:
    sufficient = _as_bool(obj["sufficient"])
    refined = obj.get("refined_request")
    if not sufficient:
        if not isinstance(refined, str) or not refined.strip():
            raise ValueError("insufficient reflection without refined_request")
    else:
        refined = None
    return ReflectionOutcome(sufficient, refined, str(obj.get("reasoning", "")))


def reflect(integration: IntegrationResult, request: Request, backend: Backend, *,
            retrieved: RetrievedSet | None = None, context_budget: int = 96_000) -> ReflectionOutcome:
    evidence = render_pages(retrieved.pages.values()) if retrieved is not None else "(not shown)"
    exchange = prompt("reflect", {"request": request.text, "integration": integration.text or "(empty)",
                                  "evidence": evidence or "(none)"}, context_budget)
    return _complete_parsed(backend, exchange, _parse_reflection, ReflectionParseError)


def assemble_output(integration: IntegrationResult, retrieved: RetrievedSet, fmt: OutputFormat,
                    backend: Backend, *, request: Request | None = None, trace: ResearchTrace | None = None,
                    context_budget: int = 96_000) -> str:
    fmt = OutputFormat(fmt)
    cited = sorted(pid for pid in integration.cited_page_ids if pid in retrieved.pages)
    if fmt is OutputFormat.INTEGRATION_ONLY or not cited:
        return integration.text
    pages = [retrieved.pages[pid] for pid in cited]
    if fmt is OutputFormat.INTEGRATION_WITH_PAGE:
        return f"{integration.text}\n\n{render_pages(pages)}"
    exchange = prompt("extract", {"request": request.text if request else "",
                                  "integration": integration.text or "(empty)",
                                  "pages": render_pages(pages)}, context_budget)
    try:
        snippets = backend.complete(exchange).strip()
    except BackendError as exc:
        if trace is not None:
            trace.warnings.append(f"extraction failed, returned integration only: {exc}")
        return integration.text
    return f"{integration.text}\n\n{snippets}" if snippets else integration.text


def research(request: Request | str, memory: MemoryState, store: PageStore | StoreView, backend: Backend,
             config: ResearchConfig = ResearchConfig()) -> tuple[FinalContext, ResearchTrace]:
    """Run the research loop for ``request``.

    Stops when a reflection says the integration suffices, when a plan asks
    for no searches, or after ``max_reflection_depth`` iterations. Errors are
    re-raised as ResearchAborted carrying the partial trace.
    """
    if isinstance(request, str):
        request = Request(request)
    view = store.snapshot() if isinstance(store, PageStore) else store
    toolkit = toolkit_description(config.enabled_tools)
    budget = config.context_budget
    trace = ResearchTrace(request.text)
    retrieved = RetrievedSet()
    integration = IntegrationResult()
    active = request
    try:
        for depth in range(config.max_reflection_depth):
            search_plan = plan(active, memory, toolkit, backend, enabled_tools=config.enabled_tools,
                               context_budget=budget)
            it = Iteration(active.text, search_plan)
            trace.iterations.append(it)
            if search_plan.sufficient_from_memory and depth == 0:
                integration = integrate(retrieved, integration, request, backend,
                                        evidence=render_memory(memory) or "(empty)", context_budget=budget)
                it.integration = integration
                trace.termination = Termination.MEMORY_SUFFICIENT
                break
            if not search_plan.calls:
                it.integration = integration
                trace.termination = Termination.NO_NEW_CALLS
                break
            before = len(retrieved.provenance)
            grown = execute_plan(search_plan, view, retrieved, config.top_k, parallel=config.parallel_calls)
            it.calls = list(grown.provenance[before:])
            it.new_page_ids = [pid for pid in grown.pages if pid not in retrieved.pages]
            new_pages = [grown.pages[pid] for pid in it.new_page_ids]
            retrieved = grown
            integration = integrate(retrieved, integration, request, backend, new_pages=new_pages,
                                    context_budget=budget)
            it.integration = integration
            reflection = reflect(integration, request, backend,
                                 retrieved=retrieved if config.reflect_sees_pages else None,
                                 context_budget=budget)
            it.reflection = reflection
            if reflection.sufficient:
                trace.termination = Termination.SUFFICIENT
                break
            active = active.refine(reflection.refined_request)
        else:
            trace.termination = Termination.DEPTH_REACHED
        context = assemble_output(integration, retrieved, config.output_format, backend,
                                  request=request, trace=trace, context_budget=budget)
    except Exception as exc:
        trace.error = f"{type(exc).__name__}: {exc}"
        raise ResearchAborted(exc, trace) from exc
    return FinalContext(context, OutputFormat(config.output_format), trace), trace


def replay_calls(trace: ResearchTrace, store: PageStore | StoreView, top_k: int = 5) -> list[list[int]]:
    """Re-run each iteration's recorded calls; returns the new page ids per iteration."""
    view = store.snapshot() if isinstance(store, PageStore) else store
    retrieved = RetrievedSet()
    out = []
    for it in trace.iterations:
        if not it.plan.calls:
            out.append([])
            continue
        grown = execute_plan(it.plan, view, retrieved, top_k, parallel=False)
        out.append([pid for pid in grown.pages if pid not in retrieved.pages])
        retrieved = grown
    return out


__all__ = [
    "CallRecord", "FinalContext", "IntegrationResult", "Iteration", "OutputFormat", "ReflectionOutcome",
    "Request", "ResearchConfig", "ResearchTrace", "RetrievedSet", "SearchPlan", "Termination", "ToolCall",
    "assemble_output", "execute_plan", "extract_json", "integrate", "plan", "reflect", "replay_calls",
    "research", "toolkit_description",
]
