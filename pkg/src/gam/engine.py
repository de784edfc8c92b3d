"""Stateful facade used by the CLI and the HTTP service.

Holds one page-store and its memory. Ingests are serialized; research runs
on a snapshot of the last committed state, so readers never wait on a writer
and never see a half-ingested session.
"""
from __future__ import annotations

import threading
from pathlib import Path

from . import memorizer, pagestore
from .config import EngineConfig
from .modelbackend import Backend, HttpBackend, ScriptedBackend
from .pagestore import PageStore, StoreView
from .records import MemoryState, Session
from .researcher import FinalContext, OutputFormat, research


def make_backend(config: EngineConfig) -> Backend:
    if config.scripted_rules:
        return ScriptedBackend.from_json(config.scripted_rules)
    return HttpBackend(base_url=config.base_url, model=config.model)


class Engine:
    def __init__(self, config: EngineConfig, backend: Backend, store: PageStore | None = None,
                 memory: MemoryState | None = None):
        self.config = config
        self.backend = backend
        self.store = store if store is not None else PageStore(config.page_size, index_headers=config.index_headers)
        self.memory = memory if memory is not None else MemoryState()
        self._committed = len(self.store)
        self._state_lock = threading.Lock()
        self._writer = threading.Lock()

    @classmethod
    def open(cls, config: EngineConfig, backend: Backend | None = None) -> Engine:
        """Load the store at ``config.store_path`` if it has a manifest, else start empty."""
        backend = backend if backend is not None else make_backend(config)
        path = Path(config.store_path) if config.store_path else None
        if path is not None and (path / "manifest.json").exists():
            store = pagestore.load(path, index_headers=config.index_headers)
            memory = pagestore.load_memory(path)
            if store.page_size != config.page_size:
                config = config.with_overrides(page_size=store.page_size)
            return cls(config, backend, store, memory)
        return cls(config, backend)

    def snapshot(self) -> tuple[StoreView, MemoryState]:
        with self._state_lock:
            return StoreView(self.store, self._committed), self.memory

    def ingest(self, session: Session) -> list[int]:
        with self._writer:
            memory, ids = memorizer.ingest(
                session, self.memory, self.store, self.backend,
                memo_budget=self.config.memo_budget, header_budget=self.config.header_budget,
                context_budget=self.config.context_budget,
            )
            with self._state_lock:
                self.memory = memory
                self._committed = len(self.store)
            return ids

    def persist(self, path=None) -> None:
        path = path or self.config.store_path
        if path is None:
            raise ValueError("no store path configured")
        with self._writer:
            pagestore.persist(self.store, path, self.memory)

    def research(self, request: str, *, output_format: OutputFormat | str | None = None,
                 max_depth: int | None = None, top_k: int | None = None, tools=None) -> FinalContext:
        cfg = self.config.with_overrides(
            output_format=OutputFormat(output_format) if output_format is not None else None,
            max_reflection_depth=max_depth, top_k=top_k, enabled_tools=tools,
        )
        view, memory = self.snapshot()
        final, _ = research(request, memory, view, self.backend, cfg.research)
        return final
