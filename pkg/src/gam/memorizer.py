"""Offline stage: turn each arriving session into memos and header-decorated pages."""
from __future__ import annotations

from .errors import ConcurrentWriteError, EmptyCompletion, OutOfOrderSession
from .modelbackend import Backend, prompt
from .pagestore import PageStore
from .records import Memo, MemoryState, Page, Session
from .textcore import segment_into_pages, truncate_middle

MEMO_BUDGET = 256
HEADER_BUDGET = 128
NO_MEMORY = "(empty)"


def render_memory(memory: MemoryState) -> str:
    """One line per memo, oldest first: ``[session S | pages 1,2] text``."""
    return "\n".join(
        f"[session {m.session_id} | pages {','.join(map(str, m.source_page_ids))}] {m.text}"
        for m in memory.memos
    )


def _memory_binding(memory: MemoryState) -> str:
    return render_memory(memory) or NO_MEMORY


def memorize(session_chunk: str, memory: MemoryState, backend: Backend, *, session_id: int = 0,
             page_ids: tuple[int, ...] = (), memo_budget: int = MEMO_BUDGET,
             context_budget: int = 96_000) -> Memo:
    """Ask the backend for a memo of ``session_chunk``. The memo is not appended."""
    if not session_chunk.strip():
        raise ValueError("session chunk is empty")
    exchange = prompt("memorize", {"memory": _memory_binding(memory), "session": session_chunk},
                      context_budget)
    text = backend.complete(exchange).strip()
    if not text:
        raise EmptyCompletion("backend returned an empty memo")
    return Memo(truncate_middle(text, memo_budget), tuple(page_ids), session_id)


def make_header(session_chunk: str, memory: MemoryState, backend: Backend, *,
                header_budget: int = HEADER_BUDGET, context_budget: int = 96_000) -> str:
    if not session_chunk.strip():
        raise ValueError("session chunk is empty")
    exchange = prompt("header", {"memory": _memory_binding(memory), "session": session_chunk},
                      context_budget)
    return truncate_middle(backend.complete(exchange).strip(), header_budget)


def ingest(session: Session, memory: MemoryState, store: PageStore, backend: Backend, *,
           memo_budget: int = MEMO_BUDGET, header_budget: int = HEADER_BUDGET,
           context_budget: int = 96_000) -> tuple[MemoryState, list[int]]:
    """Segment a session into pages, header and memo each chunk, then commit.

    Nothing reaches the store until every chunk has its header and memo, so a
    backend failure leaves ``store`` untouched. Returns the grown memory and
    the new page ids.
    """
    if not store.ingest_guard.acquire(blocking=False):
        raise ConcurrentWriteError("another ingest is running on this store")
    try:
        last = max((x for x in (memory.last_session_id, store.last_session_id) if x is not None),
                   default=None)
        if last is not None and session.id <= last:
            raise OutOfOrderSession(f"session {session.id} arrives after session {last}")

        staged_pages: list[Page] = []
        staged = memory
        next_id = len(store)
        for chunk in segment_into_pages(session.content, store.page_size):
            header = make_header(chunk, staged, backend, header_budget=header_budget,
                                 context_budget=context_budget)
            page = Page(next_id + len(staged_pages), header, chunk, session.id)
            staged_pages.append(page)
            memo = memorize(chunk, staged, backend, session_id=session.id, page_ids=(page.id,),
                            memo_budget=memo_budget, context_budget=context_budget)
            staged = staged.extend([memo])

        for page in staged_pages:
            store.append_page(page)
        return staged, [p.id for p in staged_pages]
    finally:
        store.ingest_guard.release()


def ingest_all(sessions, memory: MemoryState, store: PageStore, backend: Backend,
               **kw) -> tuple[MemoryState, list[int]]:
    page_ids: list[int] = []
    for session in sessions:
        memory, ids = ingest(session, memory, store, backend, **kw)
        page_ids.extend(ids)
    return memory, page_ids
