"""Agentic memory engine: an offline memorizer that writes memos and lossless
pages, and an online researcher that plans, searches, integrates and reflects
over those pages to build a context for a request."""
from .evalharness import Mode, QaExample, bleu1, run_benchmark, token_f1
from .memorizer import ingest, ingest_all, make_header, memorize, render_memory
from .modelbackend import ChatExchange, HttpBackend, ScriptedBackend, ScriptRule
from .pagestore import HashingEmbedder, PageStore, load, load_memory, persist
from .records import Memo, MemoryState, Page, Session, read_sessions
from .researcher import OutputFormat, Request, ResearchConfig, research
from .textcore import count_tokens, segment_into_pages, tokenize, truncate_middle

__version__ = "0.1.0"
