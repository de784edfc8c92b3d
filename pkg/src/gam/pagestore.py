"""Append-only page storage with BM25, page-id and embedding retrieval.

Pages are never modified or removed, so a snapshot is simply a page count:
posting lists are sorted by page id and can be cut with a binary search, and
the embedding matrix only ever grows at the end.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import CorruptManifest, DimensionMismatch, IdMismatch, UnknownPageId
from .records import Memo, MemoryState, Page
from .textcore import tokenize

K1 = 1.2
B = 0.75
MANIFEST_VERSION = 1

TOOLS = ("bm25", "embedding", "page_id")


@dataclass(frozen=True)
class RetrievalResult:
    page_id: int
    score: float
    tool: str


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Feature-hashed bag of words, L2-normalized.

    Lexical, not semantic. It stands in for a dense model so retrieval runs
    offline and deterministically.
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text).tokens:
            vec[self._bucket(tok)] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def bm25_idf(n_docs: int, doc_freq: int) -> float:
    return math.log(1.0 + (n_docs - doc_freq + 0.5) / (doc_freq + 0.5))


class PageStore:
    """Lossless page-store. Many readers, one writer.

    Readers should work on ``snapshot()`` views; the search methods defined
    directly on the store act on a snapshot taken at call time.
    """

    def __init__(self, page_size: int = 2048, embedder: EmbeddingProvider | None = None,
                 index_headers: bool = True):
        self.page_size = page_size
        self.embedder = embedder if embedder is not None else HashingEmbedder()
        self.index_headers = index_headers
        self._pages: list[Page] = []
        self._postings: dict[str, list[tuple[int, int]]] = {}
        self._doc_lengths: list[int] = []
        self._length_prefix: list[int] = [0]
        self._matrix = np.zeros((16, self.embedder.dim))
        self._write_lock = threading.Lock()
        self.ingest_guard = threading.Lock()
        self._read_lock = threading.Lock()
        self.reads = 0

    def __len__(self) -> int:
        return len(self._pages)

    @property
    def pages(self) -> list[Page]:
        return list(self._pages)

    @property
    def last_session_id(self) -> int | None:
        return self._pages[-1].session_id if self._pages else None

    def searchable_text(self, page: Page) -> str:
        if self.index_headers and page.header:
            return f"{page.header} {page.content}"
        return page.content

    def append_page(self, page: Page) -> int:
        with self._write_lock:
            if page.id != len(self._pages):
                raise IdMismatch(f"page id {page.id} != next id {len(self._pages)}")
            text = self.searchable_text(page)
            tokens = tokenize(text).tokens
            vec = self.embedder.embed(text)
            n = len(self._pages)
            if n == len(self._matrix):
                grown = np.zeros((2 * n, self.embedder.dim))
                grown[:n] = self._matrix
                self._matrix = grown
            self._matrix[n] = vec
            for term, tf in Counter(tokens).items():
                self._postings.setdefault(term, []).append((page.id, tf))
            self._doc_lengths.append(len(tokens))
            self._length_prefix.append(self._length_prefix[-1] + len(tokens))
            # publishing the page last makes it visible to new snapshots only
            # once every index is updated
            self._pages.append(page)
            return page.id

    def snapshot(self) -> StoreView:
        return StoreView(self, len(self._pages))

    def _count_read(self) -> None:
        with self._read_lock:
            self.reads += 1

    # convenience passthroughs on a fresh snapshot
    def search_bm25(self, query: str, k: int) -> list[RetrievalResult]:
        return self.snapshot().search_bm25(query, k)

    def search_embedding(self, query: str, k: int, provider: EmbeddingProvider | None = None):
        return self.snapshot().search_embedding(query, k, provider)

    def get_by_ids(self, ids) -> list[Page]:
        return self.snapshot().get_by_ids(ids)

    @property
    def doc_lengths(self) -> list[int]:
        return self.snapshot().doc_lengths

    @property
    def avg_doc_length(self) -> float:
        return self.snapshot().avg_doc_length

    def postings(self, term: str) -> list[tuple[int, int]]:
        return list(self._postings.get(term, ()))


class StoreView:
    """Read-only view of the first ``page_count`` pages of a store."""

    def __init__(self, store: PageStore, page_count: int):
        self._store = store
        self.page_count = page_count

    def __len__(self) -> int:
        return self.page_count

    @property
    def pages(self) -> list[Page]:
        return self._store._pages[: self.page_count]

    @property
    def doc_lengths(self) -> list[int]:
        return self._store._doc_lengths[: self.page_count]

    @property
    def avg_doc_length(self) -> float:
        n = self.page_count
        return self._store._length_prefix[n] / n if n else 0.0

    def _postings(self, term: str) -> list[tuple[int, int]]:
        plist = self._store._postings.get(term)
        if not plist:
            return []
        return plist[: bisect_left(plist, self.page_count, key=lambda entry: entry[0])]

    def search_bm25(self, query: str, k: int) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        self._store._count_read()
        n = self.page_count
        terms = tokenize(query).tokens
        if not n or not terms:
            return []
        avg_len = self.avg_doc_length
        lengths = self._store._doc_lengths
        scores: dict[int, float] = {}
        for term in terms:
            plist = self._postings(term)
            if not plist:
                continue
            idf = bm25_idf(n, len(plist))
            for page_id, tf in plist:
                norm = K1 * (1 - B + B * lengths[page_id] / avg_len)
                scores[page_id] = scores.get(page_id, 0.0) + idf * (tf * (K1 + 1)) / (tf + norm)
        ranked = sorted(((s, p) for p, s in scores.items() if s > 0), key=lambda sp: (-sp[0], sp[1]))
        return [RetrievalResult(p, s, "bm25") for s, p in ranked[:k]]

    def search_embedding(self, query: str, k: int,
                         provider: EmbeddingProvider | None = None) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        provider = provider if provider is not None else self._store.embedder
        if provider.dim != self._store.embedder.dim:
            raise DimensionMismatch(f"provider dim {provider.dim} != index dim {self._store.embedder.dim}")
        self._store._count_read()
        n = self.page_count
        if not n:
            return []
        q = np.asarray(provider.embed(query), dtype=float)
        if q.shape != (self._store.embedder.dim,):
            raise DimensionMismatch(f"query vector shape {q.shape}")
        mat = self._store._matrix[:n]
        denom = np.linalg.norm(mat, axis=1) * np.linalg.norm(q)
        dots = mat @ q
        sims = np.divide(dots, denom, out=np.zeros(n), where=denom > 0)
        order = np.lexsort((np.arange(n), -sims))[:k]
        return [RetrievalResult(int(i), float(sims[i]), "embedding") for i in order]

    def get_by_ids(self, ids) -> list[Page]:
        self._store._count_read()
        found, missing = [], []
        for pid in ids:
            if isinstance(pid, int) and 0 <= pid < self.page_count:
                found.append(self._store._pages[pid])
            else:
                missing.append(pid)
        if missing:
            raise UnknownPageId(missing, found)
        return found

    def page(self, page_id: int) -> Page:
        return self.get_by_ids([page_id])[0]


# -- persistence -----------------------------------------------------------

def _jsonl(rows) -> bytes:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows).encode("utf-8")


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def persist(store: PageStore, path, memory: MemoryState | None = None) -> None:
    """Write ``pages.jsonl``, ``memos.jsonl`` and ``manifest.json`` under ``path``.

    Indexes are not written; ``load`` rebuilds them.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    view = store.snapshot()
    memos = memory.memos if memory is not None else ()
    pages_blob = _jsonl(p.to_dict() for p in view.pages)
    memos_blob = _jsonl(m.to_dict() for m in memos)
    manifest = {
        "version": MANIFEST_VERSION,
        "page_count": len(view),
        "memo_count": len(memos),
        "page_size": store.page_size,
        "checksum_pages": hashlib.sha256(pages_blob).hexdigest(),
        "checksum_memos": hashlib.sha256(memos_blob).hexdigest(),
    }
    _write_atomic(path / "pages.jsonl", pages_blob)
    _write_atomic(path / "memos.jsonl", memos_blob)
    _write_atomic(path / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode("utf-8"))


def _read_checked(path: Path) -> tuple[dict, bytes, bytes]:
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise CorruptManifest(f"no manifest.json in {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptManifest(f"unreadable manifest: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise CorruptManifest(f"unsupported manifest version {manifest.get('version')!r}")
    try:
        pages_blob = (path / "pages.jsonl").read_bytes()
        memos_blob = (path / "memos.jsonl").read_bytes()
    except FileNotFoundError as exc:
        raise CorruptManifest(f"missing data file: {exc.filename}") from None
    if hashlib.sha256(pages_blob).hexdigest() != manifest.get("checksum_pages"):
        raise CorruptManifest("pages.jsonl checksum mismatch")
    if hashlib.sha256(memos_blob).hexdigest() != manifest.get("checksum_memos"):
        raise CorruptManifest("memos.jsonl checksum mismatch")
    return manifest, pages_blob, memos_blob


def _rows(blob: bytes) -> list[dict]:
    return [json.loads(line) for line in blob.decode("utf-8").splitlines() if line.strip()]


def load(path, embedder: EmbeddingProvider | None = None, index_headers: bool = True) -> PageStore:
    manifest, pages_blob, _ = _read_checked(Path(path))
    store = PageStore(page_size=manifest["page_size"], embedder=embedder, index_headers=index_headers)
    rows = _rows(pages_blob)
    if len(rows) != manifest["page_count"]:
        raise CorruptManifest("page_count does not match pages.jsonl")
    for row in rows:
        store.append_page(Page.from_dict(row))
    return store


def load_memory(path) -> MemoryState:
    manifest, _, memos_blob = _read_checked(Path(path))
    rows = _rows(memos_blob)
    if len(rows) != manifest["memo_count"]:
        raise CorruptManifest("memo_count does not match memos.jsonl")
    return MemoryState(tuple(Memo.from_dict(r) for r in rows))
