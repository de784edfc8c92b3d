"""
Saving and reloading a store
============================

A store directory holds pages.jsonl, memos.jsonl and a checksummed
manifest. Indexes are rebuilt on load, so a reloaded store answers queries
exactly like the original.
"""
import tempfile
from pathlib import Path

from gam import MemoryState, Page, PageStore
from gam import pagestore
from gam.errors import CorruptManifest
from gam.records import Memo

store = PageStore(page_size=64)
for i, text in enumerate(["red fox jumps", "lazy dog sleeps", "fox and dog play"]):
    store.append_page(Page(i, "", text, i))
memory = MemoryState(tuple(Memo(f"memo {i}", (i,), i) for i in range(3)))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "mem"
    pagestore.persist(store, path, memory)
    print(sorted(p.name for p in path.iterdir()))

    loaded = pagestore.load(path)
    print(loaded.search_bm25("fox dog", 3) == store.search_bm25("fox dog", 3))
    print(len(pagestore.load_memory(path)), "memos")

    ###########################################################################
    # Tampering is detected by the manifest checksums.
    with open(path / "pages.jsonl", "a", encoding="utf-8") as fh:
        fh.write("{}\n")
    try:
        pagestore.load(path)
    except CorruptManifest as exc:
        print("refused:", exc)
