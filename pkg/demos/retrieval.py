"""
Three ways to read the page-store
=================================

BM25 for keywords, hashed bag-of-words vectors for fuzzy overlap, and
direct lookup by page id. Snapshots pin what a reader can see.
"""
from gam import Page, PageStore
from gam.pagestore import HashingEmbedder

store = PageStore(embedder=HashingEmbedder(dim=256))
texts = [
    "Alice booked a flight to Lisbon for the conference.",
    "The conference keynote covers vector databases.",
    "Bob prefers trains over flights when travelling in Europe.",
    "Lisbon has excellent custard tarts.",
]
for i, text in enumerate(texts):
    store.append_page(Page(i, f"session {i}", text, i))

###############################################################################
# Keyword search ranks by BM25 and breaks ties by page id.
for hit in store.search_bm25("Lisbon conference", 3):
    print(f"bm25      page {hit.page_id}  {hit.score:.4f}")

###############################################################################
# Embedding search uses cosine similarity of L2-normalized hashed vectors.
for hit in store.search_embedding("trains in Europe", 2):
    print(f"embedding page {hit.page_id}  {hit.score:.4f}")

###############################################################################
# A snapshot taken now ignores pages appended later.
view = store.snapshot()
store.append_page(Page(4, "session 4", "Lisbon trip cancelled.", 4))
print("snapshot sees", len(view.pages), "pages; store has", len(store))
print([h.page_id for h in view.search_bm25("Lisbon", 5)], "vs", [h.page_id for h in store.search_bm25("Lisbon", 5)])
print(store.get_by_ids([3, 0])[0].render())
