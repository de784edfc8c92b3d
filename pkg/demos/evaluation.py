"""
Scoring answers and comparing modes
===================================

Token F1 and BLEU-1 on normalized text, then a toy benchmark where the memos
are too vague to answer from but the pages hold the fact.
"""
import json

from gam import QaExample, Session
from gam.evalharness import BenchmarkConfig, Mode, bleu1, rag_baseline, run_benchmark, token_f1
from gam.modelbackend import ScriptedBackend, ScriptRule

print(f"f1    {token_f1('red apple pie', ['apple pie']):.4f}")
print(f"bleu1 {bleu1('apple pie', ['apple pie good']):.4f}")
print(f"bleu1 {bleu1('x x x x', ['x']):.4f}")


def reply(task, response, contains=""):
    pattern = rf"^## task: {task}\b" + (rf"[\s\S]*{contains}" if contains else "")
    return ScriptRule(pattern, response if isinstance(response, str) else json.dumps(response), regex=True)


example = QaExample(
    history=(Session(0, "Weather chat, nothing much."),
             Session(1, "The locker combination is 4417, do not share it."),
             Session(2, "More weather chat.")),
    question="What is the locker combination?",
    gold_answers=("4417",),
)
backend = ScriptedBackend([
    reply("header", "(no prior context)"),
    reply("memorize", "Casual conversation."),
    reply("plan", {"calls": [{"tool": "bm25", "query": "locker combination"}]}),
    reply("integrate", {"text": "The locker combination is 4417.", "cited": [1]}, contains="4417"),
    reply("reflect", {"sufficient": True}),
    reply("answer", "4417", contains="4417"),
    reply("answer", "I don't know"),
])

###############################################################################
# Memory alone cannot answer; research over the pages can.
cfg = BenchmarkConfig()
for mode in (Mode.MEMORY_ONLY, Mode.GAM, Mode.RAG):
    print(run_benchmark([example], mode, backend, cfg).table().splitlines()[1])

###############################################################################
# The RAG baseline on its own: fixed segments, top-k by BM25.
print(rag_baseline(example, segment_size=12, top_k=1).context)
