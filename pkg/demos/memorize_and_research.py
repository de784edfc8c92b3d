"""
Memorize a history, then research it
====================================

Sessions go in one at a time. Each becomes a page (header plus the raw text)
and a short memo. A research request then plans searches from the memo list,
reads pages and reflects until the answer is good enough.

A scripted backend stands in for the language model so the run is
deterministic and needs no network.
"""
import json

from gam import MemoryState, PageStore, ResearchConfig, Session, research
from gam.memorizer import ingest_all, render_memory
from gam.modelbackend import ScriptedBackend, ScriptRule


def reply(task, response, contains=""):
    pattern = rf"^## task: {task}\b" + (rf"[\s\S]*{contains}" if contains else "")
    if not isinstance(response, str):
        response = json.dumps(response)
    return ScriptRule(pattern, response, regex=True)


backend = ScriptedBackend([
    reply("header", "(no prior context)"),
    reply("memorize", "User talked about their pet.", contains="dog"),
    reply("memorize", "Small talk about food."),
    reply("plan", {"reasoning": "the memo mentions a pet", "calls": [{"tool": "bm25", "query": "dog name"}]}),
    reply("integrate", {"text": "The user's dog is called Rex.", "cited": [1]}, contains="Rex"),
    reply("reflect", {"sufficient": True}),
])

history = [
    Session(0, "We had pasta for lunch and argued about parmesan."),
    Session(1, "My dog is named Rex and he hates the vacuum cleaner."),
    Session(2, "Thinking about sushi for dinner tomorrow."),
]

###############################################################################
# Ingest. Memos are lossy, pages keep everything.
store = PageStore()
memory, page_ids = ingest_all(history, MemoryState(), store, backend)
print(render_memory(memory))
print("pages:", page_ids)

###############################################################################
# Research. The trace records each plan, retrieval and reflection.
final, trace = research("What is the dog's name?", memory, store, backend, ResearchConfig())
print(final.context)
print("iterations:", len(trace.iterations), "termination:", trace.termination.value)

###############################################################################
# The same request with the cited pages appended verbatim.
final, _ = research("What is the dog's name?", memory, store, backend,
                    ResearchConfig(output_format="integration-with-page"))
print(final.context)
