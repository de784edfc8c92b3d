import random

import pytest

from gam.pagestore import PageStore
from gam.records import Page

VOCAB = [f"w{i}" for i in range(60)]


def make_store(texts, headers=None, **kw) -> PageStore:
    store = PageStore(**kw)
    for i, text in enumerate(texts):
        store.append_page(Page(i, headers[i] if headers else "", text, i))
    return store


def random_corpus(rng: random.Random, n_pages: int, vocab=VOCAB, max_len: int = 40) -> list[str]:
    # zipf-ish weights so that common and rare terms both occur
    weights = [1 / (i + 1) for i in range(len(vocab))]
    return [" ".join(rng.choices(vocab, weights, k=rng.randint(1, max_len))) for _ in range(n_pages)]


def random_query(rng: random.Random, vocab=VOCAB) -> str:
    return " ".join(rng.choices(vocab + ["absent"], k=rng.randint(1, 4)))


@pytest.fixture
def apple_store():
    return make_store(["apple banana", "apple apple", "cherry"])


def task(name: str, contains: str = "") -> str:
    """Regex matching a prompt for ``name`` whose text contains ``contains``."""
    import re

    pattern = rf"^## task: {name}\b"
    if contains:
        pattern += rf"[\s\S]*{re.escape(contains)}"
    return pattern


def rule(name: str, response, contains: str = "", **kw):
    import json

    from gam.modelbackend import ScriptRule

    if not isinstance(response, str):
        response = json.dumps(response)
    return ScriptRule(task(name, contains), response, regex=True, **kw)


def memorizer_rules(header: str = "(no prior context)", memo: str = "A memo."):
    return [rule("header", header), rule("memorize", memo)]


# -- acceptance report -------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
