"""Word-level tokenization, page segmentation and middle truncation.

Tokens are maximal runs of alphanumeric characters, lowercased. Every other
module counts "tokens" with these helpers, so budgets are word budgets.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

ELLIPSIS = "..."

_TOKEN_RE = re.compile(r"[^\W_]+")


def _fold(text: str) -> str:
    # U+0130 is the only code point whose lower() is two characters; mapping it
    # first keeps folded offsets aligned with the original text.
    return text.replace("İ", "I").lower()


@dataclass(frozen=True)
class TokenizedText:
    tokens: tuple[str, ...]
    source_len: int

    def __len__(self) -> int:
        return len(self.tokens)


def _spans(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in _TOKEN_RE.finditer(_fold(text))]


def tokenize(text: str) -> TokenizedText:
    return TokenizedText(tuple(_TOKEN_RE.findall(_fold(text))), len(text))


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(_fold(text)))


def segment_into_pages(text: str, page_size: int) -> list[str]:
    """Split ``text`` into consecutive chunks of at most ``page_size`` tokens.

    Cuts are placed just before the first token of each new chunk, so joining
    the chunks gives back ``text`` exactly. Blank text yields no chunks; text
    with characters but no tokens yields a single chunk.
    """
    if page_size < 1:
        raise ValueError("page_size must be >= 1")
    if not text.strip():
        return []
    spans = _spans(text)
    if not spans:
        return [text]
    cuts = [0] + [spans[i][0] for i in range(page_size, len(spans), page_size)]
    cuts.append(len(text))
    return [text[a:b] for a, b in zip(cuts, cuts[1:])]


def truncate_middle(text: str, budget: int) -> str:
    """Keep the first ceil(budget/2) and last floor(budget/2) tokens.

    The dropped middle is replaced with ``" ... "``. Text already within
    budget is returned unchanged.
    """
    if budget < 2:
        raise ValueError("budget must be >= 2")
    spans = _spans(text)
    n = len(spans)
    if n <= budget:
        return text
    head = math.ceil(budget / 2)
    tail = budget // 2
    return f"{text[:spans[head - 1][1]]} {ELLIPSIS} {text[spans[n - tail][0]:]}"
