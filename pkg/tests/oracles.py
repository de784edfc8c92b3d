"""Independent reference computations used to check the fast paths.

Everything here scans the whole corpus per query and shares no code with the
index beyond tokenization.
"""
from __future__ import annotations

import math

import numpy as np

from gam.textcore import tokenize


def brute_bm25(docs: list[str], query: str, k: int, k1: float = 1.2, b: float = 0.75):
    toks = [list(tokenize(d).tokens) for d in docs]
    n = len(toks)
    if n == 0:
        return []
    avg = sum(len(t) for t in toks) / n
    q = list(tokenize(query).tokens)
    scored = []
    for pid, dt in enumerate(toks):
        score = 0.0
        for term in q:
            tf = dt.count(term)
            if tf == 0:
                continue
            df = sum(1 for other in toks if term in other)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            score = score + idf * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * len(dt) / avg))
        if score > 0:
            scored.append((pid, score))
    scored.sort(key=lambda ps: (-ps[1], ps[0]))
    return scored[:k]


def brute_cosine(vectors: list[np.ndarray], query: np.ndarray, k: int):
    scored = []
    for pid, v in enumerate(vectors):
        nv, nq = math.sqrt(float(np.dot(v, v))), math.sqrt(float(np.dot(query, query)))
        sim = float(np.dot(v, query)) / (nv * nq) if nv > 0 and nq > 0 else 0.0
        scored.append((pid, sim))
    scored.sort(key=lambda ps: (-ps[1], ps[0]))
    return scored[:k]


def ref_f1(pred: list[str], gold: list[str]) -> float:
    """Bag overlap by explicit removal from a copy of the gold list."""
    if not pred and not gold:
        return 1.0
    remaining = list(gold)
    overlap = 0
    for tok in pred:
        if tok in remaining:
            remaining.remove(tok)
            overlap += 1
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(gold)
    return 2 * p * r / (p + r)


def ref_clipped_precision(pred: list[str], gold: list[str]) -> float:
    used: dict[str, int] = {}
    hits = 0
    for tok in pred:
        if used.get(tok, 0) < gold.count(tok):
            used[tok] = used.get(tok, 0) + 1
            hits += 1
    return hits / len(pred) if pred else 0.0
