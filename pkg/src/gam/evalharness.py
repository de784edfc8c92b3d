"""QA metrics, baselines and benchmark runs over memory-grounded QA records."""
from __future__ import annotations

import json
import logging
import math
import re
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .memorizer import ingest_all, render_memory
from .modelbackend import Backend, prompt
from .pagestore import PageStore
from .records import MemoryState, Page, Session
from .researcher import ResearchConfig, research
from .textcore import count_tokens, segment_into_pages

log = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and the articles a/an/the, squeeze spaces."""
    text = text.lower()
    text = "".join(
        " " if ch in string.punctuation or unicodedata.category(ch).startswith("P") else ch
        for ch in text
    )
    return " ".join(_ARTICLES.sub(" ", text).split())


def _tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def _f1(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, golds: list[str]) -> float:
    if not golds:
        raise ValueError("need at least one gold answer")
    pred = _tokens(prediction)
    return max(_f1(pred, _tokens(g)) for g in golds)


def _bleu1(pred: list[str], gold: list[str], brevity_penalty: bool) -> float:
    if not pred:
        return 0.0
    gold_counts = Counter(gold)
    clipped = sum(min(c, gold_counts[t]) for t, c in Counter(pred).items())
    precision = clipped / len(pred)
    if not brevity_penalty or precision == 0:
        return precision
    c, r = len(pred), len(gold)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return precision * bp


def bleu1(prediction: str, golds: list[str], brevity_penalty: bool = True) -> float:
    """Clipped unigram precision times brevity penalty, best over golds."""
    if not golds:
        raise ValueError("need at least one gold answer")
    pred = _tokens(prediction)
    return max(_bleu1(pred, _tokens(g), brevity_penalty) for g in golds)


def exact_match(prediction: str, golds: list[str]) -> bool:
    norm = normalize_answer(prediction)
    return any(norm == normalize_answer(g) for g in golds)


# -- records -----------------------------------------------------------------

@dataclass(frozen=True)
class QaExample:
    history: tuple[Session, ...]
    question: str
    gold_answers: tuple[str, ...] = ()
    choices: tuple[str, ...] | None = None
    gold_index: int | None = None
    category: str | None = None

    def __post_init__(self):
        if not self.history:
            raise ValueError("history is empty")
        if not self.gold_answers and self.gold_index is None:
            raise ValueError("need gold answers or a gold choice index")

    @property
    def golds(self) -> list[str]:
        if self.gold_answers:
            return list(self.gold_answers)
        return [self.choices[self.gold_index]]

    @classmethod
    def from_dict(cls, row: dict) -> QaExample:
        choices = row.get("choices")
        return cls(
            history=tuple(Session.from_dict(s) for s in row["history"]),
            question=row["question"],
            gold_answers=tuple(row.get("answers") or ()),
            choices=tuple(choices) if choices is not None else None,
            gold_index=row.get("gold_index"),
            category=row.get("category"),
        )

    def to_dict(self) -> dict:
        row = {"history": [{"id": s.id, "content": s.content} for s in self.history],
               "question": self.question, "answers": list(self.gold_answers)}
        if self.choices is not None:
            row["choices"] = list(self.choices)
            row["gold_index"] = self.gold_index
        if self.category is not None:
            row["category"] = self.category
        return row


def load_dataset(path) -> list[QaExample]:
    with open(path, encoding="utf-8") as fh:
        return [QaExample.from_dict(json.loads(line)) for line in fh if line.strip()]


class Mode(str, Enum):
    GAM = "gam"
    RAG = "rag"
    CHUNKED_MAX = "chunked_max"
    MEMORY_ONLY = "memory_only"
    RESEARCH_ONLY = "research_only"


@dataclass
class ExampleScore:
    f1: float = 0.0
    bleu1: float = 0.0
    correct: bool | None = None
    prediction: str = ""
    context_tokens: int = 0
    store_reads: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MetricReport:
    mode: Mode
    per_example: list[ExampleScore] = field(default_factory=list)

    @property
    def mean_f1(self) -> float:
        return _mean(s.f1 for s in self.per_example)

    @property
    def mean_bleu1(self) -> float:
        return _mean(s.bleu1 for s in self.per_example)

    @property
    def accuracy(self) -> float:
        return _mean(float(bool(s.correct)) for s in self.per_example)

    @property
    def token_cost(self) -> float:
        return _mean(s.context_tokens for s in self.per_example)

    @property
    def errors(self) -> int:
        return sum(s.error is not None for s in self.per_example)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "aggregates": {"f1": self.mean_f1, "bleu1": self.mean_bleu1, "accuracy": self.accuracy,
                           "token_cost": self.token_cost, "n": len(self.per_example), "errors": self.errors},
            "per_example": [s.to_dict() for s in self.per_example],
        }

    def table(self) -> str:
        head = f"{'mode':<14}{'n':>6}{'f1':>9}{'bleu1':>9}{'acc':>9}{'tokens':>10}{'errors':>8}"
        row = (f"{self.mode.value:<14}{len(self.per_example):>6}{self.mean_f1:>9.4f}{self.mean_bleu1:>9.4f}"
               f"{self.accuracy:>9.4f}{self.token_cost:>10.1f}{self.errors:>8}")
        return f"{head}\n{row}"

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


# -- answering and baselines ------------------------------------------------

def answer(question: str, context: str, backend: Backend, context_budget: int = 96_000) -> str:
    return backend.complete(prompt("answer", {"question": question, "context": context or "(empty)"},
                                   context_budget)).strip()


def _is_correct(prediction: str, example: QaExample) -> bool:
    if example.choices is not None and example.gold_index is not None:
        letter = chr(ord("A") + example.gold_index)
        norm = prediction.strip().strip(".):").upper()
        if norm == letter:
            return True
    return exact_match(prediction, example.golds)


def _question_text(example: QaExample) -> str:
    if not example.choices:
        return example.question
    options = "\n".join(f"{chr(ord('A') + i)}. {c}" for i, c in enumerate(example.choices))
    return f"{example.question}\n{options}"


def _history_text(example: QaExample) -> str:
    return "\n\n".join(s.content for s in example.history)


@dataclass
class RagResult:
    context: str
    page_ids: list[int]
    answer: str | None = None


def rag_baseline(example: QaExample, backend: Backend | None = None, *, segment_size: int = 2048,
                 top_k: int = 5, retriever: str = "bm25", separator: str = "\n\n") -> RagResult:
    """Split the whole history into fixed segments and answer from the top-k hits."""
    store = PageStore(page_size=segment_size, index_headers=False)
    for i, chunk in enumerate(segment_into_pages(_history_text(example), segment_size)):
        store.append_page(Page(i, "", chunk, 0))
    if retriever == "bm25":
        hits = store.search_bm25(example.question, top_k)
    elif retriever == "embedding":
        hits = store.search_embedding(example.question, top_k)
    else:
        raise ValueError(f"unknown retriever {retriever!r}")
    ids = [h.page_id for h in hits]
    if len(store) == 1 and not ids:
        ids = [0]
    context = separator.join(p.content for p in store.get_by_ids(ids))
    result = RagResult(context, ids)
    if backend is not None:
        result.answer = answer(_question_text(example), context, backend)
    return result


@dataclass
class ChunkedMaxResult:
    score: float
    answers: list[str]
    best_chunk: int


def chunked_max_baseline(example: QaExample, window: int, backend: Backend, metric=token_f1) -> ChunkedMaxResult:
    """Answer each window of the history separately, score the best one."""
    if window < 1:
        raise ValueError("window must be >= 1")
    chunks = segment_into_pages(_history_text(example), window)
    answers = [answer(_question_text(example), chunk, backend) for chunk in chunks]
    scores = [metric(a, example.golds) for a in answers]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return ChunkedMaxResult(scores[best], answers, best)


# -- benchmark ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    page_size: int = 2048
    research: ResearchConfig = ResearchConfig()
    rag_segment_size: int = 2048
    rag_top_k: int = 5
    rag_retriever: str = "bm25"
    chunk_window: int = 128_000
    brevity_penalty: bool = True


def _score(prediction: str, example: QaExample, cfg: BenchmarkConfig) -> ExampleScore:
    golds = example.golds
    return ExampleScore(f1=token_f1(prediction, golds), bleu1=bleu1(prediction, golds, cfg.brevity_penalty),
                        correct=_is_correct(prediction, example), prediction=prediction)


def evaluate_example(example: QaExample, mode: Mode, backend: Backend,
                     cfg: BenchmarkConfig = BenchmarkConfig()) -> ExampleScore:
    mode = Mode(mode)
    if mode is Mode.RAG:
        rag = rag_baseline(example, backend, segment_size=cfg.rag_segment_size, top_k=cfg.rag_top_k,
                           retriever=cfg.rag_retriever)
        score = _score(rag.answer, example, cfg)
        score.context_tokens = count_tokens(rag.context)
        return score
    if mode is Mode.CHUNKED_MAX:
        chunked = chunked_max_baseline(example, cfg.chunk_window, backend)
        scores = [_score(a, example, cfg) for a in chunked.answers]
        best = scores[chunked.best_chunk]
        best.bleu1 = max(s.bleu1 for s in scores)
        best.correct = any(s.correct for s in scores)
        best.context_tokens = min(cfg.chunk_window, count_tokens(_history_text(example)))
        return best

    store = PageStore(page_size=cfg.page_size)
    memory, _ = ingest_all(example.history, MemoryState(), store, backend)
    reads_before = store.reads
    if mode is Mode.MEMORY_ONLY:
        context = render_memory(memory)
    else:
        seen_memory = MemoryState() if mode is Mode.RESEARCH_ONLY else memory
        final, _ = research(example.question, seen_memory, store, backend, cfg.research)
        context = final.context
    score = _score(answer(_question_text(example), context, backend), example, cfg)
    score.context_tokens = count_tokens(context)
    score.store_reads = store.reads - reads_before
    return score


def run_benchmark(dataset, mode: Mode | str, backend: Backend,
                  config: BenchmarkConfig = BenchmarkConfig()) -> MetricReport:
    """Evaluate every example in order; a failing example scores zero and is flagged."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    mode = Mode(mode)
    report = MetricReport(mode)
    for i, example in enumerate(dataset):
        try:
            report.per_example.append(evaluate_example(example, mode, backend, config))
        except Exception as exc:
            log.warning("example %d failed: %s", i, exc)
            report.per_example.append(ExampleScore(correct=False, error=f"{type(exc).__name__}: {exc}"))
    return report


__all__ = [
    "BenchmarkConfig", "ChunkedMaxResult", "ExampleScore", "MetricReport", "Mode", "QaExample", "RagResult",
    "answer", "bleu1", "chunked_max_baseline", "evaluate_example", "exact_match", "load_dataset",
    "normalize_answer", "rag_baseline", "run_benchmark", "token_f1",
]
