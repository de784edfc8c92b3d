"""Plain data records shared by the memorizer, the page-store and the researcher."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from .errors import MalformedSession


@dataclass(frozen=True)
class Session:
    id: int
    content: str
    created_at: datetime | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 0:
            raise MalformedSession(f"session id must be a non-negative integer, got {self.id!r}")
        if not isinstance(self.content, str) or not self.content.strip():
            raise MalformedSession("session content must be a non-empty string")

    @classmethod
    def from_dict(cls, row: Any) -> Session:
        if not isinstance(row, dict):
            raise MalformedSession("expected a JSON object")
        if "id" not in row or "content" not in row:
            raise MalformedSession("missing 'id' or 'content'")
        created = row.get("created_at")
        if created is not None:
            try:
                created = datetime.fromisoformat(created)
            except (TypeError, ValueError):
                raise MalformedSession(f"bad created_at {created!r}") from None
        metadata = row.get("metadata") or {}
        if not isinstance(metadata, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
        ):
            raise MalformedSession("metadata must map strings to strings")
        return cls(row["id"], row["content"], created, dict(metadata))


def read_sessions(path) -> list[Session]:
    """Parse a JSON Lines session file. Blank lines are skipped.

    Raises MalformedSession carrying the 1-based row number of the first bad row.
    """
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for row_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sessions.append(Session.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise MalformedSession(f"invalid JSON ({exc.msg})", row=row_no) from None
            except MalformedSession as exc:
                raise MalformedSession(str(exc), row=row_no) from None
    return sessions


@dataclass(frozen=True)
class Page:
    id: int
    header: str
    content: str
    session_id: int

    def to_dict(self) -> dict:
        return {"id": self.id, "session_id": self.session_id, "header": self.header, "content": self.content}

    @classmethod
    def from_dict(cls, row: dict) -> Page:
        return cls(id=row["id"], header=row["header"], content=row["content"], session_id=row["session_id"])

    def render(self) -> str:
        return f"[page {self.id}] {self.header} ∥ {self.content}"


@dataclass(frozen=True)
class Memo:
    text: str
    source_page_ids: tuple[int, ...]
    session_id: int

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "source_page_ids": list(self.source_page_ids), "text": self.text}

    @classmethod
    def from_dict(cls, row: dict) -> Memo:
        return cls(text=row["text"], source_page_ids=tuple(row["source_page_ids"]), session_id=row["session_id"])


@dataclass(frozen=True)
class MemoryState:
    """Append-only list of memos. Appending returns a new state."""

    memos: tuple[Memo, ...] = ()

    def __len__(self) -> int:
        return len(self.memos)

    def extend(self, memos) -> MemoryState:
        return MemoryState(self.memos + tuple(memos))

    @property
    def last_session_id(self) -> int | None:
        return self.memos[-1].session_id if self.memos else None
