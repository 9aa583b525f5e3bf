"""Line-delimited JSON records for catalog items and user sessions."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

EVENT_TYPES = ("search", "click", "add_to_cart", "purchase")
PATH_SEP = ">"

log = logging.getLogger(__name__)


class RecordError(ValueError):
    """A malformed input line; ``errors`` holds (line number, message) pairs."""

    def __init__(self, errors: list[tuple[int, str]], path=None):
        self.errors = errors
        where = f"{path}: " if path else ""
        lines = "; ".join(f"line {n}: {msg}" for n, msg in errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        super().__init__(f"{where}{len(errors)} malformed record(s): {lines}{more}")


@dataclass
class ItemRecord:
    id: str
    title: str
    genre_path: tuple[str, ...]
    shop_id: str | None = None
    tag_ids: list[str] = field(default_factory=list)
    description_tokens: list[tuple[str, str]] = field(default_factory=list)
    purchased: bool = False
    added_to_cart: bool = False

    def path_at(self, level: int | None) -> tuple[str, ...]:
        return self.genre_path if level is None else self.genre_path[:level]

    def to_json(self) -> dict:
        d = {"id": self.id, "title": self.title, "genre_path": list(self.genre_path)}
        if self.shop_id is not None:
            d["shop_id"] = self.shop_id
        if self.tag_ids:
            d["tag_ids"] = self.tag_ids
        if self.description_tokens:
            d["description_tokens"] = [list(p) for p in self.description_tokens]
        if self.purchased:
            d["purchased"] = True
        if self.added_to_cart:
            d["added_to_cart"] = True
        return d


@dataclass
class SessionEvent:
    timestamp: float
    type: str
    query: str | None = None
    item_id: str | None = None


@dataclass
class SessionRecord:
    session_id: str
    user: str
    events: list[SessionEvent]

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "user": self.user,
            "events": [{k: v for k, v in vars(e).items() if v is not None} for e in self.events],
        }


def join_path(path) -> str:
    return PATH_SEP.join(path)


def split_path(text: str) -> tuple[str, ...]:
    return tuple(text.split(PATH_SEP)) if text else ()


def _str(d: dict, key: str, required: bool = True):
    if key not in d or d[key] is None:
        if required:
            raise ValueError(f"missing required field {key!r}")
        return None
    if not isinstance(d[key], str):
        raise ValueError(f"field {key!r} must be a string")
    return d[key]


def parse_item(d: dict) -> ItemRecord:
    if not isinstance(d, dict):
        raise ValueError("record is not an object")
    path = d.get("genre_path")
    if isinstance(path, str):
        path = split_path(path)
    if not path or not all(isinstance(p, str) and p for p in path):
        raise ValueError("genre_path must be a non-empty list of names")
    tags = d.get("tag_ids") or []
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ValueError("tag_ids must be a list of strings")
    desc = d.get("description_tokens") or []
    if not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in desc):
        raise ValueError("description_tokens must be [token, pos] pairs")
    return ItemRecord(
        id=_str(d, "id"),
        title=_str(d, "title"),
        genre_path=tuple(path),
        shop_id=_str(d, "shop_id", required=False),
        tag_ids=list(tags),
        description_tokens=[(str(a), str(b)) for a, b in desc],
        purchased=bool(d.get("purchased", False)),
        added_to_cart=bool(d.get("added_to_cart", False)),
    )


def parse_session(d: dict) -> SessionRecord:
    if not isinstance(d, dict):
        raise ValueError("record is not an object")
    events = d.get("events")
    if not isinstance(events, list):
        raise ValueError("missing required field 'events'")
    parsed = []
    last = float("-inf")
    for e in events:
        kind = e.get("type")
        if kind not in EVENT_TYPES:
            raise ValueError(f"unknown event type {kind!r}")
        ts = e.get("timestamp")
        if not isinstance(ts, (int, float)):
            raise ValueError("event timestamp must be a number")
        if ts < last:
            raise ValueError("event timestamps must be non-decreasing")
        last = ts
        query, item = e.get("query"), e.get("item_id")
        if kind == "search" and not isinstance(query, str):
            raise ValueError("search event without a query")
        if kind in ("click", "purchase", "add_to_cart") and not isinstance(item, str):
            raise ValueError(f"{kind} event without an item_id")
        parsed.append(SessionEvent(float(ts), kind, query, item))
    return SessionRecord(_str(d, "session_id"), _str(d, "user"), parsed)


def _read_lines(path, parse, error_budget: int) -> list:
    out, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except (ValueError, TypeError, AttributeError) as exc:
                errors.append((lineno, str(exc)))
                if len(errors) > error_budget:
                    raise RecordError(errors, path) from None
    for lineno, msg in errors:
        log.warning("%s: skipped line %d: %s", path, lineno, msg)
    return out


def ingest_items(path, error_budget: int = 0) -> list[ItemRecord]:
    items = _read_lines(path, parse_item, error_budget)
    seen = set()
    for item in items:
        if item.id in seen:
            raise RecordError([(0, f"duplicate item id {item.id!r}")], path)
        seen.add(item.id)
    return items


def ingest_sessions(path, error_budget: int = 0) -> list[SessionRecord]:
    return _read_lines(path, parse_session, error_budget)


def write_jsonl(path, records) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json() if hasattr(r, "to_json") else r, ensure_ascii=False) + "\n")
