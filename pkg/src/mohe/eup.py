"""End-user-perspective (EuP) scores from purchase sessions.

A genre path's EuP score is the agreement rate between its provided labels
and the catalog labels of purchased items, counting only purchases whose
triggering search query strongly overlaps the provided path's names.
"""

from __future__ import annotations

import unicodedata
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

from .records import SessionRecord, join_path, split_path

Path = tuple[str, ...]


@dataclass(frozen=True)
class EupEntry:
    score: float
    pair_count: int


EupTable = dict[Path, EupEntry]


def _chars(text: str) -> set[str]:
    return {ch for ch in unicodedata.normalize("NFKC", text).casefold() if not ch.isspace()}


def query_length(query: str) -> int:
    """Non-whitespace characters in the query."""
    return sum(1 for ch in query if not ch.isspace())


def query_overlap(query: str, path_names: Iterable[str]) -> float:
    """Share of the query's distinct non-whitespace characters found in the
    concatenated path names (case-insensitive, NFKC-normalized)."""
    q = _chars(query)
    if not q:
        raise ValueError("query has no non-whitespace characters")
    pool = _chars("".join(path_names))
    return len(q & pool) / len(q)


def collect_label_pairs(sessions: Iterable[SessionRecord], catalog_labels: Mapping[str, Path],
                        provided_labels: Mapping[str, Path], level: int, min_query_chars: int = 5,
                        overlap_threshold: float = 0.9) -> list[tuple[Path, Path]]:
    """(provided path, catalog path) pairs, both cut to ``level``, one per
    qualifying purchase.

    A purchase qualifies when the latest search before it in the same session
    has at least ``min_query_chars`` non-whitespace characters and overlaps
    the item's full provided path by strictly more than ``overlap_threshold``.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    pairs = []
    for session in sessions:
        last_query = None
        for event in session.events:
            if event.type == "search":
                last_query = event.query
                continue
            if event.type != "purchase" or last_query is None:
                continue
            provided = provided_labels.get(event.item_id)
            catalog = catalog_labels.get(event.item_id)
            if provided is None or catalog is None or len(provided) < level:
                continue
            if query_length(last_query) < min_query_chars:
                continue
            if query_overlap(last_query, provided) <= overlap_threshold:
                continue
            pairs.append((tuple(provided[:level]), tuple(catalog[:level])))
    return pairs


def eup_scores(pairs: Iterable[tuple[Path, Path]]) -> EupTable:
    agree: dict[Path, int] = defaultdict(int)
    count: dict[Path, int] = defaultdict(int)
    for provided, catalog in pairs:
        count[provided] += 1
        agree[provided] += provided == catalog
    return {p: EupEntry(agree[p] / n, n) for p, n in sorted(count.items())}


def eup_weighted_f1(f1: Mapping[Path, float], eup: EupTable) -> float:
    """Mean over covered genres of EuP(g) * F1(g)."""
    if not eup:
        raise ValueError("empty EuP table")
    missing = [p for p in eup if p not in f1]
    if missing:
        raise KeyError(f"no F1 for {len(missing)} genre path(s), e.g. {join_path(missing[0])!r}")
    return sum(entry.score * f1[p] for p, entry in eup.items()) / len(eup)


def write_eup_table(path, table: EupTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("genre_path\tscore\tpair_count\n")
        for p, e in table.items():
            fh.write(f"{join_path(p)}\t{e.score:.6g}\t{e.pair_count}\n")


def read_eup_table(path) -> EupTable:
    table = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["genre_path", "score", "pair_count"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in fh:
            if not line.strip():
                continue
            name, score, n = line.rstrip("\n").split("\t")
            table[split_path(name)] = EupEntry(float(score), int(n))
    return table
