"""Log template mining with a fixed-depth parse tree.

Events route through the tree first by token count, then by their leading
tokens (up to ``tree_depth - 2`` levels), and finally merge into the leaf
cluster with the highest token-wise similarity at or above the threshold.
Mismatched positions are replaced by the wildcard token. Tokens containing
digits are pre-masked to the wildcard before routing so that IPs, ids and
counters do not fragment templates.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .model import LogEvent, MetricSeries

WILDCARD = "<*>"


class EmptyMessage(ValueError):
    pass


class InvalidSpan(ValueError):
    pass


@dataclass(frozen=True)
class DrainConfig:
    tree_depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100

    def __post_init__(self) -> None:
        if self.tree_depth < 3:
            raise ValueError("tree_depth must be >= 3")
        if not (0.0 < self.similarity_threshold < 1.0):
            raise ValueError("similarity_threshold must be in (0, 1)")
        if self.max_children < 1:
            raise ValueError("max_children must be positive")


def tokenize(message: str) -> tuple[str, ...]:
    """Whitespace split with digit-bearing tokens masked to the wildcard."""
    return tuple(
        WILDCARD if any(ch.isdigit() for ch in tok) else tok
        for tok in message.split()
    )


@dataclass
class LogTemplate:
    template_id: int
    tokens: tuple[str, ...]
    support: int
    novel: bool = False
    sample_message: str = ""

    @property
    def template_str(self) -> str:
        return " ".join(self.tokens)


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self) -> None:
        self.children: dict = {}
        self.clusters: list[int] = []


def _similarity(template: Sequence[str], tokens: Sequence[str]) -> tuple[float, int]:
    """Return (similarity, wildcard count); wildcard template positions do
    not count as matches but stay in the denominator."""
    if not template:
        return (1.0 if not tokens else 0.0), 0
    sim = 0
    wild = 0
    for t, s in zip(template, tokens):
        if t == WILDCARD:
            wild += 1
        elif t == s:
            sim += 1
    return sim / len(template), wild


class TemplateTable:
    """Mined template set plus the parse tree that routes events to it.

    Mining mutates the table (single writer); ``match`` is read-only and
    safe to call concurrently once mining is done.
    """

    def __init__(self, config: DrainConfig) -> None:
        self.config = config
        self.templates: dict[int, LogTemplate] = {}
        self._root = _Node()
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def template_list(self) -> list[LogTemplate]:
        return [self.templates[k] for k in sorted(self.templates)]

    def clone(self) -> "TemplateTable":
        return copy.deepcopy(self)

    # internal tree walk; the leaf is the node reached after consuming the
    # token-count level plus up to (tree_depth - 2) leading tokens
    def _walk(self, tokens: Sequence[str], insert: bool) -> Optional[_Node]:
        node = self._root.children.get(len(tokens))
        if node is None:
            if not insert:
                return None
            node = _Node()
            self._root.children[len(tokens)] = node
        for tok in tokens[: self.config.tree_depth - 2]:
            child = node.children.get(tok)
            if child is None and not insert:
                child = node.children.get(WILDCARD)
                if child is None:
                    return None
            elif child is None:
                if tok == WILDCARD:
                    child = node.children.setdefault(WILDCARD, _Node())
                elif WILDCARD in node.children:
                    # fan-out cap: overflow word tokens share the wildcard branch
                    if len(node.children) < self.config.max_children:
                        child = node.children[tok] = _Node()
                    else:
                        child = node.children[WILDCARD]
                elif len(node.children) + 1 < self.config.max_children:
                    child = node.children[tok] = _Node()
                else:
                    child = node.children.setdefault(WILDCARD, _Node())
            node = child
        return node

    def _best_cluster(self, leaf: _Node, tokens: Sequence[str]) -> Optional[LogTemplate]:
        best: Optional[LogTemplate] = None
        best_key = (-1.0, -1)
        for tid in leaf.clusters:
            tpl = self.templates[tid]
            if len(tpl.tokens) != len(tokens):
                continue
            sim, wild = _similarity(tpl.tokens, tokens)
            if (sim, wild) > best_key:
                best_key = (sim, wild)
                best = tpl
        if best is not None and best_key[0] >= self.config.similarity_threshold:
            return best
        return None

    def learn(self, event: LogEvent) -> int:
        """Route one event, merging into an existing cluster or creating a
        new one; returns the template id the event was assigned to."""
        tokens = tokenize(event.message)
        leaf = self._walk(tokens, insert=True)
        assert leaf is not None
        hit = self._best_cluster(leaf, tokens)
        if hit is None:
            tid = self._next_id
            self._next_id += 1
            self.templates[tid] = LogTemplate(
                template_id=tid, tokens=tokens, support=1,
                sample_message=event.message,
            )
            leaf.clusters.append(tid)
            return tid
        hit.tokens = tuple(
            t if t == s else WILDCARD for t, s in zip(hit.tokens, tokens)
        )
        hit.support += 1
        return hit.template_id

    def match(self, event: LogEvent) -> Optional[int]:
        """Template id for the event, or None when no cluster reaches the
        similarity threshold. Never mutates the table."""
        if not event.message.strip():
            raise EmptyMessage("log message is blank")
        tokens = tokenize(event.message)
        leaf = self._walk(tokens, insert=False)
        if leaf is None:
            return None
        hit = self._best_cluster(leaf, tokens)
        return None if hit is None else hit.template_id

    def to_dict(self) -> dict:
        return {
            "config": {
                "tree_depth": self.config.tree_depth,
                "similarity_threshold": self.config.similarity_threshold,
                "max_children": self.config.max_children,
            },
            "templates": [
                {
                    "template_id": t.template_id,
                    "template": t.template_str,
                    "support": t.support,
                    "novel": t.novel,
                    "sample_message": t.sample_message,
                }
                for t in self.template_list
            ],
        }

    def export(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")


def mine_templates(events: Iterable[LogEvent], config: DrainConfig) -> TemplateTable:
    table = TemplateTable(config)
    for ev in events:
        table.learn(ev)
    return table


def match_log(table: TemplateTable, event: LogEvent) -> Optional[int]:
    return table.match(event)


def detect_novel_templates(
    pre_table: TemplateTable, post_events: Iterable[LogEvent]
) -> list[LogTemplate]:
    """Mine post-change events against a copy of the pre-change table and
    return the clusters that only post-change events created, with their
    first raw message retained verbatim."""
    work = pre_table.clone()
    known = set(pre_table.templates)
    for ev in post_events:
        work.learn(ev)
    novel = []
    for tid in sorted(work.templates):
        if tid not in known:
            tpl = work.templates[tid]
            tpl.novel = True
            novel.append(tpl)
    return novel


def frequency_series(
    events: Iterable[LogEvent],
    table: TemplateTable,
    window_seconds: int,
    span: tuple[int, int],
) -> list[MetricSeries]:
    """Per-template event counts over fixed windows covering ``span``.

    The span is half-open [start, end); the last partial window is kept.
    Events that match no template are not counted anywhere.
    """
    start, end = span
    if start >= end:
        raise InvalidSpan(f"span start {start} >= end {end}")
    if window_seconds <= 0:
        raise InvalidSpan("window_seconds must be positive")
    n_windows = -(-(end - start) // window_seconds)
    counts = {tid: [0] * n_windows for tid in table.templates}
    for ev in events:
        if not (start <= ev.timestamp < end):
            continue
        tid = table.match(ev)
        if tid is None:
            continue
        counts[tid][(ev.timestamp - start) // window_seconds] += 1
    ts = tuple(start + i * window_seconds for i in range(n_windows))
    return [
        MetricSeries(
            name=f"log_template_{tid}",
            unit="count/window",
            timestamps=ts,
            values=tuple(float(c) for c in counts[tid]),
        )
        for tid in sorted(counts)
    ]
