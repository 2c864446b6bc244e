"""Rule-based caption filtering.

A rule set is an ordered list of ``reason: pattern`` pairs read from a text
file; the first matching rule decides the verdict.  The reserved reason
``duration`` takes a length in seconds and rejects longer clips.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from ..errors import ConfigurationError, FormatError

DURATION = "duration"
KEPT = "kept"
REJECTED = "rejected"


@dataclass(frozen=True)
class Rule:
    reason: str
    pattern: re.Pattern | None = None
    max_duration: float | None = None

    def matches(self, rec: "CaptionRecord") -> bool:
        if self.max_duration is not None:
            return rec.duration > self.max_duration
        return self.pattern.search(rec.caption) is not None


@dataclass(frozen=True)
class CaptionRecord:
    id: str
    caption: str
    duration: float
    verdict: str | None = None  # None until filtered
    reason: str | None = None


@dataclass
class RuleSet:
    rules: list[Rule] = field(default_factory=list)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    @classmethod
    def parse(cls, text: str, source: str = "<rules>") -> "RuleSet":
        rules = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            reason, sep, body = line.partition(":")
            reason, body = reason.strip(), body.strip()
            if not sep or not reason or not body:
                raise ConfigurationError(f"{source}:{lineno}: expected 'reason: pattern', got {raw!r}")
            if reason == DURATION:
                try:
                    seconds = float(body)
                except ValueError:
                    raise ConfigurationError(f"{source}:{lineno}: duration limit {body!r} is not a number") from None
                rules.append(Rule(reason, max_duration=seconds))
                continue
            try:
                pattern = re.compile(body, re.IGNORECASE)
            except re.error as exc:
                raise ConfigurationError(f"{source}:{lineno}: invalid pattern for {reason!r}: {exc}") from None
            rules.append(Rule(reason, pattern=pattern))
        return cls(rules)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RuleSet":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    @classmethod
    def default(cls) -> "RuleSet":
        text = resources.files(__package__).joinpath("default.rules").read_text(encoding="utf-8")
        return cls.parse(text, "default.rules")


def filter_caption(rec: CaptionRecord, rules: RuleSet) -> CaptionRecord:
    if rec.verdict is not None:
        raise ValueError(f"record {rec.id!r} already has verdict {rec.verdict!r}")
    for rule in rules:
        if rule.matches(rec):
            return replace(rec, verdict=REJECTED, reason=rule.reason)
    return replace(rec, verdict=KEPT)


def parse_corpus(text: str) -> list[CaptionRecord]:
    """One record per line: ``id<TAB>duration_seconds<TAB>caption``."""
    records = []
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True), 1):
        body = line.rstrip("\r\n")
        if body:
            parts = body.split("\t", 2)
            if len(parts) != 3:
                raise FormatError(f"line {lineno}: expected 3 tab-separated fields", offset)
            rid, dur, caption = parts
            try:
                duration = float(dur)
            except ValueError:
                raise FormatError(f"line {lineno}: duration {dur!r} is not a number", offset) from None
            records.append(CaptionRecord(rid, caption, duration))
        offset += len(line.encode("utf-8"))
    return records


def read_corpus(path: str | os.PathLike) -> list[CaptionRecord]:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


def curate(records: Iterable[CaptionRecord], rules: RuleSet) -> list[CaptionRecord]:
    return [filter_caption(r, rules) for r in records]
