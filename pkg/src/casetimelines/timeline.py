"""Timeline data model, the bar-separated LLM grammar, reference CSV I/O and
descriptive statistics."""

from __future__ import annotations

import csv
import enum
import io
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import EmptyTimeline, MalformedRow

# number, optional unit token; nothing else may follow
_TIME_RE = re.compile(
    r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*(?:hours?|hrs?|h)?\.?\s*$",
    re.IGNORECASE,
)
_HEADER_WORDS = ("time", "hour", "timestamp")
_TABLE_RULE_RE = re.compile(r"^[\s:|-]+$")


class DiagnosticKind(str, enum.Enum):
    MALFORMED_ROW = "MALFORMED_ROW"
    NON_NUMERIC_TIME = "NON_NUMERIC_TIME"
    SKIPPED_HEADER = "SKIPPED_HEADER"
    SKIPPED_FENCE = "SKIPPED_FENCE"
    EMPTY_EVENT = "EMPTY_EVENT"


@dataclass(frozen=True)
class ParseDiagnostic:
    line_number: int
    raw_line: str
    kind: DiagnosticKind


@dataclass(frozen=True)
class EventRecord:
    text: str
    time_hours: float
    source_line: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("event text is empty")
        if not math.isfinite(self.time_hours):
            raise ValueError(f"non-finite time {self.time_hours!r}")


@dataclass(frozen=True)
class Timeline:
    report_id: str
    annotator: str
    events: tuple[EventRecord, ...]
    diagnostics: tuple[ParseDiagnostic, ...] = ()

    def __post_init__(self):
        if not self.report_id:
            raise ValueError("report_id is empty")
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))

    @property
    def pairs(self) -> list[tuple[str, float]]:
        return [(e.text, e.time_hours) for e in self.events]

    @property
    def times(self) -> list[float]:
        return [e.time_hours for e in self.events]


def parse_time(field_text: str) -> float | None:
    """Parse a numeric hour field; returns None when it is not a finite number."""
    m = _TIME_RE.match(field_text)
    if m is None:
        return None
    value = float(m.group(1))
    return value if math.isfinite(value) else None


def _looks_like_header(field_text: str) -> bool:
    low = field_text.strip().lower()
    if any(ch.isdigit() for ch in low):
        return False
    return any(w in low for w in _HEADER_WORDS) or bool(low and _TABLE_RULE_RE.match(low))


def parse_llm_timeline(raw: str, report_id: str, annotator: str) -> Timeline:
    """Parse one ``event | hours`` response into a Timeline.

    Every non-blank line yields either an event or a diagnostic. Lines with
    several pipes split at the last one.
    """
    events: list[EventRecord] = []
    diags: list[ParseDiagnostic] = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("```"):
            diags.append(ParseDiagnostic(lineno, line, DiagnosticKind.SKIPPED_FENCE))
            continue
        if "|" not in line:
            diags.append(ParseDiagnostic(lineno, line, DiagnosticKind.MALFORMED_ROW))
            continue
        left, _, right = line.rpartition("|")
        time = parse_time(right)
        if time is None:
            kind = (DiagnosticKind.SKIPPED_HEADER if _looks_like_header(right)
                    else DiagnosticKind.NON_NUMERIC_TIME)
            diags.append(ParseDiagnostic(lineno, line, kind))
            continue
        text = left.strip()
        if not text:
            diags.append(ParseDiagnostic(lineno, line, DiagnosticKind.EMPTY_EVENT))
            continue
        events.append(EventRecord(text, time, lineno))

    if not events:
        raise EmptyTimeline(f"{report_id}/{annotator}: no event rows in response "
                            f"({len(diags)} rejected lines)")
    return Timeline(report_id, annotator, events, diags)


def load_timeline_csv(path: str | os.PathLike, report_id: str, annotator: str) -> Timeline:
    """Strict loader for two-column ``event,time`` files (header optional)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))

    events: list[EventRecord] = []
    diags: list[ParseDiagnostic] = []
    seen_content = False
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise MalformedRow(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        text, time_field = row[0].strip(), row[1]
        time = parse_time(time_field)
        if time is None:
            if not seen_content and _looks_like_header(time_field):
                diags.append(ParseDiagnostic(lineno, ",".join(row), DiagnosticKind.SKIPPED_HEADER))
                seen_content = True
                continue
            raise MalformedRow(f"{path}:{lineno}: non-numeric time {time_field!r}")
        if not text:
            raise MalformedRow(f"{path}:{lineno}: empty event text")
        seen_content = True
        events.append(EventRecord(text, time, lineno))

    if not events:
        raise EmptyTimeline(f"{path}: no events")
    return Timeline(report_id, annotator, events, diags)


def load_reference_annotation(path: str | os.PathLike, report_id: str) -> Timeline:
    return load_timeline_csv(path, report_id, "manual")


def format_time(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def timeline_to_csv(t: Timeline) -> str:
    if not t.events:
        raise EmptyTimeline(f"{t.report_id}: refusing to write an empty timeline")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("event", "time"))
    for e in t.events:
        writer.writerow((e.text, format_time(e.time_hours)))
    return buf.getvalue()


def write_timeline(t: Timeline, path: str | os.PathLike) -> None:
    text = timeline_to_csv(t)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


@dataclass(frozen=True)
class TimelineCounts:
    report_id: str
    annotator: str
    event_count: int
    distinct_time_count: int


@dataclass(frozen=True)
class CountSummary:
    mean: float
    min: int
    max: int


@dataclass
class AnnotationStats:
    per_timeline: list[TimelineCounts] = field(default_factory=list)
    # annotator -> {"events": CountSummary, "distinct_times": CountSummary}
    summary: dict[str, dict[str, CountSummary]] = field(default_factory=dict)

    def table_rows(self) -> list[dict]:
        rows = []
        for annotator in sorted(self.summary):
            ev = self.summary[annotator]["events"]
            dt = self.summary[annotator]["distinct_times"]
            n = sum(1 for c in self.per_timeline if c.annotator == annotator)
            rows.append({
                "annotator": annotator, "n_timelines": n,
                "events_mean": ev.mean, "events_min": ev.min, "events_max": ev.max,
                "distinct_times_mean": dt.mean, "distinct_times_min": dt.min,
                "distinct_times_max": dt.max,
            })
        return rows


def _summarize(values: list[int]) -> CountSummary:
    return CountSummary(math.fsum(values) / len(values), min(values), max(values))


def summarize_counts(counts: list[TimelineCounts]) -> AnnotationStats:
    counts = sorted(counts, key=lambda c: (c.annotator, c.report_id))
    grouped: dict[str, list[TimelineCounts]] = defaultdict(list)
    for c in counts:
        grouped[c.annotator].append(c)
    summary = {
        annotator: {
            "events": _summarize([c.event_count for c in group]),
            "distinct_times": _summarize([c.distinct_time_count for c in group]),
        }
        for annotator, group in grouped.items()
    }
    return AnnotationStats(counts, summary)


def descriptive_stats(timelines: list[Timeline]) -> AnnotationStats:
    """Per-annotator mean/min/max of event and distinct-time counts."""
    if not timelines:
        raise ValueError("descriptive_stats needs at least one timeline")
    return summarize_counts([
        TimelineCounts(t.report_id, t.annotator, len(t.events), len(set(t.times)))
        for t in timelines
    ])


STATS_COLUMNS = ("annotator", "n_timelines", "events_mean", "events_min", "events_max",
                 "distinct_times_mean", "distinct_times_min", "distinct_times_max")


def write_stats_table(stats: AnnotationStats, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, STATS_COLUMNS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        writer.writerows(stats.table_rows())
