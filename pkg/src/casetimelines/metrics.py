"""Concordance, absolute time error, subgroup buckets, match-rate curves."""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, NoComparablePairs
from .matching import DistanceMatrix, MatchSet, recursive_best_match
from .timeline import Timeline

HOURS_PER_DAY = 24.0
HOURS_PER_WEEK = 168.0
HOURS_PER_YEAR = 8760.0


class ConcordanceMode(str, enum.Enum):
    HARRELL = "HARRELL"  # candidate ties earn 0.5
    LENIENT = "LENIENT"  # candidate ties earn 1.0

    @property
    def tie_credit(self) -> float:
        return 0.5 if self is ConcordanceMode.HARRELL else 1.0


@dataclass(frozen=True)
class SubgroupEdges:
    """Buckets on |hours from presentation|: exactly 0, then half-open
    ``(lo, hi]`` intervals between consecutive edges, then beyond the last."""

    edges: tuple[float, ...] = (0.0, HOURS_PER_DAY, HOURS_PER_WEEK, HOURS_PER_YEAR)
    labels: tuple[str, ...] = ("at presentation", "<=1 day", "<=1 week", "<=1 year", ">1 year")

    def __post_init__(self):
        if self.edges[0] != 0.0:
            raise ValueError("first edge must be 0 (the exact-zero bucket)")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("edges must be strictly increasing")
        if len(self.labels) != len(self.edges) + 1:
            raise ValueError("need one label per bucket")

    def bucket(self, hours: float) -> int:
        x = abs(hours)
        if x == 0:
            return 0
        for k, hi in enumerate(self.edges[1:], start=1):
            if x <= hi:
                return k
        return len(self.edges)

    def label(self, hours: float) -> str:
        return self.labels[self.bucket(hours)]


DEFAULT_EDGES = SubgroupEdges()


@dataclass(frozen=True)
class MatchedTime:
    t_ref: float
    t_cand: float
    index_a: int
    index_b: int


def matched_times(matches: MatchSet, a: Timeline, b: Timeline) -> list[MatchedTime]:
    """Times of matched pairs; side A plays the reference role."""
    return [MatchedTime(a.events[p.index_a].time_hours, b.events[p.index_b].time_hours,
                        p.index_a, p.index_b) for p in matches.pairs]


def _arrays(mt: Sequence[MatchedTime]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([m.t_ref for m in mt], dtype=float),
            np.array([m.t_cand for m in mt], dtype=float))


def concordance(mt: Sequence[MatchedTime], mode: ConcordanceMode = ConcordanceMode.HARRELL) -> float:
    """Share of comparable pairs (distinct reference times) that the
    candidate orders the same way; candidate ties earn ``mode.tie_credit``."""
    ref, cand = _arrays(mt)
    sref = np.sign(np.subtract.outer(ref, ref))
    scand = np.sign(np.subtract.outer(cand, cand))
    upper = np.triu(np.ones(sref.shape, dtype=bool), k=1)
    comparable = upper & (sref != 0)
    n = int(comparable.sum())
    if n == 0:
        raise NoComparablePairs("all matched reference times are equal")
    agree = int((comparable & (scand == sref)).sum())
    ties = int((comparable & (scand == 0)).sum())
    return (agree + mode.tie_credit * ties) / n


@dataclass(frozen=True)
class ErrorSummary:
    count: int
    mean: float
    median: float
    fraction_exact: float
    fraction_within_24h: float
    fraction_over_168h: float
    fraction_over_8760h: float


def summarize_errors(errors: Sequence[float]) -> ErrorSummary:
    if not errors:
        raise EmptyInput("no errors to summarise")
    n = len(errors)
    return ErrorSummary(
        count=n,
        mean=math.fsum(errors) / n,
        median=float(statistics.median(errors)),
        fraction_exact=sum(e == 0 for e in errors) / n,
        fraction_within_24h=sum(e <= HOURS_PER_DAY for e in errors) / n,
        fraction_over_168h=sum(e > HOURS_PER_WEEK for e in errors) / n,
        fraction_over_8760h=sum(e > HOURS_PER_YEAR for e in errors) / n,
    )


def absolute_errors(mt: Sequence[MatchedTime]) -> tuple[list[float], ErrorSummary]:
    if not mt:
        raise EmptyInput("no matched times")
    errors = [abs(m.t_cand - m.t_ref) for m in mt]
    return errors, summarize_errors(errors)


@dataclass(frozen=True)
class SubgroupSummary:
    bucket: str
    count: int
    errors: ErrorSummary | None


def subgroup_errors(mt: Sequence[MatchedTime], edges: SubgroupEdges = DEFAULT_EDGES
                    ) -> list[SubgroupSummary]:
    """Error summaries per bucket of |reference time|; empty buckets have count 0."""
    if not mt:
        raise EmptyInput("no matched times")
    grouped: list[list[float]] = [[] for _ in edges.labels]
    for m in mt:
        grouped[edges.bucket(m.t_ref)].append(abs(m.t_cand - m.t_ref))
    return [SubgroupSummary(label, len(errs), summarize_errors(errs) if errs else None)
            for label, errs in zip(edges.labels, grouped)]


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    n_matched: int
    match_rate: float


def match_rate_curve(m: DistanceMatrix, ref_event_count: int, thresholds: Sequence[float]
                     ) -> list[CurvePoint]:
    if ref_event_count <= 0:
        raise ValueError("ref_event_count must be positive")
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be ascending")
    out = []
    for th in thresholds:
        n = len(recursive_best_match(m, th).pairs)
        out.append(CurvePoint(float(th), n, n / ref_event_count))
    return out


@dataclass(frozen=True)
class TimeDistribution:
    labels: tuple[str, ...]
    counts: tuple[int, ...]
    total: int

    @property
    def fractions(self) -> tuple[float, ...]:
        return tuple(c / self.total for c in self.counts)

    @property
    def fraction_at_zero(self) -> float:
        return self.counts[0] / self.total


def time_distribution_of(times: Sequence[float], edges: SubgroupEdges = DEFAULT_EDGES
                         ) -> TimeDistribution:
    if not times:
        raise EmptyInput("no event times")
    counts = [0] * len(edges.labels)
    for t in times:
        counts[edges.bucket(t)] += 1
    return TimeDistribution(edges.labels, tuple(counts), len(times))


def time_distribution(t: Timeline, edges: SubgroupEdges = DEFAULT_EDGES) -> TimeDistribution:
    return time_distribution_of(t.times, edges)
