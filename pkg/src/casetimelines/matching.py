"""Pairwise event distances and the recursive best-match 1-to-1 alignment."""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedding import Embedder, TrigramEmbedder, cosine_distance_matrix
from .timeline import EventRecord


class Metric(str, enum.Enum):
    LEVENSHTEIN = "LEVENSHTEIN"
    COSINE_EMBEDDING = "COSINE_EMBEDDING"


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute distance (two-row DP)."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    metric: Metric

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("distance matrix must be 2-D")
        if (v < 0).any():
            raise ValueError("distances must be nonnegative")
        if self.metric is Metric.COSINE_EMBEDDING and (v > 2).any():
            raise ValueError("cosine distances must be <= 2")
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def _texts(events: Sequence[EventRecord | str]) -> list[str]:
    return [e if isinstance(e, str) else e.text for e in events]


def build_distance_matrix(a: Sequence[EventRecord | str], b: Sequence[EventRecord | str],
                          metric: Metric = Metric.COSINE_EMBEDDING,
                          backend: Embedder | None = None) -> DistanceMatrix:
    """``values[i, j]`` is the distance between ``a[i]`` and ``b[j]``.

    Embeddings are computed once per unique text; identical texts are
    pinned to exactly 0.
    """
    ta, tb = _texts(a), _texts(b)
    if not ta or not tb:
        raise ValueError("both event lists must be non-empty")

    if metric is Metric.LEVENSHTEIN:
        memo: dict[tuple[str, str], int] = {}
        values = np.empty((len(ta), len(tb)))
        for i, x in enumerate(ta):
            for j, y in enumerate(tb):
                key = (x, y)
                if key not in memo:
                    memo[key] = levenshtein(x, y)
                values[i, j] = memo[key]
        return DistanceMatrix(values, metric)

    backend = backend or TrigramEmbedder()
    unique = list(dict.fromkeys(ta + tb))
    index = {t: k for k, t in enumerate(unique)}
    vectors = np.vstack([v.components for v in backend.embed(unique)])
    ua = np.array([index[t] for t in ta])
    ub = np.array([index[t] for t in tb])
    values = cosine_distance_matrix(vectors[ua], vectors[ub])
    values[np.equal.outer(ua, ub)] = 0.0
    return DistanceMatrix(values, metric)


@dataclass(frozen=True)
class MatchPair:
    index_a: int
    index_b: int
    distance: float
    depth: int = 0  # recursion round that accepted the pair


@dataclass
class MatchSet:
    pairs: list[MatchPair]
    unmatched_a: list[int]
    unmatched_b: list[int]
    threshold: float
    rounds: int = 0
    trace: list[list[tuple[int, int, float]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def recursive_best_match(m: DistanceMatrix | np.ndarray, threshold: float,
                         keep_trace: bool = False) -> MatchSet:
    """Greedy recursive 1-to-1 matching.

    Each round, every remaining row claims its nearest remaining column
    among entries ``<= threshold``. A column claimed by several rows goes to
    the lowest-distance claimant; uncontested claims are accepted as-is.
    Accepted rows and columns are removed and the round repeats until no
    row can claim anything. Ties resolve to the lowest index.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    values = m.values if isinstance(m, DistanceMatrix) else np.asarray(m, dtype=float)
    n_rows, n_cols = values.shape
    # masked copy: removed rows/cols and entries above threshold become +inf
    work = np.where(values <= threshold, values, np.inf)
    row_alive = np.ones(n_rows, dtype=bool)
    col_alive = np.ones(n_cols, dtype=bool)

    pairs: list[MatchPair] = []
    trace: list[list[tuple[int, int, float]]] = []
    depth = 0
    while row_alive.any() and col_alive.any():
        sub = work[np.ix_(row_alive, col_alive)]
        if not np.isfinite(sub).any():
            break
        rows = np.flatnonzero(row_alive)
        cols = np.flatnonzero(col_alive)
        best_col: dict[int, tuple[float, int]] = {}  # col -> (distance, row)
        for r_local, row in enumerate(sub):
            c_local = int(np.argmin(row))  # first minimum = lowest column index
            d = row[c_local]
            if not np.isfinite(d):
                continue
            col = int(cols[c_local])
            cand = (float(d), int(rows[r_local]))
            if col not in best_col or cand < best_col[col]:
                best_col[col] = cand
        accepted = sorted((r, c, d) for c, (d, r) in best_col.items())
        for r, c, d in accepted:
            pairs.append(MatchPair(r, c, float(values[r, c]), depth))
            row_alive[r] = False
            col_alive[c] = False
        if keep_trace:
            trace.append(accepted)
        depth += 1

    pairs.sort(key=lambda p: (p.index_a, p.index_b))
    return MatchSet(
        pairs=pairs,
        unmatched_a=[int(i) for i in np.flatnonzero(row_alive)],
        unmatched_b=[int(j) for j in np.flatnonzero(col_alive)],
        threshold=threshold,
        rounds=depth,
        trace=trace,
    )


@dataclass(frozen=True)
class MatchCandidate:
    index_a: int
    index_b: int
    text_a: str
    text_b: str
    distance: float


def best_candidates(a: Sequence[EventRecord | str], b: Sequence[EventRecord | str],
                    m: DistanceMatrix) -> list[MatchCandidate]:
    """Each A event paired with its nearest B event (lowest index on ties)."""
    ta, tb = _texts(a), _texts(b)
    out = []
    for i in range(m.rows):
        j = int(np.argmin(m.values[i]))
        out.append(MatchCandidate(i, j, ta[i], tb[j], float(m.values[i, j])))
    return out


def export_match_candidates(a: Sequence[EventRecord | str], b: Sequence[EventRecord | str],
                            m: DistanceMatrix, window: tuple[float, float]
                            ) -> list[MatchCandidate]:
    """Best-match pairs whose distance lies in ``[lo, hi]``, ascending.

    This is the near-threshold review table used to pick a match threshold
    by hand.
    """
    lo, hi = window
    if lo > hi:
        return []
    rows = [c for c in best_candidates(a, b, m) if lo <= c.distance <= hi]
    rows.sort(key=lambda c: (c.distance, c.index_a, c.index_b))
    return rows


AUDIT_COLUMNS = ("text_a", "text_b", "distance", "accepted_flag", "recursion_depth")


def match_audit_rows(a: Sequence[EventRecord | str], b: Sequence[EventRecord | str],
                     m: DistanceMatrix, matches: MatchSet) -> list[dict]:
    """One row per A event: its accepted partner, or else its nearest B
    event with ``accepted_flag`` 0 and an empty depth. Sorted by distance."""
    ta, tb = _texts(a), _texts(b)
    accepted = {p.index_a: p for p in matches.pairs}
    rows = []
    for cand in best_candidates(a, b, m):
        p = accepted.get(cand.index_a)
        if p is not None:
            rows.append({"text_a": ta[p.index_a], "text_b": tb[p.index_b],
                         "distance": p.distance, "accepted_flag": 1, "recursion_depth": p.depth,
                         "_key": (p.distance, p.index_a)})
        else:
            rows.append({"text_a": cand.text_a, "text_b": cand.text_b,
                         "distance": cand.distance, "accepted_flag": 0, "recursion_depth": "",
                         "_key": (cand.distance, cand.index_a)})
    rows.sort(key=lambda r: r.pop("_key"))
    return rows


def write_match_audit(rows: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, AUDIT_COLUMNS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "distance": f"{r['distance']:.6f}"})
