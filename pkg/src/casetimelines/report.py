"""Per-report evaluation, corpus aggregation and JSON / table emission.

Documents are plain JSON; field meanings are listed in docs/report_schema.md.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .embedding import Embedder, TrigramEmbedder
from .errors import EmptyInput, HeterogeneousConfig, MismatchedReport, NoComparablePairs
from .matching import Metric, build_distance_matrix, recursive_best_match
from .metrics import (DEFAULT_EDGES, HOURS_PER_DAY, HOURS_PER_WEEK, HOURS_PER_YEAR,
                      ConcordanceMode, MatchedTime, SubgroupEdges, absolute_errors,
                      concordance, match_rate_curve, matched_times, subgroup_errors,
                      summarize_errors, time_distribution)
from .prompting import PROMPT_DIGEST
from .timeline import Timeline, TimelineCounts, summarize_counts, STATS_COLUMNS
from .transport import sha256_text

SCHEMA_VERSION = "1.0"
DEFAULT_CURVE_THRESHOLDS = tuple(round(0.01 * k, 2) for k in range(31))


class EvalMode(str, enum.Enum):
    REFERENCE_VS_CANDIDATE = "REFERENCE_VS_CANDIDATE"
    INTER_LLM = "INTER_LLM"


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.1
    metric: Metric = Metric.COSINE_EMBEDDING
    embedder: str = "trigram-fallback"
    concordance_mode: ConcordanceMode = ConcordanceMode.HARRELL
    curve_thresholds: tuple[float, ...] = DEFAULT_CURVE_THRESHOLDS
    edges: SubgroupEdges = DEFAULT_EDGES
    prompt_digest: str = PROMPT_DIGEST

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "metric": self.metric.value,
            "embedder": self.embedder if self.metric is Metric.COSINE_EMBEDDING else None,
            "concordance_mode": self.concordance_mode.value,
            "curve_thresholds": list(self.curve_thresholds),
            "subgroup_edges_hours": list(self.edges.edges),
            "subgroup_labels": list(self.edges.labels),
            "hour_constants": {"day": HOURS_PER_DAY, "week": HOURS_PER_WEEK,
                               "year": HOURS_PER_YEAR},
            "prompt_digest": self.prompt_digest,
        }

    def digest(self) -> str:
        return sha256_text(json.dumps(self.to_dict(), sort_keys=True))


@dataclass
class EvalReport:
    report_id: str
    side_a: str
    side_b: str
    mode: str
    n_events_a: int
    n_events_b: int
    distinct_times_a: int
    distinct_times_b: int
    n_matched: int
    match_rate: float
    concordance_harrell: float | None
    concordance_lenient: float | None
    concordance: float | None
    error_summary: dict | None
    subgroup_summaries: list[dict]
    match_rate_curve: list[dict]
    time_distribution_a: dict
    matches: list[dict]
    flags: list[str]
    threshold: float
    metric: str
    config: dict
    config_digest: str
    provenance: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION
    document_type: str = "EvalReport"


def _safe_concordance(mt: list[MatchedTime], mode: ConcordanceMode) -> float | None:
    try:
        return concordance(mt, mode)
    except NoComparablePairs:
        return None


def evaluate_pair(a: Timeline, b: Timeline, config: EvalConfig | None = None,
                  backend: Embedder | None = None,
                  mode: EvalMode = EvalMode.REFERENCE_VS_CANDIDATE) -> EvalReport:
    """Match ``a`` against ``b`` and score the matched times.

    Side A is the reference (or the first model for inter-LLM runs) and the
    denominator of ``match_rate``.
    """
    config = config or EvalConfig()
    if a.report_id != b.report_id:
        raise MismatchedReport(f"{a.report_id} != {b.report_id}")
    if config.metric is Metric.COSINE_EMBEDDING:
        backend = backend or TrigramEmbedder()
        if backend.tag != config.embedder:
            raise ValueError(f"backend {backend.tag!r} does not match config {config.embedder!r}")

    m = build_distance_matrix(a.events, b.events, config.metric, backend)
    matches = recursive_best_match(m, config.threshold)
    mt = matched_times(matches, a, b)

    flags: list[str] = []
    if mt:
        errors, summary = absolute_errors(mt)
        error_summary = dataclasses.asdict(summary)
        subgroups = [dataclasses.asdict(s) for s in subgroup_errors(mt, config.edges)]
    else:
        flags.append("NoMatches")
        errors, error_summary = [], None
        subgroups = [{"bucket": label, "count": 0, "errors": None} for label in config.edges.labels]

    c_harrell = _safe_concordance(mt, ConcordanceMode.HARRELL)
    c_lenient = _safe_concordance(mt, ConcordanceMode.LENIENT)
    if c_harrell is None:
        flags.append("NoComparablePairs")
    headline = c_harrell if config.concordance_mode is ConcordanceMode.HARRELL else c_lenient

    dist = time_distribution(a, config.edges)
    matches_out = []
    for p, t, err in zip(matches.pairs, mt, errors):
        matches_out.append({
            "index_a": p.index_a, "index_b": p.index_b,
            "text_a": a.events[p.index_a].text, "text_b": b.events[p.index_b].text,
            "distance": p.distance, "recursion_depth": p.depth,
            "time_a": t.t_ref, "time_b": t.t_cand, "abs_error": err,
            "bucket": config.edges.label(t.t_ref),
        })

    return EvalReport(
        report_id=a.report_id,
        side_a=a.annotator,
        side_b=b.annotator,
        mode=mode.value,
        n_events_a=len(a.events),
        n_events_b=len(b.events),
        distinct_times_a=len(set(a.times)),
        distinct_times_b=len(set(b.times)),
        n_matched=len(matches.pairs),
        match_rate=len(matches.pairs) / len(a.events),
        concordance_harrell=c_harrell,
        concordance_lenient=c_lenient,
        concordance=headline,
        error_summary=error_summary,
        subgroup_summaries=subgroups,
        match_rate_curve=[dataclasses.asdict(p) for p in
                          match_rate_curve(m, len(a.events), config.curve_thresholds)],
        time_distribution_a=dict(zip(dist.labels, dist.counts)),
        matches=matches_out,
        flags=flags,
        threshold=config.threshold,
        metric=config.metric.value,
        config=config.to_dict(),
        config_digest=config.digest(),
    )


@dataclass
class CorpusSummary:
    pairs: list[dict]
    annotation_stats: list[dict]
    provenance: dict
    config_digest: str
    schema_version: str = SCHEMA_VERSION
    document_type: str = "CorpusSummary"


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def _pair_summary(group: list[EvalReport], labels: Sequence[str]) -> dict:
    total_a = sum(r.n_events_a for r in group)
    total_b = sum(r.n_events_b for r in group)
    total_matched = sum(r.n_matched for r in group)
    errors = [m["abs_error"] for r in group for m in r.matches]

    by_bucket: dict[str, list[float]] = {label: [] for label in labels}
    for r in group:
        for m in r.matches:
            by_bucket[m["bucket"]].append(m["abs_error"])

    curve_n: dict[float, int] = defaultdict(int)
    for r in group:
        for point in r.match_rate_curve:
            curve_n[point["threshold"]] += point["n_matched"]

    dist: dict[str, int] = {label: 0 for label in labels}
    for r in group:
        for label, count in r.time_distribution_a.items():
            dist[label] += count
    n_times = sum(dist.values())

    harrell = [r.concordance_harrell for r in group if r.concordance_harrell is not None]
    lenient = [r.concordance_lenient for r in group if r.concordance_lenient is not None]
    return {
        "side_a": group[0].side_a,
        "side_b": group[0].side_b,
        "mode": group[0].mode,
        "report_count": len(group),
        "report_ids": [r.report_id for r in group],
        "total_events_a": total_a,
        "total_events_b": total_b,
        "total_matched": total_matched,
        "pooled_match_rate": total_matched / total_a,
        "pooled_match_rate_b": total_matched / total_b,
        "mean_match_rate": _mean([r.match_rate for r in group]),
        "mean_concordance_harrell": _mean(harrell),
        "mean_concordance_lenient": _mean(lenient),
        "concordance_report_count": len(harrell),
        "pooled_errors": dataclasses.asdict(summarize_errors(errors)) if errors else None,
        "pooled_subgroups": [
            {"bucket": label, "count": len(errs),
             "errors": dataclasses.asdict(summarize_errors(errs)) if errs else None}
            for label, errs in by_bucket.items()
        ],
        "pooled_match_rate_curve": [
            {"threshold": th, "n_matched": n, "match_rate": n / total_a}
            for th, n in sorted(curve_n.items())
        ],
        "time_distribution_a": {
            "counts": dist,
            "fractions": {k: v / n_times for k, v in dist.items()} if n_times else None,
        },
    }


def aggregate(reports: Sequence[EvalReport], provenance: dict | None = None) -> CorpusSummary:
    """Pool EvalReports per (side_a, side_b) pair.

    Concordance is the mean of per-report values; counts and error
    fractions are pooled over all matched events.
    """
    if not reports:
        raise EmptyInput("no reports to aggregate")
    digests = {r.config_digest for r in reports}
    if len(digests) > 1:
        raise HeterogeneousConfig(f"{len(digests)} distinct config digests")
    ordered = sorted(reports, key=lambda r: (r.side_a, r.side_b, r.mode, r.report_id))
    config = ordered[0].config
    labels = config["subgroup_labels"]

    groups: dict[tuple[str, str, str], list[EvalReport]] = defaultdict(list)
    for r in ordered:
        groups[(r.side_a, r.side_b, r.mode)].append(r)

    counts: dict[tuple[str, str], TimelineCounts] = {}
    for r in ordered:
        counts.setdefault((r.report_id, r.side_a),
                          TimelineCounts(r.report_id, r.side_a, r.n_events_a, r.distinct_times_a))
        counts.setdefault((r.report_id, r.side_b),
                          TimelineCounts(r.report_id, r.side_b, r.n_events_b, r.distinct_times_b))
    stats = summarize_counts(list(counts.values()))

    prov = {"config": config, **(provenance or {})}
    return CorpusSummary(
        pairs=[_pair_summary(g, labels) for _, g in sorted(groups.items())],
        annotation_stats=stats.table_rows(),
        provenance=prov,
        config_digest=ordered[0].config_digest,
    )


# ---------------------------------------------------------------- emission

def to_json(doc: EvalReport | CorpusSummary) -> str:
    return json.dumps(dataclasses.asdict(doc), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> EvalReport | CorpusSummary:
    doc = json.loads(text)
    kind = doc.get("document_type")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    if kind == "EvalReport":
        return EvalReport(**doc)
    if kind == "CorpusSummary":
        return CorpusSummary(**doc)
    raise ValueError(f"unknown document_type {kind!r}")


def load_json(path: str | os.PathLike) -> EvalReport | CorpusSummary:
    return from_json(Path(path).read_text(encoding="utf-8"))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_tsv(path: Path, columns: Sequence[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


ERROR_FIELDS = ("count", "mean", "median", "fraction_exact", "fraction_within_24h",
                "fraction_over_168h", "fraction_over_8760h")

TABLE_FILES = ("table1_stats.tsv", "concordance_boxplot.tsv", "abs_errors.tsv",
               "error_histogram.tsv", "subgroups.tsv", "match_rate_curve.tsv",
               "time_distribution.tsv")


def write_tables(summary: CorpusSummary, reports: Sequence[EvalReport], out_dir: Path) -> list[Path]:
    """Flat, plot-ready TSV tables (one row per point / bucket / report-metric)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(reports, key=lambda r: (r.side_a, r.side_b, r.mode, r.report_id))
    labels = summary.provenance["config"]["subgroup_labels"]
    paths = [out_dir / name for name in TABLE_FILES]

    _write_tsv(paths[0], STATS_COLUMNS, summary.annotation_stats)

    box = []
    for r in ordered:
        for metric in ("concordance_harrell", "concordance_lenient", "match_rate"):
            box.append({"report_id": r.report_id, "side_a": r.side_a, "side_b": r.side_b,
                        "metric": metric, "value": getattr(r, metric)})
    _write_tsv(paths[1], ("report_id", "side_a", "side_b", "metric", "value"), box)

    err_rows = []
    for r in ordered:
        for m in r.matches:
            err_rows.append({"report_id": r.report_id, "side_a": r.side_a, "side_b": r.side_b,
                             **m})
    _write_tsv(paths[2], ("report_id", "side_a", "side_b", "index_a", "index_b", "time_a",
                          "time_b", "abs_error", "bucket", "distance"), err_rows)

    hist, sub, curve, dist = [], [], [], []
    for p in summary.pairs:
        key = {"side_a": p["side_a"], "side_b": p["side_b"]}
        errs = [m["abs_error"] for r in ordered
                if (r.side_a, r.side_b) == (p["side_a"], p["side_b"]) for m in r.matches]
        edges = SubgroupEdges(tuple(summary.provenance["config"]["subgroup_edges_hours"]),
                              tuple(labels))
        bins = [0] * len(labels)
        for e in errs:
            bins[edges.bucket(e)] += 1
        for label, n in zip(labels, bins):
            hist.append({**key, "error_bin": label, "count": n,
                         "fraction": n / len(errs) if errs else None})
        for s in p["pooled_subgroups"]:
            e = s["errors"] or {}
            sub.append({**key, "bucket": s["bucket"], **{f: e.get(f) for f in ERROR_FIELDS},
                        "count": s["count"]})
        for point in p["pooled_match_rate_curve"]:
            curve.append({**key, **point, "total_events_a": p["total_events_a"]})
        td = p["time_distribution_a"]
        for label in labels:
            dist.append({"annotator": p["side_a"], "vs": p["side_b"], "bucket": label,
                         "count": td["counts"][label],
                         "fraction": td["fractions"][label] if td["fractions"] else None})

    _write_tsv(paths[3], ("side_a", "side_b", "error_bin", "count", "fraction"), hist)
    _write_tsv(paths[4], ("side_a", "side_b", "bucket") + ERROR_FIELDS, sub)
    _write_tsv(paths[5], ("side_a", "side_b", "threshold", "n_matched", "total_events_a",
                          "match_rate"), curve)
    _write_tsv(paths[6], ("annotator", "vs", "bucket", "count", "fraction"), dist)
    return paths


class EmitFormat(str, enum.Enum):
    JSON = "JSON"
    TABLES = "TABLES"


def emit(doc: EvalReport | CorpusSummary, path: str | os.PathLike,
         fmt: EmitFormat = EmitFormat.JSON,
         reports: Sequence[EvalReport] | None = None) -> list[Path]:
    """Write ``doc`` as one JSON document, or as a directory of TSV tables.

    Tables for a CorpusSummary need the member ``reports`` (per-report rows).
    """
    path = Path(path)
    if fmt is EmitFormat.JSON:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(to_json(doc), encoding="utf-8")
        return [path]
    if isinstance(doc, EvalReport):
        reports = [doc]
        doc = aggregate(reports)
    if reports is None:
        raise ValueError("TABLES output of a CorpusSummary needs its EvalReports")
    return write_tables(doc, reports, path)
