"""PMOA flat-text ingestion: body slicing, case-report filter, sampling."""

from __future__ import annotations

import csv
import logging
import os
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidRoot, MissingBodyMarker, SampleTooLarge

logger = logging.getLogger(__name__)

BODY_MARKER = "==== BODY"
REFS_MARKER = "==== Refs"

# Name recorded in manifests/provenance; bump the suffix if the draw changes.
SAMPLER_NAME = "mt19937-fisher-yates-v1"

_CASE_RE = re.compile(r"case report|case presentation", re.IGNORECASE)
_AGE_RE = re.compile(r"year-old|year old", re.IGNORECASE)

MANIFEST_HEADER = ("id", "source_path", "body_char_count")


@dataclass(frozen=True)
class CaseReport:
    id: str
    body: str
    source_path: str

    @property
    def body_char_count(self) -> int:
        return len(self.body)


@dataclass(frozen=True)
class ScanDiagnostic:
    path: str
    kind: str  # MissingBodyMarker | MissingRefsMarker | IoError | DuplicateId
    message: str


@dataclass
class ScanResult:
    reports: list[CaseReport] = field(default_factory=list)
    diagnostics: list[ScanDiagnostic] = field(default_factory=list)
    files_seen: int = 0


def split_article(raw: str) -> tuple[str, bool]:
    """Return ``(body, refs_marker_found)``.

    The body starts after the first line that is exactly ``==== BODY``
    (trailing whitespace ignored) and stops before the next line starting
    with ``==== Refs``. A body made only of whitespace is returned as "".
    """
    lines = raw.splitlines(keepends=True)
    start = None
    for i, line in enumerate(lines):
        if line.rstrip() == BODY_MARKER:
            start = i + 1
            break
    if start is None:
        raise MissingBodyMarker("no '==== BODY' line")

    end = len(lines)
    found_refs = False
    for j in range(start, len(lines)):
        if lines[j].startswith(REFS_MARKER):
            end = j
            found_refs = True
            break
    body = "".join(lines[start:end])
    if not body.strip():
        body = ""
    return body, found_refs


def parse_article_body(raw: str) -> str:
    body, found_refs = split_article(raw)
    if not found_refs:
        logger.warning("no '==== Refs' marker; body runs to end of input")
    return body


def is_case_report(body: str) -> bool:
    return bool(_CASE_RE.search(body)) and bool(_AGE_RE.search(body))


def report_id_for(path: Path) -> str:
    return path.name.split(".", 1)[0]


def _iter_files(root: Path) -> list[Path]:
    files = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if not d.startswith("."))
        for name in sorted(filenames):
            if not name.startswith("."):
                files.append(Path(dirpath) / name)
    return files


def _load_one(path: Path) -> tuple[CaseReport | None, list[ScanDiagnostic]]:
    diags: list[ScanDiagnostic] = []
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        return None, [ScanDiagnostic(str(path), "IoError", str(exc))]
    try:
        body, found_refs = split_article(raw)
    except MissingBodyMarker as exc:
        return None, [ScanDiagnostic(str(path), "MissingBodyMarker", str(exc))]
    if not found_refs:
        diags.append(ScanDiagnostic(str(path), "MissingRefsMarker",
                                    "body runs to end of file"))
    if not is_case_report(body):
        return None, diags
    return CaseReport(id=report_id_for(path), body=body, source_path=str(path)), diags


def scan_corpus(root: str | os.PathLike, workers: int | None = None) -> ScanResult:
    """Scan ``root`` recursively and keep the eligible case reports.

    Unreadable or unparsable files become diagnostics; the scan never
    aborts on a single file. Output is sorted by id.
    """
    root = Path(root)
    if not root.is_dir():
        raise InvalidRoot(f"not a readable directory: {root}")

    files = _iter_files(root)
    result = ScanResult(files_seen=len(files))
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        outcomes = list(pool.map(_load_one, files))

    by_id: dict[str, CaseReport] = {}
    for report, diags in outcomes:
        result.diagnostics.extend(diags)
        if report is None:
            continue
        prior = by_id.get(report.id)
        if prior is not None:
            keep, drop = sorted([prior, report], key=lambda r: r.source_path)
            by_id[report.id] = keep
            result.diagnostics.append(ScanDiagnostic(
                drop.source_path, "DuplicateId", f"id {report.id} also at {keep.source_path}"))
        else:
            by_id[report.id] = report

    result.reports = [by_id[k] for k in sorted(by_id)]
    result.diagnostics.sort(key=lambda d: (d.path, d.kind))
    for d in result.diagnostics:
        logger.warning("%s: %s (%s)", d.path, d.kind, d.message)
    return result


def _randbelow(rng: random.Random, n: int) -> int:
    # rejection sampling on raw 64-bit draws; getrandbits is stable across Python versions
    limit = (1 << 64) - ((1 << 64) % n)
    while True:
        x = rng.getrandbits(64)
        if x < limit:
            return x % n


def sample_reports(ids: list[str], n: int, seed: int) -> list[str]:
    """Draw ``n`` ids uniformly without replacement, reproducibly.

    Partial Fisher-Yates over the sorted ids driven by MT19937
    ``getrandbits(64)``; see ``SAMPLER_NAME``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > len(ids):
        raise SampleTooLarge(f"asked for {n} of {len(ids)} ids")
    pool = sorted(ids)
    rng = random.Random(seed)
    for i in range(n):
        j = i + _randbelow(rng, len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]


def write_manifest(reports: list[CaseReport], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in reports:
            writer.writerow((r.id, r.source_path, r.body_char_count))


def read_manifest(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise ValueError(f"{path}: expected header {MANIFEST_HEADER}")
        return [{"id": row["id"], "source_path": row["source_path"],
                 "body_char_count": int(row["body_char_count"])} for row in reader]


def load_report(id: str, source_path: str) -> CaseReport:
    raw = Path(source_path).read_text(encoding="utf-8")
    return CaseReport(id=id, body=parse_article_body(raw), source_path=source_path)
