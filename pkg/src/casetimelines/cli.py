"""Command-line entry point: ``casetimelines <subcommand> ...``.

Every subcommand accepts ``--out-dir`` (all outputs are resolved inside
it), ``--seed``, ``--offline`` and ``-v``. Runtime failures exit 1 and print
one JSON error record on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import (SAMPLER_NAME, load_report, read_manifest, sample_reports, scan_corpus,
                     write_manifest)
from .embedding import RemoteEmbedder, SentenceTransformerEmbedder, TrigramEmbedder
from .errors import PipelineError
from .matching import (Metric, build_distance_matrix, export_match_candidates,
                       match_audit_rows, recursive_best_match, write_match_audit)
from .metrics import ConcordanceMode
from .prompting import (DEFAULT_ESTIMATOR, PROMPT_DIGEST, STRATEGIES, annotate_many,
                        estimator_name)
from .report import (EmitFormat, EvalConfig, EvalMode, EvalReport, aggregate, emit,
                     evaluate_pair, load_json)
from .timeline import Timeline, load_timeline_csv, write_timeline
from .transport import ExchangeCache, FixtureTransport, HttpChatTransport, RateLimiter

logger = logging.getLogger("casetimelines")

NETWORK_WORKERS = 4


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _out_path(args, rel: str | os.PathLike) -> Path:
    base = Path(args.out_dir).resolve()
    target = (base / rel).resolve()
    if target != base and base not in target.parents:
        raise UsageError(f"{rel} resolves outside --out-dir {args.out_dir}")
    return target


def _provenance(args) -> dict:
    skip = {"func", "parser"}
    flags = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in sorted(vars(args).items()) if k not in skip}
    return {"tool": "casetimelines", "version": __version__, "subcommand": args.command,
            "flags": flags}


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_timeline_dir(directory: str, annotator: str) -> dict[str, Timeline]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"timeline directory not found: {directory}")
    return {f.stem: load_timeline_csv(f, f.stem, annotator) for f in sorted(d.glob("*.csv"))}


def _paired(a: dict[str, Timeline], b: dict[str, Timeline]) -> list[str]:
    common = sorted(set(a) & set(b))
    for rid in sorted(set(a) ^ set(b)):
        logger.warning("%s present on one side only; skipped", rid)
    if not common:
        raise PipelineError("no report ids in common between the two timeline sets")
    return common


def _embedder(args):
    if args.offline or args.embedder == "trigram":
        return TrigramEmbedder()
    if args.embedder == "remote":
        return RemoteEmbedder(endpoint_url=args.embedding_endpoint, model=args.embedding_model)
    return SentenceTransformerEmbedder(args.embedding_model)


def _eval_config(args, backend) -> EvalConfig:
    return EvalConfig(threshold=args.threshold, metric=Metric(args.metric),
                      embedder=backend.tag, concordance_mode=ConcordanceMode(args.concordance_mode))


# -------------------------------------------------------------- subcommands

def cmd_extract(args) -> int:
    out = _out_path(args, args.out)
    result = scan_corpus(args.root, workers=args.workers)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(result.reports, out)
    diag_path = out.with_name(out.stem + ".diagnostics.tsv")
    with open(diag_path, "w", encoding="utf-8") as fh:
        fh.write("path\tkind\tmessage\n")
        for d in result.diagnostics:
            fh.write(f"{d.path}\t{d.kind}\t{d.message}\n")
    _write_json(out.with_name(out.stem + ".provenance.json"),
                {**_provenance(args), "files_seen": result.files_seen,
                 "eligible": len(result.reports), "diagnostics": len(result.diagnostics)})
    logger.info("%d of %d files eligible -> %s", len(result.reports), result.files_seen, out)
    return 0


def cmd_sample(args) -> int:
    out = _out_path(args, args.out)
    ids = [row["id"] for row in read_manifest(args.manifest)]
    if args.exclude:
        excluded = set(Path(args.exclude).read_text(encoding="utf-8").split())
        ids = [i for i in ids if i not in excluded]
    chosen = sample_reports(sorted(ids), args.n, args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(f"{i}\n" for i in chosen), encoding="utf-8")
    _write_json(out.with_name(out.stem + ".provenance.json"),
                {**_provenance(args), "sampler": SAMPLER_NAME, "population": len(ids)})
    return 0


def _llm_config(args):
    base = STRATEGIES[args.strategy]
    overrides = {
        "model_name": args.model, "temperature": args.temperature,
        "token_limit": args.token_limit, "feedback_rounds": args.feedback_rounds,
        "max_retries": args.max_retries, "request_timeout": args.timeout,
        "endpoint_url": args.endpoint,
    }
    return dataclasses.replace(base, **{k: v for k, v in overrides.items() if v is not None})


def cmd_annotate(args) -> int:
    config = _llm_config(args)
    out = _out_path(args, args.out or f"timelines/{config.tag}")
    cache = ExchangeCache(_out_path(args, args.cache_dir))
    rows = read_manifest(args.manifest)
    if args.ids:
        wanted = set(Path(args.ids).read_text(encoding="utf-8").split())
        rows = [r for r in rows if r["id"] in wanted]
    reports = [load_report(r["id"], r["source_path"]) for r in rows]

    if args.offline or args.fixtures:
        transport = FixtureTransport.from_dir(args.fixtures)
    else:
        transport = HttpChatTransport(endpoint_url=args.endpoint,
                                      rate_limiter=RateLimiter(args.rpm))

    outcomes = annotate_many(reports, config, transport, cache,
                             max_workers=args.workers or NETWORK_WORKERS)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    failures = []
    for o in outcomes:
        if o.exchanges:
            (out / "raw" / f"{o.report_id}.txt").write_text(o.exchanges[-1].response_text,
                                                          encoding="utf-8")
        if o.timeline is not None:
            write_timeline(o.timeline, out / f"{o.report_id}.csv")
        else:
            failures.append({"report_id": o.report_id, "error": o.error.kind,
                             "message": str(o.error)})
    config_doc = dataclasses.asdict(config)
    config_doc.pop("endpoint_url")
    _write_json(out / "annotate_run.json", {
        **_provenance(args), "llm_config": config_doc, "config_digest": config.digest(),
        "prompt_digest": PROMPT_DIGEST, "token_estimator": estimator_name(DEFAULT_ESTIMATOR),
        "reports": [o.report_id for o in outcomes], "failures": failures,
    })
    if failures:
        logger.error("%d of %d reports failed", len(failures), len(outcomes))
        raise next(o.error for o in outcomes if o.error is not None)
    return 0


def cmd_match(args) -> int:
    backend = _embedder(args)
    a = _load_timeline_dir(args.a, args.a_tag or Path(args.a).name)
    b = _load_timeline_dir(args.b, args.b_tag or Path(args.b).name)
    out = _out_path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    metric = Metric(args.metric)
    candidates = []
    for rid in _paired(a, b):
        m = build_distance_matrix(a[rid].events, b[rid].events, metric, backend)
        ms = recursive_best_match(m, args.threshold)
        write_match_audit(match_audit_rows(a[rid].events, b[rid].events, m, ms),
                          out / f"{rid}.tsv")
        for c in export_match_candidates(a[rid].events, b[rid].events, m, tuple(args.window)):
            candidates.append((c.distance, rid, c))
    candidates.sort(key=lambda x: (x[0], x[1], x[2].index_a))
    with open(out / "candidates.tsv", "w", encoding="utf-8") as fh:
        fh.write("report_id\ttext_a\ttext_b\tdistance\n")
        for dist, rid, c in candidates:
            fh.write(f"{rid}\t{c.text_a}\t{c.text_b}\t{dist:.4f}\n")
    _write_json(out / "match_run.json", {**_provenance(args), "embedder": backend.tag})
    return 0


def _evaluate_sets(args, a: dict[str, Timeline], b: dict[str, Timeline], mode: EvalMode,
                   out: Path) -> int:
    backend = _embedder(args)
    config = _eval_config(args, backend)
    prov = _provenance(args)
    out.mkdir(parents=True, exist_ok=True)
    for rid in _paired(a, b):
        r = evaluate_pair(a[rid], b[rid], config, backend, mode)
        r.provenance = prov
        emit(r, out / f"{rid}.json")
    return 0


def cmd_evaluate(args) -> int:
    ref = _load_timeline_dir(args.reference, "manual")
    tag = args.candidate_tag or Path(args.candidate).name
    cand = _load_timeline_dir(args.candidate, tag)
    out = _out_path(args, args.out or f"evaluations/manual__{tag}")
    return _evaluate_sets(args, ref, cand, EvalMode.REFERENCE_VS_CANDIDATE, out)


def cmd_agree(args) -> int:
    a_tag = args.a_tag or Path(args.a).name
    b_tag = args.b_tag or Path(args.b).name
    a = _load_timeline_dir(args.a, a_tag)
    b = _load_timeline_dir(args.b, b_tag)
    out = _out_path(args, args.out or f"evaluations/{a_tag}__{b_tag}")
    return _evaluate_sets(args, a, b, EvalMode.INTER_LLM, out)


def cmd_report(args) -> int:
    reports: list[EvalReport] = []
    for d in args.evals:
        for f in sorted(Path(d).rglob("*.json")):
            doc = load_json(f)
            if isinstance(doc, EvalReport):
                reports.append(doc)
    if not reports:
        raise PipelineError("no EvalReport documents found")
    out = _out_path(args, args.out)
    summary = aggregate(reports, provenance={"run": _provenance(args)})
    emit(summary, out / "summary.json")
    emit(summary, out / "tables", EmitFormat.TABLES, reports=reports)
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="all outputs are written inside this directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--offline", action="store_true",
                        help="fixture transport and trigram embedder only; no network")
    common.add_argument("-v", "--verbose", action="count", default=0)

    evalopts = argparse.ArgumentParser(add_help=False)
    evalopts.add_argument("--threshold", type=float, default=0.1)
    evalopts.add_argument("--metric", choices=[m.value for m in Metric],
                          default=Metric.COSINE_EMBEDDING.value)
    evalopts.add_argument("--embedder", choices=["trigram", "remote", "sentence-transformers"],
                          default="trigram")
    evalopts.add_argument("--embedding-model", default="pritamdeka/S-PubMedBert-MS-MARCO")
    evalopts.add_argument("--embedding-endpoint", default=None,
                          help="remote embedder URL (else $CASETIMELINES_EMBED_ENDPOINT)")
    evalopts.add_argument("--concordance-mode", choices=[m.value for m in ConcordanceMode],
                          default=ConcordanceMode.HARRELL.value)

    parser = argparse.ArgumentParser(
        prog="casetimelines",
        description="Relative clinical timelines from PMOA case reports.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="scan a PMOA corpus into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--out", default="manifest.tsv")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("sample", parents=[common], help="draw a reproducible id sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--exclude", help="file of ids to leave out (e.g. a development set)")
    p.add_argument("--out", default="sample.txt")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("annotate", parents=[common], help="elicit timelines from an LLM")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ids", help="file of report ids to annotate (default: whole manifest)")
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="gpt-4")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--token-limit", type=int)
    p.add_argument("--feedback-rounds", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--endpoint", help="chat endpoint URL (else $CASETIMELINES_LLM_ENDPOINT)")
    p.add_argument("--fixtures", help="directory of fixture / recorded-exchange JSON files")
    p.add_argument("--cache-dir", default="cache")
    p.add_argument("--out", help="timeline directory (default timelines/<strategy>)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--rpm", type=float, default=None, help="request rate limit per minute")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("match", parents=[common, evalopts], help="write match audits")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--a-tag")
    p.add_argument("--b-tag")
    p.add_argument("--window", type=float, nargs=2, default=[0.0, 0.13], metavar=("LO", "HI"))
    p.add_argument("--out", default="match_audit")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("evaluate", parents=[common, evalopts],
                       help="reference vs candidate EvalReports")
    p.add_argument("--reference", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--candidate-tag")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("agree", parents=[common, evalopts], help="inter-LLM EvalReports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--a-tag")
    p.add_argument("--b-tag")
    p.add_argument("--out")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("report", parents=[common], help="aggregate EvalReports into tables")
    p.add_argument("--evals", nargs="+", required=True)
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def _error_record(kind: str, message: str) -> str:
    return json.dumps({"error": kind, "message": message}, sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except PipelineError as exc:
        print(_error_record(exc.kind, str(exc)), file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(_error_record(type(exc).__name__, str(exc)), file=sys.stderr)
    return 1


def run() -> None:
    sys.exit(main())
