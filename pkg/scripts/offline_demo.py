#!/usr/bin/env python3
"""Run the whole pipeline offline on the bundled synthetic fixtures.

    python3 scripts/offline_demo.py --out-dir demo_out

Chains extract -> annotate (fixture transport, both GPT-4 strategies) ->
evaluate -> agree -> report, then prints the headline numbers.
"""

import argparse
import json
from pathlib import Path

from casetimelines.cli import main

E2E = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "e2e"


def step(argv: list[str]) -> None:
    code = main(argv)
    if code != 0:
        raise SystemExit(f"step failed ({code}): {' '.join(argv)}")


def run(out_dir: Path, threshold: float) -> dict:
    d = ["--out-dir", str(out_dir)]
    step(["extract", "--root", str(E2E / "corpus")] + d)
    for strategy in ("gpt-4", "gpt-4-feedback"):
        step(["annotate", "--manifest", str(out_dir / "manifest.tsv"), "--strategy", strategy,
              "--offline", "--fixtures", str(E2E / "responses")] + d)
        step(["evaluate", "--reference", str(E2E / "reference"),
              "--candidate", str(out_dir / "timelines" / strategy),
              "--threshold", str(threshold)] + d)
    step(["agree", "--a", str(out_dir / "timelines" / "gpt-4"),
          "--b", str(out_dir / "timelines" / "gpt-4-feedback"), "--threshold", str(threshold)] + d)
    step(["report", "--evals", str(out_dir / "evaluations")] + d)
    return json.loads((out_dir / "report" / "summary.json").read_text())


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("demo_out"))
    ap.add_argument("--threshold", type=float, default=0.1)
    args = ap.parse_args()
    summary = run(args.out_dir, args.threshold)
    print(f"{'side_a':<8} {'side_b':<16} {'matched':>9} {'C(harrell)':>11} {'C(lenient)':>11} "
          f"{'mean |err| h':>13}")
    for p in summary["pairs"]:
        err = p["pooled_errors"]["mean"] if p["pooled_errors"] else float("nan")
        print(f"{p['side_a']:<8} {p['side_b']:<16} {p['total_matched']:>4}/{p['total_events_a']:<4} "
              f"{p['mean_concordance_harrell']:>11.4f} {p['mean_concordance_lenient']:>11.4f} "
              f"{err:>13.1f}")
    print(f"tables: {args.out_dir / 'report' / 'tables'}")
