#!/usr/bin/env python3
"""List event pairs whose distance falls near the match threshold.

Used to pick the cut-off by eye: pairs just below it should read as the same
event, pairs just above should not.

    python3 scripts/threshold_review.py REF_DIR CAND_DIR --window 0.07 0.13
"""

import argparse
from pathlib import Path

from casetimelines.embedding import RemoteEmbedder, TrigramEmbedder
from casetimelines.matching import build_distance_matrix, export_match_candidates
from casetimelines.timeline import load_timeline_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ref_dir", type=Path)
    ap.add_argument("cand_dir", type=Path)
    ap.add_argument("--window", type=float, nargs=2, default=(0.07, 0.13))
    ap.add_argument("--remote", action="store_true",
                    help="use the embedding endpoint from $CASETIMELINES_EMBED_ENDPOINT")
    args = ap.parse_args()

    backend = RemoteEmbedder() if args.remote else TrigramEmbedder()
    rows = []
    for ref_file in sorted(args.ref_dir.glob("*.csv")):
        cand_file = args.cand_dir / ref_file.name
        if not cand_file.exists():
            continue
        a = load_timeline_csv(ref_file, ref_file.stem, "manual")
        b = load_timeline_csv(cand_file, ref_file.stem, "candidate")
        m = build_distance_matrix(a.events, b.events, backend=backend)
        rows += [(c.distance, ref_file.stem, c.text_a, c.text_b)
                 for c in export_match_candidates(a.events, b.events, m, tuple(args.window))]

    print(f"{'distance':>8}  {'report':<12} {'reference':<35} candidate")
    for d, rid, ta, tb in sorted(rows):
        print(f"{d:8.4f}  {rid:<12} {ta[:35]:<35} {tb}")
    print(f"{len(rows)} pairs in [{args.window[0]}, {args.window[1]}] using {backend.tag}")


if __name__ == "__main__":
    main()
