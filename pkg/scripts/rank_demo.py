#!/usr/bin/env python3
"""Consensus-selection walkthrough: score a fixed candidate pool pairwise and
show which response carries the most shared information."""
from dialokit.corpus import split_text
from dialokit.ensemble import ensemble_select
from dialokit.metrics import meteor_lite

CANDIDATES = [
    "the warriors played the nba finals at the cow palace because the oakland arena was booked.",
    "the golden state warriors played the home games in the 1975 nba finals at the cow palace.",
    "the cow palace was the place to watch games in 1975.",
    "the golden state warriors played at the cow palace because the oakland arena was booked.",
    "the golden state warriors played in 1975 at the cow palace because the oakland arena was booked.",
]
REFERENCE = (
    "in 1975 the golden state warriors had to play at the cow palace "
    "because their arena was booked."
)


def main() -> None:
    result = ensemble_select([split_text(c) for c in CANDIDATES], meteor_lite)
    print(f"{'#':>2} {'consensus':>10} {'vs reference':>13}  text")
    for i, cand in enumerate(CANDIDATES):
        ref_score = meteor_lite(split_text(cand), split_text(REFERENCE))
        marker = "<- selected" if i == result.selected_index else ""
        print(f"{i + 1:>2} {result.scores[i]:>10.4f} {ref_score:>13.4f}  {cand[:60]}... {marker}")


if __name__ == "__main__":
    main()
