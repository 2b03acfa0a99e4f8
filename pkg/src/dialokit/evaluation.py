"""Corpus-level metric reports over aligned prediction/reference files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import split_text
from .metrics import EmbeddingTable, bleu, greedy_embed_score, meteor_lite

METRIC_NAMES = ("bleu", "meteor", "embed")


@dataclass
class EvalReport:
    count: int
    metrics: tuple[str, ...]
    per_example: list[dict[str, float]] = field(default_factory=list)
    means: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"count": self.count, "means": self.means, "per_example": self.per_example},
            indent=2,
        )

    def table(self) -> str:
        header = f"{'metric':<10} {'mean':>10}"
        rows = [header, "-" * len(header)]
        for name in self.metrics:
            rows.append(f"{name:<10} {self.means[name]:>10.4f}")
        rows.append(f"examples: {self.count}")
        return "\n".join(rows)


def _read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def evaluate_corpus(
    predictions_path: str | Path,
    references_path: str | Path,
    metrics: Sequence[str] = METRIC_NAMES,
    embeddings: EmbeddingTable | None = None,
) -> EvalReport:
    """Score aligned files line by line. Files must have equal line counts and
    no empty lines."""
    preds = _read_lines(predictions_path)
    refs = _read_lines(references_path)
    if len(preds) != len(refs):
        raise ValueError(
            f"line counts differ: {len(preds)} predictions vs {len(refs)} references"
        )
    unknown = set(metrics) - set(METRIC_NAMES)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    embeddings = embeddings or EmbeddingTable.hash_seeded()
    report = EvalReport(len(preds), tuple(metrics))
    for i, (pred, ref) in enumerate(zip(preds, refs), start=1):
        hyp, reference = split_text(pred), split_text(ref)
        if not hyp or not reference:
            raise ValueError(f"line {i}: empty text")
        row: dict[str, float] = {}
        if "bleu" in metrics:
            row["bleu"] = bleu(hyp, reference)
        if "meteor" in metrics:
            row["meteor"] = meteor_lite(hyp, reference)
        if "embed" in metrics:
            row["embed"] = greedy_embed_score(hyp, reference, embeddings)
        report.per_example.append(row)
    for name in metrics:
        report.means[name] = sum(r[name] for r in report.per_example) / max(report.count, 1)
    return report
