"""Consensus selection over sampled response candidates.

Each candidate is scored by its mean pairwise metric value against every other
candidate (candidate as hypothesis, other as reference); the highest-scoring
candidate wins, lowest index on ties. This favors the candidate that carries
the most information shared across the pool.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Dialogue, split_text
from .metrics import Tokens, meteor_lite

Metric = Callable[[Tokens, Tokens], float]


@dataclass(frozen=True)
class EnsembleResult:
    selected_index: int
    scores: tuple[float, ...]


@dataclass(frozen=True)
class GroundedResponse:
    response: str
    result: EnsembleResult
    candidates: tuple[str, ...]  # pool after deduplication, sampling order kept


def ensemble_select(candidates: Sequence[Tokens], metric: Metric) -> EnsembleResult:
    """Score every candidate by its mean pairwise metric against the others
    and return the argmax (lowest index on ties). A single candidate scores 0."""
    n = len(candidates)
    if n == 0:
        raise ValueError("ensemble_select needs at least one candidate")
    if n == 1:
        return EnsembleResult(0, (0.0,))
    scores = []
    for i in range(n):
        total = 0.0
        for j in range(n):
            if j != i:
                total += metric(candidates[i], candidates[j])
        scores.append(total / (n - 1))
    best = 0
    for i in range(1, n):
        if scores[i] > scores[best]:
            best = i
    return EnsembleResult(best, tuple(scores))


def dedupe_keep_first(texts: Sequence[str]) -> list[str]:
    seen = set()
    out = []
    for t in texts:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def grounded_respond(
    dialogue_context: Dialogue,
    model,
    k: int,
    top_p: float | None = None,
    metric: Metric | None = None,
    rng_seed: int = 0,
    dedupe: bool = True,
    max_len: int = 32,
) -> GroundedResponse:
    """Sample k candidates conditioned on the dialogue's facts and turns, then
    pick one by consensus. Exact duplicate texts are dropped before selection
    (first occurrence kept) unless dedupe=False."""
    if model is None:
        raise ValueError("grounded_respond requires a model")
    if k < 1:
        raise ValueError("k must be >= 1")
    metric = metric or meteor_lite
    children = np.random.SeedSequence(rng_seed).spawn(k)
    texts = [
        model.generate(
            dialogue_context.turns,
            facts=dialogue_context.facts,
            top_p=top_p,
            max_len=max_len,
            rng=np.random.default_rng(children[i]),
        ).text
        for i in range(k)
    ]
    pool = dedupe_keep_first(texts) if dedupe else list(texts)
    # Empty generations carry no content for the metric; drop them unless
    # nothing else remains.
    nonempty = [t for t in pool if split_text(t)]
    if nonempty:
        pool = nonempty
    elif dedupe:
        pool = pool[:1]
    if not split_text(pool[0] if pool else ""):
        return GroundedResponse("", EnsembleResult(0, (0.0,) * max(1, len(pool))), tuple(pool))
    result = ensemble_select([split_text(t) for t in pool], metric)
    return GroundedResponse(pool[result.selected_index], result, tuple(pool))
