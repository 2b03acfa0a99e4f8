"""Training-time dialogue augmentation: prefix truncation for topic-depth
variation and dialogue concatenation for topic changes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Dialogue, Utterance


@dataclass(frozen=True)
class AugmentConfig:
    p_truncate: float = 0.2
    p_concat: float = 0.1
    min_turns: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_truncate <= 1.0 or not 0.0 <= self.p_concat <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.p_truncate + self.p_concat > 1.0:
            raise ValueError("p_truncate + p_concat must not exceed 1")
        if self.min_turns < 1:
            raise ValueError("min_turns must be >= 1")


def truncate_dialogue(d: Dialogue, rng: np.random.Generator, min_turns: int = 2) -> Dialogue:
    """Keep a uniformly chosen strict prefix of at least min_turns turns.

    A dialogue already at min_turns is returned unchanged.
    """
    n = len(d.turns)
    if n < min_turns:
        raise ValueError(f"dialogue {d.id!r} has {n} turns, need at least {min_turns}")
    if n == min_turns:
        return d
    cut = int(rng.integers(min_turns, n))  # turns kept, in [min_turns, n-1]
    return Dialogue(d.id, list(d.facts), d.turns[:cut])


def _flip(speaker: str) -> str:
    return "B" if speaker == "A" else "A"


def concat_dialogues(c: Dialogue, b: Dialogue) -> Dialogue:
    """Append b's turns after c's, relabeling b's speakers if needed so the
    alternation invariant holds across the seam. Facts and ids concatenate."""
    flip = c.turns[-1].speaker == b.turns[0].speaker
    tail = [
        Utterance(_flip(u.speaker) if flip else u.speaker, u.text, u.tokens)
        for u in b.turns
    ]
    return Dialogue(c.id + b.id, list(c.facts) + list(b.facts), list(c.turns) + tail)


def sample_training_dialogue(
    corpus: Sequence[Dialogue], cfg: AugmentConfig, rng: np.random.Generator
) -> Dialogue:
    """Draw one training dialogue: truncated with p_truncate, a truncated+
    concatenated pair with p_concat, otherwise a raw corpus dialogue.

    Dialogues too short to truncate pass through unchanged; the concat branch
    needs a second distinct dialogue and falls back to raw when the corpus has
    only one.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    u = rng.random()
    a = corpus[int(rng.integers(len(corpus)))]
    if u < cfg.p_truncate:
        if len(a.turns) < cfg.min_turns:
            return a
        return truncate_dialogue(a, rng, cfg.min_turns)
    if u < cfg.p_truncate + cfg.p_concat and len(corpus) > 1:
        head = a if len(a.turns) < cfg.min_turns else truncate_dialogue(a, rng, cfg.min_turns)
        while True:
            b = corpus[int(rng.integers(len(corpus)))]
            if b is not a:
                break
        return concat_dialogues(head, b)
    return a
