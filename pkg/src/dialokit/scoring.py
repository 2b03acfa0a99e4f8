"""Staged response selection: abusive-word filter, coherence shortlist,
consistency conflict filter, and a final diversity/length/novelty ranking.

Every scorer is a documented closed-form formula behind a small function, so
learned replacements can be swapped in; the cascade itself only depends on the
(candidates -> flags/scores) interfaces.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Utterance, split_text, tokenize
from .metrics import EmbeddingTable

DEFAULT_ABUSIVE = frozenset(
    {"idiot", "stupid", "moron", "jerk", "loser", "scum", "creep", "fool", "trash"}
)
DEFAULT_FALLBACKS = (
    "let's talk about something else.",
    "tell me more about what you enjoy.",
    "i'd rather switch topics. what else is on your mind?",
)


@dataclass
class ScoredCandidate:
    text: str
    tokens: list[str]
    scores: dict[str, float] = field(default_factory=dict)
    abusive: bool = False
    conflict: bool = False
    dropped_at: str | None = None


@dataclass(frozen=True)
class Assertion:
    predicate: str
    value: str
    polarity: int
    turn_index: int


@dataclass(frozen=True)
class CascadeConfig:
    shortlist_k: int = 10
    coherence_alpha: float = 0.7
    rank_weights: tuple[float, float, float] = (0.4, 0.4, 0.2)
    target_len: int = 15
    len_sigma: float = 7.0
    abusive_lexicon: frozenset[str] = DEFAULT_ABUSIVE
    fallbacks: tuple[str, ...] = DEFAULT_FALLBACKS
    extra_exclusive_predicates: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.shortlist_k < 1:
            raise ValueError("shortlist_k must be >= 1")
        if not 0.0 <= self.coherence_alpha <= 1.0:
            raise ValueError("coherence_alpha must lie in [0, 1]")
        if any(w < 0 for w in self.rank_weights) or abs(sum(self.rank_weights) - 1.0) > 1e-9:
            raise ValueError("rank_weights must be non-negative and sum to 1")
        if not self.fallbacks:
            raise ValueError("at least one fallback response is required")


@dataclass
class CascadeTrace:
    candidates: list[ScoredCandidate]
    selected_index: int | None
    fallback: bool
    fallback_text: str | None
    stage_counts: dict[str, int]


def load_lexicon(path: str | Path) -> frozenset[str]:
    """One lowercase token per line; blank lines and # comments ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
    return frozenset(words)


def load_fallbacks(path: str | Path) -> tuple[str, ...]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: no fallback responses")
    return tuple(lines)


def load_exclusive_predicates(path: str | Path) -> tuple[str, ...]:
    """Extra single-valued predicates, one phrase per line ("favorite color"
    adds the pattern "my favorite color is X")."""
    with open(path, encoding="utf-8") as fh:
        return tuple(line.strip().lower() for line in fh if line.strip())


# ---------------------------------------------------------------------------
# stage 1: abusive filter
# ---------------------------------------------------------------------------

def is_abusive(text: str, lexicon: frozenset[str]) -> bool:
    """Token-level, case-insensitive: substrings inside longer words do not
    count ("class" is fine with "ass" in the lexicon)."""
    return any(tok in lexicon for tok in split_text(text))


def abusive_filter(
    cands: Sequence[ScoredCandidate], lexicon: frozenset[str]
) -> tuple[list[ScoredCandidate], list[ScoredCandidate]]:
    kept, flagged = [], []
    for c in cands:
        if is_abusive(c.text, lexicon):
            c.abusive = True
            c.dropped_at = "abusive"
            flagged.append(c)
        else:
            kept.append(c)
    return kept, flagged


# ---------------------------------------------------------------------------
# stage 2: coherence
# ---------------------------------------------------------------------------

def _mean_embedding(words: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    if not words:
        return np.zeros(table.dim)
    return np.mean([table.vector(w) for w in words], axis=0)


def _cosine01(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(float(a @ b) / (na * nb), 0.0, 1.0))


def coherence_score(
    context_turns: Sequence[Utterance],
    cand: ScoredCandidate | str,
    model,
    embeddings: EmbeddingTable,
    alpha: float = 0.7,
) -> float:
    """alpha * logistic(mean per-token log-probability of the candidate under
    the language model given the context) + (1-alpha) * cosine similarity of
    mean word embeddings between the candidate and the last context turn,
    clamped to [0, 1]."""
    text = cand.text if isinstance(cand, ScoredCandidate) else cand
    words = split_text(text)
    if not words:
        raise ValueError("candidate must be non-empty")
    lp = model.mean_token_logprob(list(context_turns), tokenize(text, model.vocab))
    lm_term = 1.0 / (1.0 + math.exp(-lp))
    emb_term = _cosine01(
        _mean_embedding(words, embeddings),
        _mean_embedding(split_text(context_turns[-1].text), embeddings),
    )
    return alpha * lm_term + (1.0 - alpha) * emb_term


# ---------------------------------------------------------------------------
# stage 3: consistency conflicts
# ---------------------------------------------------------------------------

_VALUE = r"([a-z0-9' ]+?)\s*(?:[.,!?;:]|$)"
_LIKE_RE = re.compile(r"\bi (?:like|love|enjoy)\s+" + _VALUE)
_DISLIKE_RE = re.compile(r"\bi (?:hate|dislike|don't like|do not like)\s+" + _VALUE)
_NAME_RE = re.compile(r"\bmy name is\s+" + _VALUE)
_ORIGIN_RE = re.compile(r"\bi(?: a|')m from\s+" + _VALUE)
_AGE_RE = re.compile(r"\bi(?: a|')m\s+(\d+)\s+years old")

SINGLE_VALUED = ("name", "origin", "age")


def extract_assertions(
    text: str, turn_index: int = -1, extra_predicates: Sequence[str] = ()
) -> list[Assertion]:
    """Pull self-assertions out of one utterance via the closed pattern set."""
    low = text.lower()
    out: list[Assertion] = []
    for match in _LIKE_RE.finditer(low):
        out.append(Assertion("like", match.group(1).strip(), +1, turn_index))
    for match in _DISLIKE_RE.finditer(low):
        out.append(Assertion("like", match.group(1).strip(), -1, turn_index))
    for match in _NAME_RE.finditer(low):
        out.append(Assertion("name", match.group(1).strip(), +1, turn_index))
    for match in _ORIGIN_RE.finditer(low):
        out.append(Assertion("origin", match.group(1).strip(), +1, turn_index))
    for match in _AGE_RE.finditer(low):
        out.append(Assertion("age", match.group(1).strip(), +1, turn_index))
    for pred in extra_predicates:
        pattern = re.compile(r"\bmy " + re.escape(pred) + r" is\s+" + _VALUE)
        for match in pattern.finditer(low):
            out.append(Assertion(pred, match.group(1).strip(), +1, turn_index))
    return out


def detect_conflict(
    history: Sequence[Utterance],
    cand_text: str,
    extra_predicates: Sequence[str] = (),
    bot_speaker: str = "B",
) -> tuple[bool, str | None]:
    """A candidate conflicts when it repeats a bot-side predicate with opposite
    polarity on the same value, or gives a different value for a single-valued
    predicate (name/origin/age plus any configured extras)."""
    singles = set(SINGLE_VALUED) | set(extra_predicates)
    past: list[Assertion] = []
    for i, turn in enumerate(history):
        if turn.speaker == bot_speaker:
            past.extend(extract_assertions(turn.text, i, extra_predicates))
    for cand_assert in extract_assertions(cand_text, -1, extra_predicates):
        for prev in past:
            if cand_assert.predicate != prev.predicate:
                continue
            if (
                cand_assert.predicate in singles
                and cand_assert.value != prev.value
            ):
                return True, (
                    f"{cand_assert.predicate} {cand_assert.value!r} contradicts "
                    f"{prev.value!r} from turn {prev.turn_index}"
                )
            if (
                cand_assert.value == prev.value
                and cand_assert.polarity != prev.polarity
            ):
                return True, (
                    f"opposite stance on {cand_assert.value!r} "
                    f"(turn {prev.turn_index})"
                )
    return False, None


# ---------------------------------------------------------------------------
# stage 4: final ranking
# ---------------------------------------------------------------------------

def _trigrams(words: Sequence[str]) -> set[tuple[str, str, str]]:
    return {tuple(words[i : i + 3]) for i in range(len(words) - 2)}


def rank_score(
    context_turns: Sequence[Utterance],
    cand: ScoredCandidate | str,
    weights: tuple[float, float, float] = (0.4, 0.4, 0.2),
    target_len: int = 15,
    len_sigma: float = 7.0,
) -> float:
    """weights[0] * distinct-bigram ratio + weights[1] * gaussian length bonus
    around target_len + weights[2] * (1 - max trigram overlap with any context
    turn). A one-token candidate has bigram ratio 0 by definition."""
    words = split_text(cand.text if isinstance(cand, ScoredCandidate) else cand)
    if not words:
        raise ValueError("candidate must be non-empty")
    bigrams = [tuple(words[i : i + 2]) for i in range(len(words) - 1)]
    distinct_ratio = len(set(bigrams)) / len(bigrams) if bigrams else 0.0
    length_term = math.exp(-((len(words) - target_len) ** 2) / (2.0 * len_sigma**2))
    cand_tris = _trigrams(words)
    overlap = 0.0
    if cand_tris:
        for turn in context_turns:
            turn_tris = _trigrams(split_text(turn.text))
            if turn_tris:
                overlap = max(overlap, len(cand_tris & turn_tris) / len(cand_tris))
    novelty_term = 1.0 - overlap
    return weights[0] * distinct_ratio + weights[1] * length_term + weights[2] * novelty_term


# ---------------------------------------------------------------------------
# the cascade
# ---------------------------------------------------------------------------

def select_response(
    context_turns: Sequence[Utterance],
    cands: Sequence[str] | Sequence[ScoredCandidate],
    cfg: CascadeConfig,
    model,
    embeddings: EmbeddingTable | None = None,
) -> tuple[ScoredCandidate, CascadeTrace]:
    """Run the four stages and return the winner plus a trace covering every
    input candidate exactly once. When every candidate is eliminated a
    configured fallback is returned and marked in the trace."""
    if not cands:
        raise ValueError("select_response needs at least one candidate")
    embeddings = embeddings or EmbeddingTable.hash_seeded()
    scs = [
        c if isinstance(c, ScoredCandidate) else ScoredCandidate(c, split_text(c))
        for c in cands
    ]
    counts = {"input": len(scs), "empty": 0, "abusive": 0, "coherence": 0,
              "conflict": 0, "ranked": 0}

    live = []
    for c in scs:
        if not c.tokens:
            c.dropped_at = "empty"
            counts["empty"] += 1
        else:
            live.append(c)

    live, flagged = abusive_filter(live, cfg.abusive_lexicon)
    counts["abusive"] = len(flagged)

    for c in live:
        c.scores["coherence"] = coherence_score(
            context_turns, c, model, embeddings, cfg.coherence_alpha
        )
    order = sorted(range(len(live)), key=lambda i: (-live[i].scores["coherence"], i))
    shortlist = [live[i] for i in sorted(order[: cfg.shortlist_k])]
    for i in order[cfg.shortlist_k :]:
        live[i].dropped_at = "coherence"
    counts["coherence"] = max(len(live) - len(shortlist), 0)

    finalists = []
    for c in shortlist:
        hit, why = detect_conflict(context_turns, c.text, cfg.extra_exclusive_predicates)
        if hit:
            c.conflict = True
            c.dropped_at = "conflict"
            counts["conflict"] += 1
        else:
            finalists.append(c)

    for c in finalists:
        c.scores["rank"] = rank_score(
            context_turns, c, cfg.rank_weights, cfg.target_len, cfg.len_sigma
        )
    counts["ranked"] = len(finalists)

    if not finalists:
        text = cfg.fallbacks[len(context_turns) % len(cfg.fallbacks)]
        winner = ScoredCandidate(text, split_text(text))
        trace = CascadeTrace(scs, None, True, text, counts)
        return winner, trace

    best = 0
    for i in range(1, len(finalists)):
        if finalists[i].scores["rank"] > finalists[best].scores["rank"]:
            best = i
    winner = finalists[best]
    trace = CascadeTrace(scs, scs.index(winner), False, None, counts)
    return winner, trace
