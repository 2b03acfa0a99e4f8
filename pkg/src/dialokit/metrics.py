"""Reference-based text metrics built from scratch: BLEU, a METEOR-style
aligner with a fragmentation penalty, and a greedy embedding-match F1.

All metrics take token sequences (any hashables, typically lowercased words),
return values in [0, 1], and raise ValueError on empty input. None of them is
assumed symmetric; callers pass (hypothesis, reference) in that order.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations, product
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

Tokens = Sequence[Hashable]

# Occurrence-subset enumeration beyond this many alignments falls back to the
# leftmost pairing (pathological inputs only; normal sentences stay well under).
_MAX_ALIGNMENTS = 50_000


def _require_nonempty(hyp: Tokens, ref: Tokens) -> None:
    if len(hyp) == 0 or len(ref) == 0:
        raise ValueError("metric inputs must be non-empty token sequences")


def _ngrams(toks: Tokens, n: int) -> list[tuple]:
    return [tuple(toks[i : i + n]) for i in range(len(toks) - n + 1)]


def bleu(hyp: Tokens, ref: Tokens) -> float:
    """Geometric mean of clipped n-gram precisions up to n=4 (capped by input
    length) times a brevity penalty. No smoothing: a zero precision at any
    order zeroes the score."""
    _require_nonempty(hyp, ref)
    max_n = min(4, len(hyp), len(ref))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        h = Counter(_ngrams(hyp, n))
        r = Counter(_ngrams(ref, n))
        clipped = sum(min(c, r[g]) for g, c in h.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / sum(h.values()))
    brevity = math.exp(min(0.0, 1.0 - len(ref) / len(hyp)))
    return brevity * math.exp(log_sum / max_n)


@dataclass(frozen=True)
class MeteorParams:
    alpha: float = 0.9   # precision/recall mix in the harmonic mean
    gamma: float = 0.5   # fragmentation penalty weight
    beta: float = 3.0    # fragmentation penalty exponent

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def _best_alignment(hyp: Tokens, ref: Tokens) -> tuple[int, int]:
    """Exact unigram alignment: maximize matches, then minimize chunks.

    For each shared word the matched occurrence subsets are enumerated in
    leftmost-first order and paired in position order, so ties resolve to the
    leftmost alignment. Returns (matches, chunks).
    """
    hyp_pos: dict[Hashable, list[int]] = {}
    ref_pos: dict[Hashable, list[int]] = {}
    for i, w in enumerate(hyp):
        hyp_pos.setdefault(w, []).append(i)
    for j, w in enumerate(ref):
        ref_pos.setdefault(w, []).append(j)
    shared = [w for w in hyp_pos if w in ref_pos]  # hyp first-occurrence order
    if not shared:
        return 0, 0
    matches = 0
    choices: list[list[tuple[tuple[int, int], ...]]] = []
    total = 1
    for w in shared:
        k = min(len(hyp_pos[w]), len(ref_pos[w]))
        matches += k
        word_choices = [
            tuple(zip(hc, rc))
            for hc in combinations(hyp_pos[w], k)
            for rc in combinations(ref_pos[w], k)
        ]
        total *= len(word_choices)
        choices.append(word_choices)
    if total > _MAX_ALIGNMENTS:
        choices = [[c[0]] for c in choices]
    best_chunks = None
    for combo in product(*choices):
        pairs = sorted(p for group in combo for p in group)
        chunks = 1 + sum(
            1
            for (h1, r1), (h2, r2) in zip(pairs, pairs[1:])
            if not (h2 == h1 + 1 and r2 == r1 + 1)
        )
        if best_chunks is None or chunks < best_chunks:
            best_chunks = chunks
            if best_chunks == 1:
                break
    return matches, best_chunks


def meteor_lite(hyp: Tokens, ref: Tokens, params: MeteorParams = MeteorParams()) -> float:
    """Exact-match METEOR-style score: harmonic mean of unigram precision and
    recall, discounted by a chunk fragmentation penalty."""
    _require_nonempty(hyp, ref)
    m, chunks = _best_alignment(hyp, ref)
    if m == 0:
        return 0.0
    p = m / len(hyp)
    r = m / len(ref)
    fmean = (p * r) / (params.alpha * p + (1.0 - params.alpha) * r)
    penalty = params.gamma * (chunks / m) ** params.beta
    return fmean * (1.0 - penalty)


class EmbeddingTable:
    """word -> vector lookup used by the greedy embedding matcher.

    Three constructions: hash-seeded unit vectors (default; every word gets a
    stable vector with no data file), one-hot over a fixed word list, or a
    text file of "word v1 v2 ... vd" lines. Unknown words in a file-backed or
    one-hot table map to the zero vector, which never matches anything.
    """

    def __init__(self, dim: int, vectors: Mapping[Hashable, np.ndarray] | None = None,
                 hash_seed: int | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._vectors = dict(vectors) if vectors is not None else {}
        self._hash_seed = hash_seed
        for w, v in self._vectors.items():
            if v.shape != (dim,):
                raise ValueError(f"vector for {w!r} has shape {v.shape}, want ({dim},)")

    @classmethod
    def hash_seeded(cls, dim: int = 32, seed: int = 0) -> "EmbeddingTable":
        return cls(dim, hash_seed=seed)

    @classmethod
    def one_hot(cls, words: Sequence[Hashable]) -> "EmbeddingTable":
        eye = np.eye(len(words))
        return cls(len(words), {w: eye[i] for i, w in enumerate(words)})

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        vectors: dict[Hashable, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                word, vals = parts[0], parts[1:]
                if dim is None:
                    dim = len(vals)
                if len(vals) != dim or dim == 0:
                    raise ValueError(f"{path}: line {i}: expected {dim} vector values")
                vectors[word] = np.array([float(v) for v in vals])
        if dim is None:
            raise ValueError(f"{path}: no vectors found")
        return cls(dim, vectors)

    def vector(self, word: Hashable) -> np.ndarray:
        v = self._vectors.get(word)
        if v is not None:
            return v
        if self._hash_seed is None:
            return np.zeros(self.dim)
        digest = hashlib.sha256(f"{self._hash_seed}:{word}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        self._vectors[word] = v
        return v


def _directed_greedy(a: Tokens, b: Tokens, table: EmbeddingTable) -> float:
    """Mean over a's words of the best non-negative cosine to any word of b."""
    mat_a = np.stack([table.vector(w) for w in a])
    mat_b = np.stack([table.vector(w) for w in b])
    na = np.linalg.norm(mat_a, axis=1)
    nb = np.linalg.norm(mat_b, axis=1)
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, (mat_a @ mat_b.T) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.mean(np.clip(cos.max(axis=1), 0.0, None)))


def greedy_embed_score(hyp: Tokens, ref: Tokens, table: EmbeddingTable) -> float:
    """F1 of greedy word-to-word embedding matches in both directions."""
    _require_nonempty(hyp, ref)
    precision = _directed_greedy(hyp, ref, table)
    recall = _directed_greedy(ref, hyp, table)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
