"""Adam training of the three-task objective over augmented dialogue draws.

Updates are per-dialogue (batch size one), so the peak learning rate is
reached after a one-epoch linear warmup and then cosine-decayed; without the
decay the gradient noise floor dominates the late epochs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..augment import AugmentConfig, sample_training_dialogue
from ..corpus import Dialogue, build_vocab
from .config import ModelConfig
from .model import DialogueModel, encode_turns
from .types import LossBreakdown


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    flow: float
    gen: float
    bow: float
    total: float
    dialogues: int
    skipped: int


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, breakdown: LossBreakdown):
        super().__init__(
            f"non-finite loss at epoch {epoch}, step {step}: "
            f"flow={breakdown.flow!r} gen={breakdown.gen!r} bow={breakdown.bow!r}"
        )
        self.epoch = epoch
        self.step = step
        self.breakdown = breakdown


def _lr_at(step: int, total_steps: int, warmup_steps: int, peak: float,
           floor_frac: float = 0.02) -> float:
    """Linear warmup to peak, then cosine decay to floor_frac * peak."""
    if peak == 0.0:
        return 0.0
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    lo = floor_frac * peak
    return lo + (peak - lo) * 0.5 * (1.0 + math.cos(math.pi * progress))


def _fits(model: DialogueModel, d: Dialogue) -> bool:
    if len(d.turns) < 2 or len(d.turns) - 1 > model.cfg.max_utterances:
        return False
    ids, _ = encode_turns(model.vocab, d.turns, d.facts)
    return len(ids) <= model.cfg.max_seq


def train(
    corpus: Sequence[Dialogue],
    model_cfg: ModelConfig,
    augment_cfg: AugmentConfig | None = None,
    epochs: int = 20,
    lr: float = 1e-3,
    seed: int = 0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    adam_eps: float = 1e-8,
    progress: Callable[[EpochStats], None] | None = None,
) -> tuple[DialogueModel, list[EpochStats]]:
    """Train on len(corpus) augmented draws per epoch, one Adam update per
    dialogue, with the three-task loss summed over every target n >= 2.

    model_cfg.vocab_size acts as the vocabulary cap; the built vocabulary's
    actual size is written back into the model's config. Deterministic for a
    given seed. Raises TrainingDiverged on a non-finite loss.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    augment_cfg = augment_cfg or AugmentConfig()
    vocab = build_vocab(corpus, cap=model_cfg.vocab_size)
    cfg = replace(model_cfg, vocab_size=len(vocab))
    model = DialogueModel(cfg, vocab)
    rng = np.random.default_rng(seed)

    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(p) for k, p in model.params.items()}
    t = 0
    total_steps = epochs * len(corpus)
    warmup = len(corpus)
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        sums = {"flow": 0.0, "gen": 0.0, "bow": 0.0, "total": 0.0}
        used = skipped = 0
        for step in range(len(corpus)):
            d = sample_training_dialogue(corpus, augment_cfg, rng)
            if not _fits(model, d):
                skipped += 1
                continue
            bd, grads = model.loss_and_grads(d)
            if not np.isfinite(bd.total):
                raise TrainingDiverged(epoch, step, bd)
            used += 1
            sums["flow"] += bd.flow
            sums["gen"] += bd.gen
            sums["bow"] += bd.bow
            sums["total"] += bd.total
            step_lr = _lr_at((epoch - 1) * len(corpus) + step, total_steps, warmup, lr)
            t += 1
            bc1 = 1.0 - beta1 ** t
            bc2 = 1.0 - beta2 ** t
            for name, param in model.params.items():
                g = grads[name]
                m[name] = beta1 * m[name] + (1.0 - beta1) * g
                v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
                param -= step_lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + adam_eps)
        denom = max(used, 1)
        stats = EpochStats(
            epoch,
            sums["flow"] / denom,
            sums["gen"] / denom,
            sums["bow"] / denom,
            sums["total"] / denom,
            used,
            skipped,
        )
        history.append(stats)
        if progress is not None:
            progress(stats)
    return model, history
