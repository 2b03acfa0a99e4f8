"""Finite-difference verification of the hand-written backward passes.

Central differences on a micro configuration (d_model 8, one layer, vocab 32,
a three-utterance dialogue). The stop-gradient encoder representations are
computed once at the base point and held fixed across perturbed evaluations,
so the differences measure exactly the function the backward pass
differentiates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import Dialogue, Utterance, Vocabulary
from .config import ModelConfig
from .model import DialogueModel

# Relative error with an absolute floor: coordinates with both gradients below
# the floor are noise-dominated under finite differences.
_REL_FLOOR = 1e-3


@dataclass(frozen=True)
class TensorCheck:
    name: str
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    eps: float
    samples_per_tensor: int
    tensors: list[TensorCheck] = field(default_factory=list)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol

    def format(self) -> str:
        lines = [
            f"{'tensor':<16} {'worst coord':>14} {'analytic':>13} {'numeric':>13} {'rel err':>10}"
        ]
        for t in self.tensors:
            idx = ",".join(map(str, t.worst_index))
            lines.append(
                f"{t.name:<16} {idx:>14} {t.analytic:>13.6e} {t.numeric:>13.6e} {t.rel_error:>10.3e}"
            )
        lines.append(f"max relative error: {self.max_rel_error:.3e} "
                     f"(eps={self.eps:g}, {self.samples_per_tensor} coords/tensor)")
        return "\n".join(lines)


def micro_config(**overrides) -> ModelConfig:
    base = dict(
        vocab_size=32, d_model=8, n_layers=1, n_heads=2, d_ff=32,
        flow_layers=1, max_seq=64, max_utterances=4, seed=7, dtype="float64",
    )
    base.update(overrides)
    return ModelConfig(**base)


def micro_fixture(cfg: ModelConfig, seed: int = 0) -> tuple[DialogueModel, Dialogue]:
    words = [f"w{i:02d}" for i in range(cfg.vocab_size - 8)]
    vocab = Vocabulary(words)
    model = DialogueModel(cfg, vocab)
    rng = np.random.default_rng(seed)
    turns = []
    for t in range(3):
        k = int(rng.integers(3, 5))
        text = " ".join(words[int(i)] for i in rng.integers(0, len(words), size=k))
        turns.append(Utterance("A" if t % 2 == 0 else "B", text))
    return model, Dialogue("gradcheck", [], turns)


def grad_check(
    cfg: ModelConfig | None = None,
    eps: float = 1e-5,
    samples_per_tensor: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    cfg = cfg or micro_config()
    if cfg.dtype != "float64":
        raise ValueError("gradient checking requires float64 parameters")
    model, dialogue = micro_fixture(cfg, seed)
    frozen = model.prefix_representations(dialogue.turns, dialogue.facts)

    _, grads = model.loss_and_grads(dialogue, frozen_reprs=frozen)

    def total() -> float:
        bd, _ = model.loss_and_grads(dialogue, want_grads=False, frozen_reprs=frozen)
        return bd.total

    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, eps, samples_per_tensor)
    for name in sorted(model.params):
        tensor = model.params[name]
        grad = grads[name]
        size = tensor.size
        if size <= samples_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=samples_per_tensor, replace=False)
        worst = TensorCheck(name, (0,), 0.0, 0.0, -1.0)
        flat = tensor.reshape(-1)
        for c in coords:
            c = int(c)
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = total()
            flat[c] = orig - eps
            f_minus = total()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(grad.reshape(-1)[c])
            denom = max(abs(analytic) + abs(numeric), _REL_FLOOR)
            rel = abs(analytic - numeric) / denom
            if rel > worst.rel_error:
                worst = TensorCheck(
                    name, tuple(np.unravel_index(c, tensor.shape)), analytic, numeric, rel
                )
        report.tensors.append(worst)
        report.max_rel_error = max(report.max_rel_error, worst.rel_error)
    return report
