"""Value types shared across the model package."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class UtteranceRepr:
    """Representation of the dialogue prefix ending at utterance n (1-based)."""

    n: int
    vector: np.ndarray


@dataclass
class PlanResult:
    """Predicted next-prefix representation and the planning delta.

    delta is exactly predicted.vector minus the last conditioning prefix
    vector; re-applying the subtraction must reproduce it elementwise.
    """

    predicted: UtteranceRepr
    delta: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    flow: float
    gen: float
    bow: float
    total: float

    @classmethod
    def of(cls, flow: float, gen: float, bow: float) -> "LossBreakdown":
        return cls(flow, gen, bow, flow + gen + bow)


@dataclass
class StepLog:
    """Per-step generation record: full next-token distribution, the nucleus
    that was sampled from, and the chosen id."""

    probs: np.ndarray
    nucleus_ids: np.ndarray
    chosen: int


@dataclass
class Candidate:
    text: str
    token_ids: list[int] = field(default_factory=list)
    steps: list[StepLog] | None = None
