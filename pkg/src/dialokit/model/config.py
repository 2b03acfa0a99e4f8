"""Model hyperparameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    flow_layers: int = 1
    max_seq: int = 256
    max_utterances: int = 16
    top_p: float = 0.9
    seed: int = 0
    dtype: str = "float64"  # float64 required for gradient checking
    # Ablation: condition the generation/bag-of-words heads on the encoder
    # difference instead of the flow block's prediction.
    use_oracle_delta: bool = False

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")
        if self.vocab_size < 9:
            raise ValueError("vocab_size must cover the specials plus content")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "flow_layers",
                     "max_seq", "max_utterances"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)
