"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"DPM1"
    version u32
    blob    u32 byte length + UTF-8 JSON {"config": {...}, "vocab": [tokens]}
    tensors repeated until EOF, each:
        name    u32 length + UTF-8 bytes
        dtype   u8 (0 = float64, 1 = float32)
        rank    u8
        dims    rank * u32
        data    row-major little-endian values

Tensors are written in sorted name order, so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..corpus import N_SPECIALS, SPECIAL_TOKENS, Vocabulary
from .config import ModelConfig

MAGIC = b"DPM1"
VERSION = 1
_DTYPE_TAGS = {"float64": 0, "float32": 1}
_TAG_DTYPES = {0: "<f8", 1: "<f4"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, cfg: ModelConfig, vocab: Vocabulary,
                    params: dict[str, np.ndarray]) -> None:
    blob = json.dumps(
        {"config": asdict(cfg), "vocab": list(vocab.tokens)},
        sort_keys=True, separators=(",", ":"), ensure_ascii=False,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in sorted(params):
            tensor = params[name]
            tag = _DTYPE_TAGS[str(tensor.dtype)]
            data = np.ascontiguousarray(tensor).astype(_TAG_DTYPES[tag]).tobytes()
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", tag, tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(data)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, Vocabulary, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        blob = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
        cfg = ModelConfig(**blob["config"])
        tokens = blob["vocab"]
        if tuple(tokens[:N_SPECIALS]) != SPECIAL_TOKENS:
            raise CheckpointError(f"{path}: vocabulary specials do not match")
        vocab = Vocabulary(tokens[N_SPECIALS:])
        params: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("checkpoint truncated")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            tag, rank = struct.unpack("<BB", _read_exact(fh, 2))
            if tag not in _TAG_DTYPES:
                raise CheckpointError(f"{path}: unknown dtype tag {tag}")
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, count * int(_TAG_DTYPES[tag][-1]))
            arr = np.frombuffer(raw, dtype=_TAG_DTYPES[tag]).reshape(dims)
            params[name] = arr.astype(cfg.np_dtype)
        return cfg, vocab, params
