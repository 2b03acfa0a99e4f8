"""Surface cleanup of a selected response: spacing, entity casing, sentence
capitalization. Idempotent, and only case and whitespace ever change."""
from __future__ import annotations

import re
from pathlib import Path

DEFAULT_CASING = {
    "new york": "New York",
    "los angeles": "Los Angeles",
    "san francisco": "San Francisco",
    "cow palace": "Cow Palace",
    "nba": "NBA",
    "mars": "Mars",
    "earth": "Earth",
    "paris": "Paris",
    "italy": "Italy",
    "monday": "Monday",
    "sunday": "Sunday",
}

_SPACE_BEFORE_PUNCT = re.compile(r"\s+([.,!?;:])")
_STANDALONE_I = re.compile(r"\bi\b")


class CasingLexicon:
    """lowercase phrase -> cased form, applied longest phrase first. The cased
    form must equal its key case-insensitively, so replacements can never
    change token content."""

    def __init__(self, mapping: dict[str, str] | None = None):
        mapping = DEFAULT_CASING if mapping is None else mapping
        self._entries: list[tuple[re.Pattern, str]] = []
        for key, cased in sorted(mapping.items(), key=lambda kv: -len(kv[0])):
            if key != key.lower():
                raise ValueError(f"lexicon key {key!r} must be lowercase")
            if cased.lower() != key:
                raise ValueError(
                    f"cased form {cased!r} does not match key {key!r} case-insensitively"
                )
            pattern = re.compile(r"\b" + re.escape(key) + r"\b", re.IGNORECASE)
            self._entries.append((pattern, cased))

    @classmethod
    def load(cls, path: str | Path) -> "CasingLexicon":
        """TSV lines: lowercase phrase <tab> Cased Form."""
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise ValueError(f"{path}: line {i}: expected tab-separated pair")
                key, cased = line.split("\t", 1)
                mapping[key.strip()] = cased.strip()
        return cls(mapping)

    def apply(self, text: str) -> str:
        for pattern, cased in self._entries:
            text = pattern.sub(cased, text)
        return text


def finalize_text(text: str, lexicon: CasingLexicon | None = None) -> str:
    """Collapse whitespace, detach space before punctuation, restore entity
    casing, capitalize standalone "i" and the first letter."""
    out = " ".join(text.split())
    out = _SPACE_BEFORE_PUNCT.sub(r"\1", out)
    if lexicon is not None:
        out = lexicon.apply(out)
    out = _STANDALONE_I.sub("I", out)
    for i, ch in enumerate(out):
        if ch.isalpha():
            out = out[:i] + ch.upper() + out[i + 1 :]
            break
    return out
