"""Dialogue corpus model: speaker-tagged turns, a word-level vocabulary,
JSONL parsing, and a deterministic synthetic scripted-topic corpus.

The corpus file format is JSONL, one dialogue per line:

    {"id": str, "facts": [str], "turns": [{"speaker": "A"|"B", "text": str}]}
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Special token ids are fixed; content words start at id 8.
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<sep>", "<fact>", "<spk_a>", "<spk_b>", "<unk>")
PAD_ID, BOS_ID, EOS_ID, SEP_ID, FACT_ID, SPK_A_ID, SPK_B_ID, UNK_ID = range(8)
N_SPECIALS = len(SPECIAL_TOKENS)

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")
_ATTACH_LEFT = set(".,!?;:%')]}")


class CorpusFormatError(ValueError):
    """A corpus file line violates the JSONL schema."""


def split_text(text: str) -> list[str]:
    """Lowercased word-level split; punctuation marks become their own tokens.

    Total function: any input yields a (possibly empty) token list.
    """
    return _TOKEN_RE.findall(text.lower())


def join_tokens(words: Sequence[str]) -> str:
    """Inverse of split_text up to case and spacing: closing punctuation is
    reattached to the preceding word."""
    out: list[str] = []
    for w in words:
        if out and w in _ATTACH_LEFT:
            out[-1] += w
        else:
            out.append(w)
    return " ".join(out)


@dataclass
class Utterance:
    speaker: str  # "A" or "B"
    text: str
    tokens: list[int] | None = None

    def __post_init__(self) -> None:
        if self.speaker not in ("A", "B"):
            raise ValueError(f"speaker must be 'A' or 'B', got {self.speaker!r}")
        if not self.text.strip():
            raise ValueError("utterance text must be non-empty")


@dataclass
class Dialogue:
    id: str
    facts: list[str] = field(default_factory=list)
    turns: list[Utterance] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.turns:
            raise ValueError(f"dialogue {self.id!r} has no turns")
        for i, (prev, cur) in enumerate(zip(self.turns, self.turns[1:])):
            if prev.speaker == cur.speaker:
                raise ValueError(
                    f"dialogue {self.id!r}: speakers must alternate (turns {i} and {i + 1})"
                )

    @property
    def context(self) -> list[Utterance]:
        return self.turns[:-1]

    @property
    def response(self) -> Utterance:
        return self.turns[-1]


class Vocabulary:
    """Immutable token<->id mapping. Ids 0-7 are reserved for special tokens;
    unknown words map to the <unk> id."""

    def __init__(self, content_tokens: Sequence[str]):
        tokens = list(SPECIAL_TOKENS) + list(content_tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._id_to_token: tuple[str, ...] = tuple(tokens)
        self._token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_token == other._id_to_token

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._id_to_token

    @property
    def content_tokens(self) -> tuple[str, ...]:
        return self._id_to_token[N_SPECIALS:]

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids; out-of-vocabulary words become <unk>."""
    return [vocab.id(w) for w in split_text(text)]


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Map ids back to text, dropping special ids (including <unk>)."""
    return join_tokens([vocab.token(i) for i in ids if i >= N_SPECIALS])


def tokenize_dialogue(d: Dialogue, vocab: Vocabulary) -> Dialogue:
    """Copy of d with every turn's token ids filled in."""
    turns = [Utterance(u.speaker, u.text, tokenize(u.text, vocab)) for u in d.turns]
    return Dialogue(d.id, list(d.facts), turns)


def build_vocab(corpus: Sequence[Dialogue], cap: int = 512) -> Vocabulary:
    """Frequency-ranked vocabulary over all turn and fact text.

    Keeps the most frequent words up to cap (which includes the 8 special
    slots); ties break lexicographically.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if cap < N_SPECIALS:
        raise ValueError(f"cap must be at least {N_SPECIALS}")
    counts: Counter[str] = Counter()
    for d in corpus:
        for f in d.facts:
            counts.update(split_text(f))
        for u in d.turns:
            counts.update(split_text(u.text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [w for w, _ in ranked[: cap - N_SPECIALS]]
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# JSONL parsing / serialization
# ---------------------------------------------------------------------------

def dialogue_to_json(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "facts": list(d.facts),
        "turns": [{"speaker": u.speaker, "text": u.text} for u in d.turns],
    }


def dialogue_from_json(obj: dict, where: str = "dialogue") -> Dialogue:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"{where}: expected a JSON object")
    for key in ("id", "turns"):
        if key not in obj:
            raise CorpusFormatError(f"{where}: missing required key {key!r}")
    facts = obj.get("facts", [])
    if not isinstance(facts, list) or not all(isinstance(f, str) for f in facts):
        raise CorpusFormatError(f"{where}: 'facts' must be a list of strings")
    if not isinstance(obj["turns"], list):
        raise CorpusFormatError(f"{where}: 'turns' must be a list")
    turns = []
    for j, t in enumerate(obj["turns"]):
        if not isinstance(t, dict) or "speaker" not in t or "text" not in t:
            raise CorpusFormatError(f"{where}: turn {j} must have 'speaker' and 'text'")
        try:
            turns.append(Utterance(t["speaker"], t["text"]))
        except ValueError as e:
            raise CorpusFormatError(f"{where}: turn {j}: {e}") from e
    try:
        return Dialogue(str(obj["id"]), list(facts), turns)
    except ValueError as e:
        raise CorpusFormatError(f"{where}: {e}") from e


def parse_corpus_lines(lines: Iterable[str]) -> list[Dialogue]:
    dialogues = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"line {i}: invalid JSON ({e.msg})") from e
        dialogues.append(dialogue_from_json(obj, where=f"line {i}"))
    return dialogues


def parse_corpus(path: str | Path) -> list[Dialogue]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh)


def corpus_to_jsonl(dialogues: Sequence[Dialogue]) -> str:
    return "".join(json.dumps(dialogue_to_json(d), ensure_ascii=False) + "\n" for d in dialogues)


def write_corpus(dialogues: Sequence[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(corpus_to_jsonl(dialogues))


# ---------------------------------------------------------------------------
# Synthetic scripted-topic corpus
# ---------------------------------------------------------------------------
# Each dialogue walks a chain of topics; consecutive turns mostly stay on the
# same topic, so the content words of turn t+1 are predictable from turn t's
# topic. Lexicons are pairwise disjoint to keep that measurable.

TOPIC_LEXICONS: dict[str, tuple[str, ...]] = {
    "space": ("rocket", "orbit", "mars", "moon", "telescope", "comet", "galaxy",
              "astronaut", "launch", "crater", "satellite", "nebula", "eclipse",
              "asteroid"),
    "cooking": ("soup", "garlic", "onion", "oven", "recipe", "bread", "butter",
                "pepper", "salad", "spice", "dough", "pasta", "skillet", "broth"),
    "music": ("guitar", "drums", "melody", "concert", "piano", "song", "rhythm",
              "band", "violin", "chorus", "album", "singer", "trumpet", "encore"),
    "soccer": ("goal", "striker", "keeper", "match", "league", "corner", "penalty",
               "coach", "stadium", "referee", "tackle", "midfield", "derby",
               "winger"),
    "garden": ("roses", "tulips", "soil", "compost", "seeds", "lawn", "hedge",
               "weeds", "bloom", "shade", "pond", "trellis", "orchid", "mulch"),
    "movies": ("actor", "screen", "plot", "camera", "scenes", "trailer", "sequel",
               "drama", "villain", "script", "theater", "credits", "casting",
               "premiere"),
    "hiking": ("trail", "summit", "ridge", "valley", "compass", "boots", "creek",
               "cliff", "meadow", "cabin", "switchback", "basin", "lookout",
               "scramble"),
    "painting": ("canvas", "brush", "easel", "palette", "acrylic", "portrait",
                 "sketch", "mural", "pigment", "gallery", "varnish", "charcoal",
                 "stencil", "fresco"),
}

# Sentence frames; {a}/{b}/{c} slots are filled from the dialogue's focus set
# (a few recurring words of the active topic lexicon), which is what makes the
# next turn's content words predictable from the turns before it. Every
# non-slot word below counts as template vocabulary.
_TURN_TEMPLATES = (
    "i like the {a} and the {b} near the {c}",
    "the {a} goes with the {b} and the {c}",
    "yes the {a} and the {c} suit the {b}",
    "we saw the {a} with the {b} and the {c}",
    "the {a} near the {b} suits the {c}",
)

_SHIFT_TEMPLATES = (
    "what about the {a} and the {b} and the {c}",
)

_FACT_TEMPLATES = (
    "the {a} goes well with the {b} and the {c}",
    "the {a} is near the {b} and the {c}",
)

TEMPLATE_WORDS = frozenset(
    w
    for tpl in _TURN_TEMPLATES + _SHIFT_TEMPLATES + _FACT_TEMPLATES
    for w in split_text(tpl.replace("{a}", "").replace("{b}", "").replace("{c}", ""))
)

_TOPIC_SHIFT_P = 0.10
_FOCUS_SIZE = 4


def _fill(template: str, words: Sequence[str], rng: np.random.Generator) -> str:
    names = re.findall(r"\{(\w)\}", template)
    picks = rng.choice(len(words), size=len(names), replace=False)
    slots = {name: words[int(idx)] for name, idx in zip(names, picks)}
    return template.format(**slots)


def _focus(topic: str, rng: np.random.Generator) -> list[str]:
    lex = TOPIC_LEXICONS[topic]
    picks = rng.choice(len(lex), size=_FOCUS_SIZE, replace=False)
    return [lex[int(i)] for i in picks]


def gen_synth_corpus(seed: int, n_dialogues: int) -> list[Dialogue]:
    """Deterministic scripted-topic corpus: 4-10 turns per dialogue, alternating
    speakers, shared vocabulary under 200 words.

    Each dialogue revolves around a small focus set of its topic's words and
    walks a fixed cycle of sentence frames from a random starting point, so
    both the frame and the content words of the next turn are predictable from
    the turns before it (occasional scripted topic shifts excepted).
    """
    if n_dialogues < 1:
        raise ValueError("n_dialogues must be >= 1")
    rng = np.random.default_rng(seed)
    topics = sorted(TOPIC_LEXICONS)
    out: list[Dialogue] = []
    for i in range(n_dialogues):
        topic = topics[int(rng.integers(len(topics)))]
        focus = _focus(topic, rng)
        offset = int(rng.integers(len(_TURN_TEMPLATES)))
        n_turns = int(rng.integers(4, 11))
        n_facts = int(rng.integers(1, 3))
        facts = [_fill(_FACT_TEMPLATES[int(rng.integers(len(_FACT_TEMPLATES)))], focus, rng)
                 for _ in range(n_facts)]
        turns: list[Utterance] = []
        for t in range(n_turns):
            shifted = t > 0 and rng.random() < _TOPIC_SHIFT_P
            if shifted:
                others = [x for x in topics if x != topic]
                topic = others[int(rng.integers(len(others)))]
                focus = _focus(topic, rng)
                tpl = _SHIFT_TEMPLATES[int(rng.integers(len(_SHIFT_TEMPLATES)))]
            else:
                tpl = _TURN_TEMPLATES[(offset + t) % len(_TURN_TEMPLATES)]
            text = _fill(tpl, focus, rng)
            turns.append(Utterance("A" if t % 2 == 0 else "B", text))
        out.append(Dialogue(f"synth-{seed}-{i:05d}", facts, turns))
    return out
