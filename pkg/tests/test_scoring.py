import math

import numpy as np
import pytest

from dialokit.corpus import Utterance, split_text, tokenize
from dialokit.metrics import EmbeddingTable
from dialokit.model.gradcheck import micro_config, micro_fixture
from dialokit.scoring import (
    Assertion,
    CascadeConfig,
    ScoredCandidate,
    abusive_filter,
    coherence_score,
    detect_conflict,
    extract_assertions,
    is_abusive,
    load_exclusive_predicates,
    load_fallbacks,
    load_lexicon,
    rank_score,
    select_response,
)


@pytest.fixture(scope="module")
def model():
    m, _ = micro_fixture(micro_config(), seed=9)
    return m


def ctx(*texts):
    return [Utterance("A" if i % 2 == 0 else "B", t) for i, t in enumerate(texts)]


def sc(text):
    return ScoredCandidate(text, split_text(text))


class TestAbusiveFilter:
    LEX = frozenset({"idiot", "ass"})

    def test_flagged_candidate(self):
        kept, flagged = abusive_filter([sc("you are an idiot friend")], self.LEX)
        assert not kept and flagged[0].abusive and flagged[0].dropped_at == "abusive"

    def test_empty_lexicon_flags_nothing(self):
        kept, flagged = abusive_filter([sc("anything goes here")], frozenset())
        assert kept and not flagged

    def test_substring_not_flagged(self):
        assert not is_abusive("this class is great", self.LEX)
        assert is_abusive("what an ASS move", self.LEX)  # case-insensitive

    def test_lexicon_file(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("# comment\nidiot\nScum\n\n")
        assert load_lexicon(path) == frozenset({"idiot", "scum"})


class TestCoherence:
    def test_identical_to_last_turn_has_unit_embedding_term(self, model):
        context = ctx("w00 w01 w02")
        got = coherence_score(context, sc("w00 w01 w02"), model,
                              EmbeddingTable.hash_seeded(), alpha=0.0)
        assert got == pytest.approx(1.0)

    def test_range(self, model):
        context = ctx("w00 w01", "w02 w03 w04")
        table = EmbeddingTable.hash_seeded()
        for text in ("w05 w06", "w00", "w07 w08 w09 w10"):
            score = coherence_score(context, sc(text), model, table)
            assert 0.0 <= score <= 1.0

    def test_empty_candidate_rejected(self, model):
        with pytest.raises(ValueError):
            coherence_score(ctx("w00"), sc(""), model, EmbeddingTable.hash_seeded())

    def test_matches_documented_formula(self, model):
        # Independent recomputation of the alpha-mix.
        context = ctx("w00 w01", "w02 w03")
        table = EmbeddingTable.hash_seeded()
        alpha = 0.7
        for text in ("w04 w05", "w02 w03", "w06"):
            got = coherence_score(context, sc(text), model, table, alpha)
            lp = model.mean_token_logprob(context, tokenize(text, model.vocab))
            lm_term = 1.0 / (1.0 + math.exp(-lp))
            va = np.mean([table.vector(w) for w in split_text(text)], axis=0)
            vb = np.mean([table.vector(w) for w in split_text(context[-1].text)], axis=0)
            cos = float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))
            expected = alpha * lm_term + (1 - alpha) * max(0.0, min(1.0, cos))
            assert got == pytest.approx(expected, rel=1e-12)


class TestConflicts:
    def test_opposite_stance(self):
        hit, why = detect_conflict(ctx("hello", "i love cats"), "i hate cats")
        assert hit and "cats" in why

    def test_name_change(self):
        hit, _ = detect_conflict(ctx("hi", "my name is alex"), "my name is sam")
        assert hit

    def test_different_value_non_exclusive(self):
        hit, _ = detect_conflict(ctx("hi", "i love cats"), "i love dogs")
        assert not hit

    def test_origin_and_age(self):
        assert detect_conflict(ctx("hi", "i am from italy"), "i'm from spain")[0]
        assert detect_conflict(ctx("hi", "i am 30 years old"), "i am 44 years old")[0]
        assert not detect_conflict(ctx("hi", "i am 30 years old"), "i am 30 years old")[0]

    def test_only_bot_turns_count(self):
        # "i love cats" said by the user (speaker A) constrains nothing.
        hit, _ = detect_conflict(ctx("i love cats", "nice weather"), "i hate cats")
        assert not hit

    def test_extra_exclusive_predicate(self):
        history = ctx("hi", "my favorite color is blue")
        hit, _ = detect_conflict(history, "my favorite color is red",
                                 extra_predicates=("favorite color",))
        assert hit
        hit, _ = detect_conflict(history, "my favorite color is red")
        assert not hit

    def test_extraction_patterns(self):
        got = extract_assertions("i enjoy long walks. my name is pat, i'm from oslo")
        preds = {(a.predicate, a.value, a.polarity) for a in got}
        assert ("like", "long walks", 1) in preds
        assert ("name", "pat", 1) in preds
        assert ("origin", "oslo", 1) in preds

    def test_dont_like_is_negative(self):
        (a,) = extract_assertions("i don't like rain")
        assert a == Assertion("like", "rain", -1, -1)

    def test_predicate_file(self, tmp_path):
        path = tmp_path / "preds.txt"
        path.write_text("favorite color\nhometown\n")
        assert load_exclusive_predicates(path) == ("favorite color", "hometown")


class TestRankScore:
    def test_perfect_score(self):
        words = " ".join(f"w{i}" for i in range(15))
        assert rank_score(ctx("other stuff entirely"), sc(words)) == pytest.approx(1.0)

    def test_verbatim_copy_loses_novelty(self):
        text = "the quick brown fox jumps over the lazy dog"
        got = rank_score(ctx(text), sc(text))
        words = split_text(text)
        bigrams = [tuple(words[i:i + 2]) for i in range(len(words) - 1)]
        expected = (
            0.4 * len(set(bigrams)) / len(bigrams)
            + 0.4 * math.exp(-((len(words) - 15) ** 2) / 98.0)
            + 0.2 * 0.0
        )
        assert got == pytest.approx(expected, rel=1e-12)

    def test_single_token(self):
        got = rank_score(ctx("unrelated text"), sc("hello"))
        expected = 0.0 + 0.4 * math.exp(-((1 - 15) ** 2) / 98.0) + 0.2
        assert got == pytest.approx(expected, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rank_score(ctx("a"), sc(""))


def reference_cascade(context, texts, cfg, model, embeddings):
    """Straight-line reimplementation of the four stages."""
    pool = [(i, t) for i, t in enumerate(texts) if split_text(t)]
    pool = [(i, t) for i, t in pool if not is_abusive(t, cfg.abusive_lexicon)]
    scored = [
        (coherence_score(context, sc(t), model, embeddings, cfg.coherence_alpha), i, t)
        for i, t in pool
    ]
    scored.sort(key=lambda row: (-row[0], row[1]))
    shortlist = scored[: cfg.shortlist_k]
    survivors = [
        (i, t)
        for _, i, t in shortlist
        if not detect_conflict(context, t, cfg.extra_exclusive_predicates)[0]
    ]
    if not survivors:
        return None
    ranked = [
        (rank_score(context, sc(t), cfg.rank_weights, cfg.target_len, cfg.len_sigma), i, t)
        for i, t in survivors
    ]
    best = max(range(len(ranked)), key=lambda k: (ranked[k][0], -ranked[k][1]))
    return ranked[best][2]


class TestSelectResponse:
    CFG = CascadeConfig(shortlist_k=5, abusive_lexicon=frozenset({"idiot"}))

    def test_forced_three_way(self, model):
        context = ctx("w00 w01", "i love cats")
        cands = ["you idiot", "i hate cats", "w02 w03 w04"]
        winner, trace = select_response(context, cands, self.CFG, model)
        assert winner.text == "w02 w03 w04"
        assert trace.candidates[0].dropped_at == "abusive"
        assert trace.candidates[1].dropped_at == "conflict"
        assert trace.selected_index == 2 and not trace.fallback

    def test_all_eliminated_returns_fallback(self, model):
        winner, trace = select_response(ctx("w00"), ["idiot", "big idiot"], self.CFG, model)
        assert trace.fallback and trace.selected_index is None
        assert winner.text in self.CFG.fallbacks
        assert not is_abusive(winner.text, self.CFG.abusive_lexicon)

    def test_empty_input_rejected(self, model):
        with pytest.raises(ValueError):
            select_response(ctx("w00"), [], self.CFG, model)

    def test_trace_accounts_for_every_candidate(self, model):
        context = ctx("w00 w01 w02")
        cands = ["idiot", "", "w03 w04", "w05", "w06 w07 w08", "w09"]
        _, trace = select_response(context, cands, self.CFG, model)
        assert len(trace.candidates) == len(cands)
        c = trace.stage_counts
        assert c["input"] == len(cands)
        dropped = sum(1 for sc_ in trace.candidates if sc_.dropped_at is not None)
        assert dropped + c["ranked"] == c["input"]

    def test_matches_reference_composition(self, model):
        rng = np.random.default_rng(12)
        table = EmbeddingTable.hash_seeded()
        words = [f"w{i:02d}" for i in range(20)]
        cfg = CascadeConfig(shortlist_k=4, abusive_lexicon=frozenset({"idiot"}))
        for trial in range(40):
            context = ctx(
                " ".join(rng.choice(words, size=4)),
                "i love cats" if trial % 3 == 0 else " ".join(rng.choice(words, size=3)),
            )
            cands = []
            for _ in range(int(rng.integers(2, 9))):
                roll = rng.random()
                if roll < 0.15:
                    cands.append("what an idiot thing")
                elif roll < 0.3:
                    cands.append("i hate cats")
                else:
                    n = int(rng.integers(1, 8))
                    cands.append(" ".join(rng.choice(words, size=n)))
            winner, trace = select_response(context, cands, cfg, model, table)
            expected = reference_cascade(context, cands, cfg, model, table)
            if expected is None:
                assert trace.fallback
            else:
                assert winner.text == expected

    def test_selected_never_flagged_while_clean_survives(self, model):
        context = ctx("w00", "i love cats")
        cands = ["i hate cats", "idiot", "w01 w02 w03", "i hate cats completely"]
        winner, trace = select_response(context, cands, self.CFG, model)
        assert not winner.abusive and not winner.conflict

    def test_shortlist_bounded_by_k(self, model):
        cfg = CascadeConfig(shortlist_k=2, abusive_lexicon=frozenset())
        cands = [f"w{i:02d} w{i + 1:02d}" for i in range(6)]
        _, trace = select_response(ctx("w00 w01"), cands, cfg, model)
        survivors = [c for c in trace.candidates if c.dropped_at is None]
        assert len(survivors) <= 2
        assert trace.stage_counts["coherence"] == 4

    def test_fallback_file(self, tmp_path):
        path = tmp_path / "fb.txt"
        path.write_text("first reply\nsecond reply\n")
        assert load_fallbacks(path) == ("first reply", "second reply")
