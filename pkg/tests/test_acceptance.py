"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured numbers. Run with `pytest tests/test_acceptance.py -v -s`.

The training criterion performs a real 20-epoch run (a few minutes); everything
else is fast.
"""
import json
import math
import sys
import time

import numpy as np
import pytest

from dialokit.augment import AugmentConfig, sample_training_dialogue, truncate_dialogue
from dialokit.corpus import (
    N_SPECIALS,
    TOPIC_LEXICONS,
    Dialogue,
    Utterance,
    gen_synth_corpus,
    split_text,
    tokenize,
)
from dialokit.ensemble import ensemble_select
from dialokit.metrics import meteor_lite
from dialokit.model import ModelConfig, grad_check, nucleus, train
from dialokit.model.gradcheck import micro_config, micro_fixture
from dialokit.model.sampling import sample_from
from dialokit.scoring import CascadeConfig, is_abusive, select_response
from dialokit.service import ChatPipeline, ChatService, SessionStore
from dialokit.metrics import EmbeddingTable


def _report(name: str, detail: str) -> None:
    print(f"ACCEPT {name}: PASS ({detail})", file=sys.stderr)


# ---------------------------------------------------------------------------
# ensemble
# ---------------------------------------------------------------------------

def brute_force_consensus(candidates, metric):
    n = len(candidates)
    if n == 1:
        return 0, [0.0]
    scores = []
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if i != j:
                acc += metric(candidates[i], candidates[j])
        scores.append(acc / (n - 1))
    best = 0
    for i in range(1, n):
        if scores[i] > scores[best]:
            best = i
    return best, scores


def test_ensemble_oracle_equivalence():
    rng = np.random.default_rng(2024)
    alphabet = list("abcdef")
    start = time.time()
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        cands = [
            [alphabet[int(k)] for k in rng.integers(0, len(alphabet), size=rng.integers(1, 7))]
            for _ in range(n)
        ]
        got = ensemble_select(cands, meteor_lite)
        want_idx, want_scores = brute_force_consensus(cands, meteor_lite)
        assert got.selected_index == want_idx
        assert all(abs(a - b) <= 1e-12 for a, b in zip(got.scores, want_scores))
    elapsed = time.time() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    _report("ensemble-oracle", f"1000 pools, {elapsed:.1f}s")


REFERENCE_CANDIDATES = [
    "the warriors played the nba finals at the cow palace because the oakland arena was booked.",
    "the golden state warriors played the home games in the 1975 nba finals at the cow palace.",
    "the cow palace was the place to watch games in 1975.",
    "the golden state warriors played at the cow palace because the oakland arena was booked.",
    "the golden state warriors played in 1975 at the cow palace because the oakland arena was booked.",
]
REFERENCE_GROUND_TRUTH = (
    "in 1975 the golden state warriors had to play at the cow palace because their arena was booked."
)
REFERENCE_GT_SCORES = [0.592, 0.591, 0.540, 0.808, 0.811]


def _spearman(xs, ys):
    def ranks(vals):
        order = sorted(range(len(vals)), key=lambda i: vals[i])
        out = [0] * len(vals)
        for pos, idx in enumerate(order):
            out[idx] = pos
        return out

    rx, ry = ranks(xs), ranks(ys)
    n = len(xs)
    return 1 - 6 * sum((a - b) ** 2 for a, b in zip(rx, ry)) / (n * (n * n - 1))


def test_reference_ranking_reproduction():
    ours = [
        meteor_lite(split_text(c), split_text(REFERENCE_GROUND_TRUTH))
        for c in REFERENCE_CANDIDATES
    ]
    rho = _spearman(ours, REFERENCE_GT_SCORES)
    assert rho >= 0.8
    picked = ensemble_select(
        [split_text(c) for c in REFERENCE_CANDIDATES], meteor_lite
    ).selected_index
    assert picked in (3, 4)
    _report("reference-ranking", f"spearman={rho:.2f}, consensus pick=example {picked + 1}")


# ---------------------------------------------------------------------------
# gradients and losses
# ---------------------------------------------------------------------------

def test_gradient_check():
    start = time.time()
    report = grad_check(eps=1e-5, samples_per_tensor=200, seed=0)
    elapsed = time.time() - start
    assert report.ok(1e-4), report.format()
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    _report("gradient-check", f"max rel err={report.max_rel_error:.2e}, {elapsed:.1f}s")


def test_loss_identities():
    model, _ = micro_fixture(micro_config(), seed=17)
    rng = np.random.default_rng(5)
    words = list(model.vocab.content_tokens)
    checked = 0
    for _ in range(100):
        n_turns = int(rng.integers(2, 5))
        turns = []
        for t in range(n_turns):
            k = int(rng.integers(1, 5))
            text = " ".join(words[int(i)] for i in rng.integers(0, len(words), size=k))
            turns.append(Utterance("A" if t % 2 == 0 else "B", text))
        d = Dialogue("rand", [], turns)
        n = int(rng.integers(2, n_turns + 1))
        bd = model.compute_losses(d, n)
        assert bd.total == bd.flow + bd.gen + bd.bow
        checked += 1
    assert checked == 100

    # analytic uniform-logit values with zeroed parameters
    for v in model.params.values():
        v[...] = 0.0
    ln_v = math.log(model.cfg.vocab_size)
    d = Dialogue("u", [], [Utterance("A", "w00 w01 w02"), Utterance("B", "w03 w04")])
    bd = model.compute_losses(d, 2)
    gen_expected = 2 * ln_v
    assert abs(bd.gen - gen_expected) / gen_expected < 1e-9
    kg = model.kg_lm_loss([], d.turns[:-1], d.turns[-1])
    kg_expected = 3 * ln_v
    assert abs(kg - kg_expected) / kg_expected < 1e-9
    _report("loss-identities", "100 exact sums; uniform-logit analytic match <1e-9")


# ---------------------------------------------------------------------------
# training sanity (the slow one)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    corpus = gen_synth_corpus(1, 500)
    start = time.time()
    model, history = train(corpus, ModelConfig(vocab_size=256, seed=0),
                           epochs=20, lr=1e-3, seed=0)
    return model, history, time.time() - start


def test_training_sanity(trained):
    model, history, elapsed = trained
    e1, e20 = history[0], history[19]
    assert elapsed < 15 * 60, f"training took {elapsed / 60:.1f} min"
    assert e20.total < 0.6 * e1.total, (
        f"epoch20 {e20.total:.1f} vs epoch1 {e1.total:.1f}"
    )
    assert e20.flow < e1.flow

    topic_words = {w for lex in TOPIC_LEXICONS.values() for w in lex}
    held = gen_synth_corpus(99, 40)
    vocab_size = len(model.vocab)
    recalls = []
    for d in held:
        try:
            reprs = model.prefix_representations(d.turns, d.facts)
        except ValueError:
            continue
        for n in range(2, len(d.turns) + 1):
            plan = model.plan_next(list(reprs[: n - 1]))
            logits = plan.delta @ model.params["bow.w"] + model.params["bow.b"]
            top20 = set(np.argsort(-logits)[:20].tolist())
            content = [
                tok
                for tok in tokenize(d.turns[n - 1].text, model.vocab)
                if tok >= N_SPECIALS and model.vocab.token(tok) in topic_words
            ]
            if content:
                recalls.append(sum(1 for tok in content if tok in top20) / len(content))
    recall = float(np.mean(recalls))
    chance = 20 / vocab_size
    assert recall >= 2 * chance, f"recall {recall:.3f} vs chance {chance:.3f}"
    _report(
        "training-sanity",
        f"ratio={e20.total / e1.total:.2f}, flow {e1.flow:.2f}->{e20.flow:.2f}, "
        f"bow recall={recall / chance:.1f}x chance, {elapsed / 60:.1f} min",
    )


# ---------------------------------------------------------------------------
# nucleus sampling
# ---------------------------------------------------------------------------

def _oracle_nucleus(dist, p):
    if p >= 1.0:
        return {i for i in range(len(dist)) if dist[i] > 0}
    order = sorted(range(len(dist)), key=lambda i: (-dist[i], i))
    acc, out = 0.0, set()
    for i in order:
        out.add(i)
        acc += dist[i]
        if acc >= p:
            break
    return out


def test_nucleus_sampling():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        size = int(rng.integers(1, 40))
        raw = rng.random(size) ** 3
        dist = raw / raw.sum()
        p = float(rng.uniform(0.01, 1.0))
        assert set(nucleus(dist, p).tolist()) == _oracle_nucleus(dist, p)

    inside = 0
    for _ in range(500):
        size = int(rng.integers(2, 30))
        raw = rng.random(size)
        dist = raw / raw.sum()
        p = float(rng.uniform(0.05, 1.0))
        allowed = set(nucleus(dist, p).tolist())
        for _ in range(20):
            assert sample_from(dist, p, rng) in allowed
            inside += 1
    assert inside == 10_000

    model, dialogue = micro_fixture(micro_config(), seed=23)
    for seed in range(3):
        sampled = model.generate(dialogue.turns, top_p=1e-12, max_len=12,
                                 rng=np.random.default_rng(seed))
        greedy = model.greedy_generate(dialogue.turns, max_len=12)
        assert sampled.token_ids == greedy.token_ids
    _report("nucleus-sampling", "1000 oracle matches, 10000 in-nucleus draws, greedy match")


# ---------------------------------------------------------------------------
# scoring cascade
# ---------------------------------------------------------------------------

def _reference_cascade(context, texts, cfg, model, table):
    from dialokit.scoring import coherence_score, detect_conflict, rank_score, ScoredCandidate

    pool = [(i, t) for i, t in enumerate(texts) if split_text(t)]
    pool = [(i, t) for i, t in pool if not is_abusive(t, cfg.abusive_lexicon)]
    scored = sorted(
        ((coherence_score(context, ScoredCandidate(t, split_text(t)), model, table,
                          cfg.coherence_alpha), i, t) for i, t in pool),
        key=lambda row: (-row[0], row[1]),
    )[: cfg.shortlist_k]
    survivors = [(i, t) for _, i, t in scored
                 if not detect_conflict(context, t, cfg.extra_exclusive_predicates)[0]]
    if not survivors:
        return None
    ranked = [(rank_score(context, ScoredCandidate(t, split_text(t)), cfg.rank_weights,
                          cfg.target_len, cfg.len_sigma), i, t) for i, t in survivors]
    best = max(range(len(ranked)), key=lambda k: (ranked[k][0], -ranked[k][1]))
    return ranked[best][2]


def test_cascade_guarantees():
    model, _ = micro_fixture(micro_config(max_seq=128), seed=31)
    table = EmbeddingTable.hash_seeded()
    cfg = CascadeConfig(shortlist_k=6, abusive_lexicon=frozenset({"idiot", "scum"}))
    words = [f"w{i:02d}" for i in range(20)]
    rng = np.random.default_rng(99)
    fallbacks = 0
    for trial in range(1000):
        context = [
            Utterance("A", " ".join(words[int(i)] for i in rng.integers(0, 20, size=3))),
            Utterance("B", "i love cats"),
            Utterance("A", " ".join(words[int(i)] for i in rng.integers(0, 20, size=2))),
        ]
        cands = []
        all_flagged = trial % 50 == 0
        for _ in range(int(rng.integers(2, 10))):
            roll = rng.random()
            if all_flagged or roll < 0.2:
                cands.append("you are scum" if rng.random() < 0.5 else "i hate cats")
            else:
                k = int(rng.integers(1, 8))
                cands.append(" ".join(words[int(i)] for i in rng.integers(0, 20, size=k)))
        winner, trace = select_response(context, cands, cfg, model, table)
        expected = _reference_cascade(context, cands, cfg, model, table)
        clean_survivors = [
            c for c in trace.candidates if not c.abusive and not c.conflict and c.tokens
        ]
        if clean_survivors:
            assert not winner.abusive and not winner.conflict
        if expected is None:
            assert trace.fallback
            fallbacks += 1
            assert not is_abusive(winner.text, cfg.abusive_lexicon)
        else:
            assert winner.text == expected
    assert fallbacks >= 20
    _report("cascade-guarantees", f"1000 pools, {fallbacks} fallback cases")


# ---------------------------------------------------------------------------
# augmentation distributions
# ---------------------------------------------------------------------------

def test_augmentation_distributions():
    def mk(n_turns, did):
        return Dialogue(did, [], [
            Utterance("A" if i % 2 == 0 else "B", f"turn {i} of {did}")
            for i in range(n_turns)
        ])

    rng = np.random.default_rng(1)
    d8 = mk(8, "base")
    n = 10_000
    counts = {k: 0 for k in range(2, 8)}
    for _ in range(n):
        counts[len(truncate_dialogue(d8, rng).turns)] += 1
    p = 1 / 6
    sigma = math.sqrt(n * p * (1 - p))
    for kept, count in counts.items():
        assert abs(count - n * p) <= 3 * sigma, f"kept={kept}: {count}"

    corpus = [mk(8, f"d{i}") for i in range(6)]
    ids = {d.id for d in corpus}
    cfg = AugmentConfig(p_truncate=0.3, p_concat=0.2)
    branch = {"truncate": 0, "concat": 0, "raw": 0}
    for _ in range(n):
        drawn = sample_training_dialogue(corpus, cfg, rng)
        assert drawn.turns
        for prev, cur in zip(drawn.turns, drawn.turns[1:]):
            assert prev.speaker != cur.speaker
        if drawn.id not in ids:
            branch["concat"] += 1
        elif len(drawn.turns) < 8:
            branch["truncate"] += 1
        else:
            branch["raw"] += 1
    for name, prob in (("truncate", 0.3), ("concat", 0.2), ("raw", 0.5)):
        sigma = math.sqrt(n * prob * (1 - prob))
        assert abs(branch[name] - n * prob) <= 3 * sigma, branch
    _report("augmentation-distributions", f"cuts and branches within 3 sigma over {n} draws")


# ---------------------------------------------------------------------------
# service replay
# ---------------------------------------------------------------------------

def _scripted_run(tmp_path, name, pipeline):
    store = SessionStore(tmp_path / name)
    service = ChatService(pipeline, store, model_loaded=False)
    sids = [service.handle("POST", "/api/sessions", b"")[1]["session_id"] for _ in range(3)]
    script = [
        (0, "w00 w01 w02"), (1, "w03 w04"), (2, "w05 w06 w07"),
        (0, "w08 w09"), (2, "w10"), (1, "w11 w12"),
        (1, "w13 w14 w15"), (0, "w16"), (2, "w17 w18"),
        (2, "w19 w20"), (0, "w21 w22 w23"), (1, "w00 w02"),
    ]
    replies = []
    traces = []
    for session_idx, text in script:
        status, obj = service.handle(
            "POST", f"/api/sessions/{sids[session_idx]}/messages",
            json.dumps({"text": text}).encode(),
        )
        assert status == 200
        replies.append(obj["reply"])
        traces.append(obj["trace"])
    histories = [service.handle("GET", f"/api/sessions/{sid}", b"")[1] for sid in sids]
    store.close()
    return sids, replies, traces, histories


def test_service_replay():
    import tempfile
    from pathlib import Path

    model, _ = micro_fixture(micro_config(max_seq=160), seed=41)
    cascade = CascadeConfig(shortlist_k=5, abusive_lexicon=frozenset({"idiot"}))
    pipeline = ChatPipeline(model, cascade=cascade, n_candidates=6, max_len=6, seed=3)

    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        sids, replies1, traces, hist1 = _scripted_run(tmp_path, "run1.jsonl", pipeline)

        # kill-and-recover: a fresh store replayed from the log sees identical histories
        recovered = SessionStore(tmp_path / "run1.jsonl")
        service = ChatService(pipeline, recovered, model_loaded=False)
        for sid, before in zip(sids, hist1):
            after = service.handle("GET", f"/api/sessions/{sid}", b"")[1]
            assert after == before
        recovered.close()

        # deterministic replies: the same scripted run in a fresh store matches
        _, replies2, _, _ = _scripted_run(tmp_path, "run2.jsonl", pipeline)
        assert replies1 == replies2

        # every reply satisfies the cascade invariants
        for reply, trace in zip(replies1, traces):
            assert reply.strip()
            assert not is_abusive(reply, cascade.abusive_lexicon)
            if not trace["fallback"]:
                chosen = trace["candidates"][trace["selected_index"]]
                assert not chosen["abusive"] and not chosen["conflict"]
            assert trace["stage_counts"]["input"] == len(trace["candidates"])
    _report("service-replay", "3 sessions x 12 interleaved messages, recovery + determinism")
