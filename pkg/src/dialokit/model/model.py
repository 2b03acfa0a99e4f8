"""The dialogue model: a small causal transformer LM plus an utterance-level
flow block that plans the next turn as a vector operation.

Token layout for a dialogue (facts optional):

    [<fact> f1 ...] [<fact> f2 ...] <sep>  <spk_a> u1 ... <sep> <spk_b> u2 ...

The prefix representation U_n is the top-layer hidden state at the last
content token of utterance n. The flow block consumes the sequence
U_1, U_{1..2}, ... and predicts the next prefix representation; the planning
delta (prediction minus last input) conditions generation and the
bag-of-words head.

Gradient layout: the flow block's inputs and regression targets are
stop-gradient copies of the encoder states, so the flow loss contributes no
gradient to the encoder; the encoder trains through the generation loss.
"""
from __future__ import annotations

import numpy as np

from ..corpus import (
    BOS_ID,
    EOS_ID,
    FACT_ID,
    N_SPECIALS,
    SEP_ID,
    SPK_A_ID,
    SPK_B_ID,
    Dialogue,
    Utterance,
    Vocabulary,
    detokenize,
    tokenize,
)
from . import net
from .config import ModelConfig
from .sampling import nucleus
from .types import Candidate, LossBreakdown, PlanResult, StepLog, UtteranceRepr

_SPK = {"A": SPK_A_ID, "B": SPK_B_ID}
_STOP_IDS = (EOS_ID, SEP_ID)

LossTerms = tuple[str, ...]
ALL_TERMS: LossTerms = ("flow", "gen", "bow")


def encode_turns(
    vocab: Vocabulary, turns: list[Utterance], facts=()
) -> tuple[list[int], list[tuple[int, int]]]:
    """Token ids plus per-utterance [start, end) spans of the content tokens."""
    ids: list[int] = []
    for fact in facts:
        ids.append(FACT_ID)
        ids.extend(tokenize(fact, vocab))
    if facts:
        ids.append(SEP_ID)
    spans: list[tuple[int, int]] = []
    for i, turn in enumerate(turns):
        if i > 0:
            ids.append(SEP_ID)
        ids.append(_SPK[turn.speaker])
        toks = turn.tokens if turn.tokens is not None else tokenize(turn.text, vocab)
        if not toks:
            raise ValueError(f"utterance {i} tokenizes to nothing: {turn.text!r}")
        spans.append((len(ids), len(ids) + len(toks)))
        ids.extend(toks)
    return ids, spans


class DialogueModel:
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, params: net.Params | None = None):
        if len(vocab) != cfg.vocab_size:
            raise ValueError(f"vocab has {len(vocab)} entries, config says {cfg.vocab_size}")
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else net.init_params(cfg)

    # ------------------------------------------------------------------
    # encoder
    # ------------------------------------------------------------------

    def _check_len(self, ids: list[int]) -> None:
        if len(ids) > self.cfg.max_seq:
            raise ValueError(f"encoded length {len(ids)} exceeds max_seq {self.cfg.max_seq}")

    def _hiddens(self, ids: list[int]):
        p = self.params
        x = p["tok_emb"][ids] + p["pos_emb"][: len(ids)]
        return net.stack(x, p, "lm", self.cfg.n_layers, self.cfg.n_heads)

    def encode_prefix(self, dialogue: Dialogue, n: int) -> UtteranceRepr:
        """Top-layer hidden state at the final token of utterance n (1-based),
        running the causal LM over the encoded prefix u_1..u_n."""
        if not 1 <= n <= len(dialogue.turns):
            raise ValueError(f"n={n} out of range for {len(dialogue.turns)} turns")
        ids, spans = encode_turns(self.vocab, dialogue.turns[:n], dialogue.facts)
        self._check_len(ids)
        h, _ = self._hiddens(ids)
        return UtteranceRepr(n, h[spans[n - 1][1] - 1].copy())

    def prefix_representations(self, turns: list[Utterance], facts=()) -> np.ndarray:
        """All prefix representations U_1..U_N from one causal pass; row k is
        the representation of the prefix ending at utterance k+1."""
        ids, spans = encode_turns(self.vocab, turns, facts)
        self._check_len(ids)
        h, _ = self._hiddens(ids)
        return h[[e - 1 for _, e in spans]].copy()

    # ------------------------------------------------------------------
    # flow block
    # ------------------------------------------------------------------

    def _flow_forward(self, v: np.ndarray):
        p = self.params
        x = v + p["flow.upos"][: v.shape[0]]
        y, cache = net.stack(x, p, "flow", self.cfg.flow_layers, self.cfg.n_heads)
        out = y @ p["flow.out.w"] + p["flow.out.b"]
        return out, (cache, y)

    def _flow_backward(self, dout: np.ndarray, cache, grads: net.Grads) -> None:
        p = self.params
        stack_cache, y = cache
        net.acc(grads, "flow.out.w", y.T @ dout)
        net.acc(grads, "flow.out.b", dout.sum(axis=0))
        dy = dout @ p["flow.out.w"].T
        dx = net.stack_bwd(dy, stack_cache, p, "flow", self.cfg.flow_layers,
                           self.cfg.n_heads, grads)
        net.acc(grads, "flow.upos", np.concatenate(
            [dx, np.zeros((self.cfg.max_utterances - dx.shape[0], dx.shape[1]),
                          dtype=dx.dtype)], axis=0))
        # dx w.r.t. the inputs is discarded: flow inputs are stop-gradient.

    def plan_next(self, prefix_reprs) -> PlanResult:
        """Predict the next prefix representation from the prefix sequence
        [U_1, U_{1..2}, ..., U_{1..m}]; delta plans utterance m+1."""
        vecs = [r.vector if isinstance(r, UtteranceRepr) else np.asarray(r)
                for r in prefix_reprs]
        if not vecs:
            raise ValueError("plan_next needs at least one prefix representation")
        if len(vecs) > self.cfg.max_utterances:
            raise ValueError(f"got {len(vecs)} prefixes, max is {self.cfg.max_utterances}")
        v = np.stack(vecs).astype(self.cfg.np_dtype)
        out, _ = self._flow_forward(v)
        predicted = out[-1].copy()
        return PlanResult(UtteranceRepr(len(vecs) + 1, predicted), predicted - v[-1])

    # ------------------------------------------------------------------
    # losses
    # ------------------------------------------------------------------

    def compute_losses(self, dialogue: Dialogue, target_n: int) -> LossBreakdown:
        bd, _ = self.loss_and_grads(dialogue, [target_n], want_grads=False)
        return bd

    def loss_and_grads(
        self,
        dialogue: Dialogue,
        target_ns: list[int] | None = None,
        terms: LossTerms = ALL_TERMS,
        want_grads: bool = True,
        frozen_reprs: np.ndarray | None = None,
    ) -> tuple[LossBreakdown, net.Grads | None]:
        """Three-task loss summed over the requested target utterances (all
        n >= 2 by default), with gradients for every parameter tensor."""
        cfg, p = self.cfg, self.params
        n_turns = len(dialogue.turns)
        if target_ns is None:
            target_ns = list(range(2, n_turns + 1))
        if not target_ns:
            raise ValueError("no target utterances (dialogue needs >= 2 turns)")
        for n in target_ns:
            if not 2 <= n <= n_turns:
                raise ValueError(f"target_n={n} out of range [2, {n_turns}]")
        if n_turns - 1 > cfg.max_utterances:
            raise ValueError(f"{n_turns} turns exceed max_utterances {cfg.max_utterances}")

        ids_list, spans = encode_turns(self.vocab, dialogue.turns, dialogue.facts)
        self._check_len(ids_list)
        ids = np.asarray(ids_list)
        h, lm_cache = self._hiddens(ids_list)
        d = cfg.d_model
        last_pos = [e - 1 for _, e in spans]
        u_det = frozen_reprs if frozen_reprs is not None else h[last_pos].copy()
        v = u_det[: n_turns - 1]
        flow_out, flow_cache = self._flow_forward(v)

        emb = p["tok_emb"]
        fuse_w, fuse_b = p["fuse.w"], p["fuse.b"]
        bow_w, bow_b = p["bow.w"], p["bow.b"]
        grads: net.Grads = {}
        dh = np.zeros_like(h)
        d_flow_out = np.zeros_like(flow_out)
        flow_sum = gen_sum = bow_sum = 0.0

        for n in target_ns:
            j = n - 2
            pred = flow_out[j]
            target = u_det[n - 1]
            if "flow" in terms:
                diff = pred - target
                flow_sum += float(diff @ diff) / d
                if want_grads:
                    d_flow_out[j] += (2.0 / d) * diff
            if cfg.use_oracle_delta:
                delta = u_det[n - 1] - u_det[n - 2]
            else:
                delta = pred - u_det[n - 2]
            d_delta = np.zeros(d, dtype=h.dtype)
            s, e = spans[n - 1]
            targets = ids[s:e]
            if "gen" in terms:
                hp = h[s - 1 : e - 1]
                fused_in = np.concatenate([hp, np.broadcast_to(delta, hp.shape)], axis=1)
                fused = fused_in @ fuse_w + fuse_b
                logits = fused @ emb.T
                logp = net.log_softmax(logits)
                rows = np.arange(len(targets))
                gen_sum += float(-logp[rows, targets].sum())
                if want_grads:
                    dlogits = np.exp(logp)
                    dlogits[rows, targets] -= 1.0
                    net.acc(grads, "tok_emb", dlogits.T @ fused)
                    dfused = dlogits @ emb
                    net.acc(grads, "fuse.w", fused_in.T @ dfused)
                    net.acc(grads, "fuse.b", dfused.sum(axis=0))
                    dfused_in = dfused @ fuse_w.T
                    dh[s - 1 : e - 1] += dfused_in[:, :d]
                    d_delta += dfused_in[:, d:].sum(axis=0)
            if "bow" in terms:
                content = targets[targets >= N_SPECIALS]
                z = delta @ bow_w + bow_b
                logp_b = net.log_softmax(z)
                bow_sum += float(-logp_b[content].sum())
                if want_grads and len(content):
                    counts = np.bincount(content, minlength=cfg.vocab_size).astype(h.dtype)
                    dz = len(content) * np.exp(logp_b) - counts
                    net.acc(grads, "bow.w", np.outer(delta, dz))
                    net.acc(grads, "bow.b", dz)
                    d_delta += bow_w @ dz
            if want_grads and not cfg.use_oracle_delta:
                d_flow_out[j] += d_delta

        breakdown = LossBreakdown.of(flow_sum, gen_sum, bow_sum)
        if not want_grads:
            return breakdown, None

        if np.any(d_flow_out):
            self._flow_backward(d_flow_out, flow_cache, grads)
        if np.any(dh):
            dx = net.stack_bwd(dh, lm_cache, p, "lm", cfg.n_layers, cfg.n_heads, grads)
            demb = np.zeros_like(p["tok_emb"])
            np.add.at(demb, ids, dx)
            net.acc(grads, "tok_emb", demb)
            dpos = np.zeros_like(p["pos_emb"])
            dpos[: len(ids_list)] = dx
            net.acc(grads, "pos_emb", dpos)
        # Every tensor participates in the update; fill missing ones with zeros.
        for name, tensor in p.items():
            if name not in grads:
                grads[name] = np.zeros_like(tensor)
        return breakdown, grads

    def kg_lm_loss(self, facts, context_turns: list[Utterance], response: Utterance | str) -> float:
        """Plain LM objective for knowledge-grounded response generation:
        negative log-likelihood summed over the response tokens and the closing
        <eos>, with the loss masked everywhere else.

        Layout: [<fact> f ...]* <sep> context <bos> response <eos>.
        """
        resp_text = response.text if isinstance(response, Utterance) else response
        resp = tokenize(resp_text, self.vocab)
        if not resp:
            raise ValueError("response must tokenize to at least one token")
        ids: list[int] = []
        for fact in facts:
            ids.append(FACT_ID)
            ids.extend(tokenize(fact, self.vocab))
        if facts:
            ids.append(SEP_ID)
        if context_turns:
            ctx_ids, _ = encode_turns(self.vocab, context_turns)
            ids.extend(ctx_ids)
        bos_pos = len(ids)
        ids.append(BOS_ID)
        ids.extend(resp)
        ids.append(EOS_ID)
        self._check_len(ids)
        h, _ = self._hiddens(ids)
        logits = h @ self.params["tok_emb"].T
        logp = net.log_softmax(logits)
        targets = np.asarray(resp + [EOS_ID])
        rows = np.arange(bos_pos, bos_pos + len(targets))
        return float(-logp[rows, targets].sum())

    def mean_token_logprob(self, context_turns: list[Utterance], cand_tokens: list[int],
                           facts=()) -> float:
        """Mean per-token log-probability of a candidate reply continuing the
        context under the plain LM head."""
        if not cand_tokens:
            raise ValueError("candidate must have at least one token")
        ids, _ = encode_turns(self.vocab, context_turns, facts)
        next_spk = "B" if context_turns[-1].speaker == "A" else "A"
        ids = self._fit_window(ids + [SEP_ID, _SPK[next_spk]] + list(cand_tokens))
        start = len(ids) - len(cand_tokens) - 1
        h, _ = self._hiddens(ids)
        logits = h @ self.params["tok_emb"].T
        logp = net.log_softmax(logits)
        rows = np.arange(start, start + len(cand_tokens))
        return float(logp[rows, np.asarray(cand_tokens)].mean())

    # ------------------------------------------------------------------
    # generation
    # ------------------------------------------------------------------

    def _fit_window(self, ids: list[int], reserve: int = 0) -> list[int]:
        """Drop oldest tokens (whole leading segments are fine to lose for
        generation) so ids plus reserve fits max_seq."""
        excess = len(ids) + reserve - self.cfg.max_seq
        if excess > 0:
            ids = ids[excess:]
        return ids

    def _prompt_ids(self, turns: list[Utterance], facts=()) -> list[int]:
        if turns:
            ids, _ = encode_turns(self.vocab, turns, facts)
            next_spk = "B" if turns[-1].speaker == "A" else "A"
            ids = ids + [SEP_ID, _SPK[next_spk]]
        else:
            ids = []
            for fact in facts:
                ids.append(FACT_ID)
                ids.extend(tokenize(fact, self.vocab))
            if facts:
                ids.append(SEP_ID)
            ids.append(SPK_A_ID)
        return ids

    def _head_probs(self, hidden: np.ndarray, delta: np.ndarray | None) -> np.ndarray:
        p = self.params
        if delta is None:
            logits = hidden @ p["tok_emb"].T
        else:
            fused = np.concatenate([hidden, delta]) @ p["fuse.w"] + p["fuse.b"]
            logits = fused @ p["tok_emb"].T
        return net.softmax(logits)

    def generate(
        self,
        turns: list[Utterance],
        facts=(),
        plan: PlanResult | None = None,
        top_p: float | None = None,
        max_len: int = 32,
        rng: np.random.Generator | None = None,
        log_steps: bool = False,
    ) -> Candidate:
        """Sample a reply restricted to the per-step nucleus (renormalized).
        With a plan, every step's hidden state is fused with the planning
        delta before the LM head. Stops at <eos>/<sep> or max_len."""
        p = self.cfg.top_p if top_p is None else top_p
        rng = rng if rng is not None else np.random.default_rng(0)
        delta = None if plan is None else np.asarray(plan.delta, dtype=self.cfg.np_dtype)
        prompt = self._fit_window(self._prompt_ids(turns, facts), reserve=max_len)
        decoder = _Decoder(self, prompt)
        out_ids: list[int] = []
        steps: list[StepLog] = []
        budget = min(max_len, self.cfg.max_seq - len(prompt))
        for _ in range(budget):
            probs = self._head_probs(decoder.h_last, delta)
            ids = nucleus(probs, p)
            mass = probs[ids]
            choice = int(rng.choice(ids, p=mass / mass.sum()))
            if log_steps:
                steps.append(StepLog(probs.copy(), ids.copy(), choice))
            if choice in _STOP_IDS:
                break
            out_ids.append(choice)
            decoder.push(choice)
        return Candidate(detokenize(out_ids, self.vocab), out_ids, steps if log_steps else None)

    def greedy_generate(self, turns: list[Utterance], facts=(),
                        plan: PlanResult | None = None, max_len: int = 32) -> Candidate:
        """Argmax decoding (lowest id on ties); reference for nucleus tests."""
        delta = None if plan is None else np.asarray(plan.delta, dtype=self.cfg.np_dtype)
        prompt = self._fit_window(self._prompt_ids(turns, facts), reserve=max_len)
        decoder = _Decoder(self, prompt)
        out_ids: list[int] = []
        budget = min(max_len, self.cfg.max_seq - len(prompt))
        for _ in range(budget):
            probs = self._head_probs(decoder.h_last, delta)
            choice = int(np.argmax(probs))
            if choice in _STOP_IDS:
                break
            out_ids.append(choice)
            decoder.push(choice)
        return Candidate(detokenize(out_ids, self.vocab), out_ids, None)


class _Decoder:
    """Incremental decoding state: per-layer cached keys/values plus the
    current last hidden state. The prompt is processed in one batched pass."""

    def __init__(self, model: DialogueModel, prompt_ids: list[int]):
        self.model = model
        cfg, p = model.cfg, model.params
        self.n_heads = cfg.n_heads
        if not prompt_ids:
            raise ValueError("decoder needs a non-empty prompt")
        x = p["tok_emb"][prompt_ids] + p["pos_emb"][: len(prompt_ids)]
        self.keys: list[np.ndarray] = []
        self.values: list[np.ndarray] = []
        for i in range(cfg.n_layers):
            x, cache = net.block(x, p, f"lm.{i}", cfg.n_heads)
            _, _, kh, vh, _, _, _ = cache[1]
            self.keys.append(kh)     # (H, T, dh)
            self.values.append(vh)
        h, _ = net.layer_norm(x, p["lm.lnf.g"], p["lm.lnf.b"])
        self.h_last = h[-1]
        self.t = len(prompt_ids)

    def push(self, token_id: int) -> None:
        cfg, p = self.model.cfg, self.model.params
        h_heads = cfg.n_heads
        d = cfg.d_model
        dh = d // h_heads
        x = p["tok_emb"][token_id] + p["pos_emb"][self.t]
        for i in range(cfg.n_layers):
            pre = f"lm.{i}"
            a, _ = net.layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            q = (a @ p[f"{pre}.attn.wq"] + p[f"{pre}.attn.bq"]).reshape(h_heads, dh)
            k = (a @ p[f"{pre}.attn.wk"] + p[f"{pre}.attn.bk"]).reshape(h_heads, 1, dh)
            v = (a @ p[f"{pre}.attn.wv"] + p[f"{pre}.attn.bv"]).reshape(h_heads, 1, dh)
            self.keys[i] = np.concatenate([self.keys[i], k], axis=1)
            self.values[i] = np.concatenate([self.values[i], v], axis=1)
            scores = np.einsum("hd,htd->ht", q, self.keys[i]) / np.sqrt(dh)
            att = net.softmax(scores, axis=-1)
            o = np.einsum("ht,htd->hd", att, self.values[i]).reshape(d)
            x = x + (o @ p[f"{pre}.attn.wo"] + p[f"{pre}.attn.bo"])
            m, _ = net.layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            hidden, _ = net.gelu(m @ p[f"{pre}.mlp.w1"] + p[f"{pre}.mlp.b1"])
            x = x + (hidden @ p[f"{pre}.mlp.w2"] + p[f"{pre}.mlp.b2"])
        h, _ = net.layer_norm(x, p["lm.lnf.g"], p["lm.lnf.b"])
        self.h_last = h
        self.t += 1
