"""Interactive chat service: sessions, candidate generation, the scoring
cascade, post-processing, and crash recovery via an append-only event log.

HTTP JSON API:

    POST /api/sessions                   -> 201 {"session_id": str}
    POST /api/sessions/{id}/messages     -> 200 {"reply": str, "trace": {...}}
         body {"text": str}
    GET  /api/sessions/{id}              -> {"turns": [{"speaker", "text"}]}
    GET  /api/health                     -> {"status": "ok", "model_loaded": bool}
    GET  /ui, /ui/*                      -> static chat client (if configured)

Errors are {"error": str} with a 400/404/500-class status.
"""
from __future__ import annotations

import hashlib
import json
import logging
import mimetypes
import os
import threading
import uuid
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .corpus import Utterance, build_vocab, gen_synth_corpus, split_text
from .metrics import EmbeddingTable
from .model import DialogueModel, ModelConfig, load_checkpoint
from .postprocess import CasingLexicon, finalize_text
from .scoring import (
    CascadeConfig,
    load_exclusive_predicates,
    load_fallbacks,
    load_lexicon,
    select_response,
)

logger = logging.getLogger("dialokit.service")

USER, BOT = "user", "bot"


class UnknownSessionError(KeyError):
    pass


class CorruptLogError(ValueError):
    pass


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8750
    checkpoint: str | None = None
    log_path: str = "chat_sessions.jsonl"
    n_candidates: int = 8
    top_p: float = 0.9
    max_len: int = 24
    seed: int = 0
    shortlist_k: int = 10
    abusive_lexicon: str | None = None
    fallbacks: str | None = None
    casing_lexicon: str | None = None
    exclusive_predicates: str | None = None
    ui_dir: str | None = None

    @classmethod
    def from_sources(cls, file_path: str | None = None, **overrides) -> "ServiceConfig":
        """defaults < config file < explicit overrides (None means unset)."""
        values: dict = {}
        if file_path:
            values.update(parse_config_file(file_path))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


_INT_KEYS = {"port", "n_candidates", "max_len", "seed", "shortlist_k"}
_FLOAT_KEYS = {"top_p"}


def parse_config_file(path: str | Path) -> dict:
    """Line-oriented key=value file; # starts a comment."""
    known = {f.name for f in fields(ServiceConfig)}
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {i}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}: line {i}: unknown key {key!r}")
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            else:
                out[key] = value
    return out


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class Session:
    id: str
    seq: int
    turns: list[dict] = field(default_factory=list)
    created: str = ""
    updated: str = ""
    last_trace: dict | None = None


class SessionStore:
    """In-memory sessions backed by an append-only JSONL event log.

    Events: session_created / turn_added / trace. Replaying the log rebuilds
    the exact pre-crash state; a torn trailing line is truncated with a
    warning, while corruption followed by valid lines raises CorruptLogError.
    """

    def __init__(self, log_path: str | Path | None = None):
        self.sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._store_lock = threading.Lock()
        self._seq = 0
        self._log_path = Path(log_path) if log_path else None
        self._log_fh = None
        if self._log_path is not None:
            if self._log_path.exists():
                self._replay()
            self._log_fh = open(self._log_path, "a", encoding="utf-8", newline="\n")

    # -- persistence --------------------------------------------------

    def _replay(self) -> None:
        good_bytes = 0
        with open(self._log_path, "rb") as fh:
            raw = fh.read()
        lines = raw.split(b"\n")
        # a well-formed log ends with a newline, so the final split item is empty
        complete = lines[:-1]
        trailing = lines[-1]
        for i, line in enumerate(complete, start=1):
            if not line.strip():
                good_bytes += len(line) + 1
                continue
            try:
                event = json.loads(line.decode("utf-8"))
                self._apply(event)
            except (ValueError, KeyError) as e:
                if i == len(complete) and not trailing:
                    logger.warning("truncating torn final log line %d: %s", i, e)
                    os.truncate(self._log_path, good_bytes)
                    return
                raise CorruptLogError(f"{self._log_path}: line {i}: {e}") from e
            good_bytes += len(line) + 1
        if trailing.strip():
            logger.warning("truncating unterminated trailing log data")
            os.truncate(self._log_path, good_bytes)

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "session_created":
            session = Session(
                event["session_id"], event["seq"], [], event["ts"], event["ts"]
            )
            self.sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
            self._seq = max(self._seq, session.seq)
        elif kind == "turn_added":
            session = self.sessions[event["session_id"]]
            session.turns.append({"speaker": event["speaker"], "text": event["text"]})
            session.updated = event["ts"]
        elif kind == "trace":
            self.sessions[event["session_id"]].last_trace = event["trace"]
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def _append(self, event: dict) -> None:
        if self._log_fh is None:
            return
        self._log_fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def flush(self) -> None:
        if self._log_fh is not None:
            self._log_fh.flush()
            os.fsync(self._log_fh.fileno())

    def close(self) -> None:
        if self._log_fh is not None:
            self.flush()
            self._log_fh.close()
            self._log_fh = None

    # -- session operations -------------------------------------------

    def create_session(self) -> Session:
        with self._store_lock:
            self._seq += 1
            session = Session(str(uuid.uuid4()), self._seq, [], _now(), _now())
            self.sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
            self._append(
                {"event": "session_created", "session_id": session.id,
                 "seq": session.seq, "ts": session.created}
            )
            self.flush()
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(session_id) from None

    def lock(self, session_id: str) -> threading.Lock:
        return self._locks[session_id]

    def add_turn(self, session_id: str, speaker: str, text: str) -> None:
        session = self.get(session_id)
        ts = _now()
        session.turns.append({"speaker": speaker, "text": text})
        session.updated = ts
        with self._store_lock:
            self._append({"event": "turn_added", "session_id": session_id,
                          "speaker": speaker, "text": text, "ts": ts})

    def add_trace(self, session_id: str, trace: dict) -> None:
        self.get(session_id).last_trace = trace
        with self._store_lock:
            self._append({"event": "trace", "session_id": session_id, "trace": trace})


def _merge_adjacent(turns: list[dict]) -> list[tuple[str, str]]:
    """Collapse consecutive same-speaker turns (possible after recovering a log
    whose last exchange was cut short) so the model context alternates."""
    merged: list[tuple[str, str]] = []
    for turn in turns:
        if merged and merged[-1][0] == turn["speaker"]:
            merged[-1] = (turn["speaker"], merged[-1][1] + " " + turn["text"])
        else:
            merged.append((turn["speaker"], turn["text"]))
    return merged


class ChatPipeline:
    """Candidate generation + scoring cascade + post-processing, independent of
    the HTTP layer so the terminal client can reuse it in-process."""

    def __init__(
        self,
        model: DialogueModel,
        cascade: CascadeConfig | None = None,
        casing: CasingLexicon | None = None,
        embeddings: EmbeddingTable | None = None,
        n_candidates: int = 8,
        top_p: float = 0.9,
        max_len: int = 24,
        seed: int = 0,
    ):
        self.model = model
        self.cascade = cascade or CascadeConfig()
        self.casing = casing if casing is not None else CasingLexicon()
        self.embeddings = embeddings or EmbeddingTable.hash_seeded()
        self.n_candidates = n_candidates
        self.top_p = top_p
        self.max_len = max_len
        self.seed = seed

    def _message_seed(self, session_seq: int, turn_count: int) -> int:
        digest = hashlib.sha256(
            f"{self.seed}:{session_seq}:{turn_count}".encode()
        ).digest()
        return int.from_bytes(digest[:8], "little")

    def _context(self, turns: list[dict]) -> list[Utterance]:
        speaker_map = {USER: "A", BOT: "B"}
        return [
            Utterance(speaker_map[spk], text)
            for spk, text in _merge_adjacent(turns)
        ]

    def reply(self, turns: list[dict], session_seq: int) -> tuple[str, dict]:
        """Generate candidates (half with the planning delta, half without),
        run the cascade, post-process, and return (reply, trace dict)."""
        context = self._context(turns)
        window = context[-(self.model.cfg.max_utterances) :]
        msg_seed = self._message_seed(session_seq, len(turns))
        plan = None
        try:
            reprs = self.model.prefix_representations(window)
            plan = self.model.plan_next(list(reprs))
        except ValueError:
            logger.warning("planning skipped for overlong context")
        children = np.random.SeedSequence(msg_seed).spawn(self.n_candidates)
        candidates = []
        planned_flags = []
        for i in range(self.n_candidates):
            use_plan = plan is not None and i % 2 == 0
            cand = self.model.generate(
                window,
                plan=plan if use_plan else None,
                top_p=self.top_p,
                max_len=self.max_len,
                rng=np.random.default_rng(children[i]),
            )
            candidates.append(cand.text)
            planned_flags.append(use_plan)
        winner, trace = select_response(
            window, candidates, self.cascade, self.model, self.embeddings
        )
        reply = finalize_text(winner.text, self.casing)
        trace_dict = {
            "reply": reply,
            "selected_index": trace.selected_index,
            "fallback": trace.fallback,
            "stage_counts": trace.stage_counts,
            "seed": msg_seed,
            "candidates": [
                {
                    "text": c.text,
                    "planned": planned_flags[i],
                    "scores": {k: v for k, v in c.scores.items()},
                    "abusive": c.abusive,
                    "conflict": c.conflict,
                    "dropped_at": c.dropped_at,
                }
                for i, c in enumerate(trace.candidates)
            ],
        }
        return reply, trace_dict


class ChatService:
    """Framework-free request handling, unit-testable without sockets."""

    def __init__(self, pipeline: ChatPipeline, store: SessionStore,
                 model_loaded: bool = True, ui_dir: str | None = None):
        self.pipeline = pipeline
        self.store = store
        self.model_loaded = model_loaded
        self.ui_dir = Path(ui_dir) if ui_dir else None

    def handle(self, method: str, path: str, body: bytes) -> tuple[int, dict]:
        try:
            return self._route(method, path, body)
        except UnknownSessionError as e:
            return 404, {"error": f"unknown session {e.args[0]}"}
        except ValueError as e:
            return 400, {"error": str(e)}
        except Exception:
            logger.exception("request failed: %s %s", method, path)
            return 500, {"error": "internal error"}

    def _route(self, method: str, path: str, body: bytes) -> tuple[int, dict]:
        parts = [p for p in path.split("?")[0].split("/") if p]
        if method == "GET" and parts == ["api", "health"]:
            return 200, {"status": "ok", "model_loaded": self.model_loaded}
        if method == "POST" and parts == ["api", "sessions"]:
            session = self.store.create_session()
            return 201, {"session_id": session.id}
        if len(parts) == 3 and parts[:2] == ["api", "sessions"] and method == "GET":
            session = self.store.get(parts[2])
            return 200, {"turns": list(session.turns)}
        if (
            len(parts) == 4
            and parts[:2] == ["api", "sessions"]
            and parts[3] == "messages"
            and method == "POST"
        ):
            return self._post_message(parts[2], body)
        return 404, {"error": f"no route for {method} {path}"}

    def _post_message(self, session_id: str, body: bytes) -> tuple[int, dict]:
        session = self.store.get(session_id)
        try:
            payload = json.loads(body.decode("utf-8")) if body else {}
        except json.JSONDecodeError:
            raise ValueError("body must be JSON")
        text = payload.get("text", "")
        if not isinstance(text, str) or not text.strip():
            raise ValueError("text must be a non-empty string")
        with self.store.lock(session_id):
            self.store.add_turn(session_id, USER, text)
            reply, trace = self.pipeline.reply(session.turns, session.seq)
            self.store.add_turn(session_id, BOT, reply)
            self.store.add_trace(session_id, trace)
            self.store.flush()
        return 200, {"reply": reply, "trace": trace}

    # -- static UI -----------------------------------------------------

    def static_file(self, path: str) -> tuple[int, bytes, str] | None:
        if self.ui_dir is None:
            return None
        rel = path[len("/ui") :].lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        try:
            target.relative_to(self.ui_dir.resolve())
        except ValueError:
            return 404, b"not found", "text/plain"
        if not target.is_file():
            return 404, b"not found", "text/plain"
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        return 200, target.read_bytes(), ctype


class _Handler(BaseHTTPRequestHandler):
    service: ChatService  # injected by serve()

    def _dispatch(self, method: str) -> None:
        if self.path == "/ui" or self.path.startswith("/ui/"):
            result = self.service.static_file(self.path)
            if result is None:
                self._send_json(404, {"error": "no UI bundle configured"})
                return
            status, data, ctype = result
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        status, obj = self.service.handle(method, self.path, body)
        self._send_json(status, obj)

    def _send_json(self, status: int, obj: dict) -> None:
        data = json.dumps(obj, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        self._dispatch("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._dispatch("POST")

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("%s %s", self.address_string(), fmt % args)


def build_model(cfg: ServiceConfig) -> tuple[DialogueModel, bool]:
    """Load the configured checkpoint, or fall back to a deterministic
    untrained model over the synthetic vocabulary (replies will be noise, but
    every pipeline stage still runs)."""
    if cfg.checkpoint:
        model_cfg, vocab, params = load_checkpoint(cfg.checkpoint)
        return DialogueModel(model_cfg, vocab, params), True
    vocab = build_vocab(gen_synth_corpus(0, 50), cap=256)
    model_cfg = ModelConfig(vocab_size=len(vocab), seed=cfg.seed)
    return DialogueModel(model_cfg, vocab), False


def build_cascade(cfg: ServiceConfig) -> CascadeConfig:
    kwargs: dict = {"shortlist_k": cfg.shortlist_k}
    if cfg.abusive_lexicon:
        kwargs["abusive_lexicon"] = load_lexicon(cfg.abusive_lexicon)
    if cfg.fallbacks:
        kwargs["fallbacks"] = load_fallbacks(cfg.fallbacks)
    if cfg.exclusive_predicates:
        kwargs["extra_exclusive_predicates"] = load_exclusive_predicates(
            cfg.exclusive_predicates
        )
    return CascadeConfig(**kwargs)


def build_service(cfg: ServiceConfig) -> ChatService:
    model, loaded = build_model(cfg)
    casing = CasingLexicon.load(cfg.casing_lexicon) if cfg.casing_lexicon else CasingLexicon()
    pipeline = ChatPipeline(
        model,
        cascade=build_cascade(cfg),
        casing=casing,
        n_candidates=cfg.n_candidates,
        top_p=cfg.top_p,
        max_len=cfg.max_len,
        seed=cfg.seed,
    )
    store = SessionStore(cfg.log_path)
    return ChatService(pipeline, store, model_loaded=loaded, ui_dir=cfg.ui_dir)


def serve(cfg: ServiceConfig) -> None:
    service = build_service(cfg)
    httpd = ThreadingHTTPServer((cfg.host, cfg.port), _Handler)
    httpd.RequestHandlerClass.service = service  # type: ignore[attr-defined]
    logger.info("listening on http://%s:%d (model_loaded=%s)",
                cfg.host, httpd.server_address[1], service.model_loaded)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.store.close()
        httpd.server_close()
