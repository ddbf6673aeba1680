"""HTTP service for human-in-the-loop sessions with a trained agent.

A human plays the user role: the agent asks questions or recommends, the
human answers over JSON, and the evolving preference distribution is returned
alongside every action so a client can chart it turn by turn.

Endpoints:
    GET  /healthz                  liveness
    GET  /checkpoints              available agent checkpoint ids
    POST /sessions                 {checkpoint, p0[, user][, seed]} -> first action
    POST /sessions/{id}/answer     {clicked:[...]} | {accepted: id} | {reject:true}
    GET  /sessions/{id}            transcript + per-turn snapshots

All entity ids travel as strings; scores are JSON numbers. Sessions are held
in memory, serialized per session, and expire after 30 idle minutes; an
optional append-only journal allows rebuilding them after a restart.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .catalog import Catalog
from .embeddings import EmbeddingTable
from .policy import Ask, DqnAgent, Recommend, infer_system_action
from .simulator import (SessionError, SessionState, apply_click_answer,
                        apply_recommendation_answer, live_session)

SESSION_TTL_SECONDS = 30 * 60
SNAPSHOT_DEPTH = 10


class CreateSessionRequest(BaseModel):
    checkpoint: str
    p0: str
    user: str = "0"
    seed: int = 0


class AnswerRequest(BaseModel):
    clicked: Optional[list[str]] = None
    accepted: Optional[str] = None
    reject: Optional[bool] = None


@dataclass
class LiveSession:
    session_id: str
    checkpoint: str
    state: SessionState
    pending: Optional[Ask | Recommend] = None
    snapshots: list[dict] = field(default_factory=list)
    last_active: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_ctx: object = None  # the agent's most recent TurnContext


def _action_json(action: Ask | Recommend) -> dict:
    if isinstance(action, Ask):
        return {"kind": "ask", "type": str(action.type_id),
                "attrs": [str(p) for p in action.attrs]}
    return {"kind": "recommend", "items": [str(v) for v in action.items]}


def _parse_id(raw: str, what: str) -> int:
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise HTTPException(status_code=400, detail=f"{what} must be an integer id string")
    return value


class SessionService:
    """In-memory session store plus lazily loaded agent checkpoints."""

    def __init__(self, catalog: Catalog, table: EmbeddingTable,
                 checkpoint_dir, journal_path=None,
                 clock: Callable[[], float] = time.time,
                 ttl_seconds: float = SESSION_TTL_SECONDS):
        self.catalog = catalog
        self.table = table
        self.checkpoint_dir = Path(checkpoint_dir)
        self.journal_path = Path(journal_path) if journal_path else None
        self.clock = clock
        self.ttl = ttl_seconds
        self.sessions: dict[str, LiveSession] = {}
        self.agents: dict[str, DqnAgent] = {}
        self._store_lock = threading.Lock()

    # ------------------------------------------------------------- checkpoints

    def list_checkpoints(self) -> list[str]:
        if not self.checkpoint_dir.is_dir():
            return []
        return sorted(p.stem for p in self.checkpoint_dir.glob("*.pt"))

    def agent_for(self, checkpoint: str) -> DqnAgent:
        if checkpoint not in self.agents:
            path = self.checkpoint_dir / f"{checkpoint}.pt"
            if not path.is_file():
                raise HTTPException(status_code=404, detail=f"unknown checkpoint {checkpoint!r}")
            self.agents[checkpoint] = DqnAgent.load(path, self.catalog, self.table)
        return self.agents[checkpoint]

    # ----------------------------------------------------------------- journal

    def _journal(self, event: dict) -> None:
        if self.journal_path is None:
            return
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def recover(self) -> int:
        """Rebuild sessions by replaying the journal; returns sessions restored."""
        if self.journal_path is None or not self.journal_path.is_file():
            return 0
        with open(self.journal_path, encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        restored = set()
        for event in events:
            sid = event["session_id"]
            if event["event"] == "create":
                self._create(sid, event["checkpoint"], event["p0"],
                             event["user"], event["seed"], journal=False)
                restored.add(sid)
            elif event["event"] == "answer" and sid in self.sessions:
                self._answer(self.sessions[sid], event["answer"], journal=False)
        return len(restored)

    # ---------------------------------------------------------------- stepping

    def _snapshot(self, live: LiveSession, full: bool = False) -> dict:
        ctx = live.last_ctx  # set by _agent_step
        n_items = len(ctx.item_dist.scores) if full else SNAPSHOT_DEPTH
        n_attrs = len(ctx.attr_dist.scores) if full else SNAPSHOT_DEPTH
        return {
            "turn": live.state.turn,
            "items": [{"id": str(i), "score": s} for i, s in ctx.item_dist.top(n_items)],
            "attrs": [{"id": str(p), "score": s} for p, s in ctx.attr_dist.top(n_attrs)],
        }

    def _agent_step(self, live: LiveSession) -> None:
        agent = self.agent_for(live.checkpoint)
        ctx = agent.perceive(live.state)
        live.last_ctx = ctx
        live.pending = infer_system_action(ctx.actions, agent.cfg.k_ask)
        live.snapshots.append(self._snapshot(live))

    def _create(self, sid: str, checkpoint: str, p0: str, user: str, seed: int,
                journal: bool = True) -> LiveSession:
        agent = self.agent_for(checkpoint)  # 404 before touching the catalog
        p0_id = _parse_id(p0, "p0")
        user_id = _parse_id(user, "user")
        try:
            state = live_session(self.catalog, p0_id, user=user_id, seed=seed)
        except SessionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        live = LiveSession(session_id=sid, checkpoint=checkpoint, state=state,
                           last_active=self.clock())
        self._agent_step(live)
        with self._store_lock:
            self.sessions[sid] = live
        if journal:
            self._journal({"event": "create", "session_id": sid, "checkpoint": checkpoint,
                           "p0": p0, "user": user, "seed": seed})
        return live

    def _answer(self, live: LiveSession, answer: dict, journal: bool = True) -> None:
        state = live.state
        pending = live.pending
        if state.done or pending is None:
            raise HTTPException(status_code=409, detail="session is finished")
        clicked = answer.get("clicked")
        accepted = answer.get("accepted")
        reject = answer.get("reject")
        provided = sum(x is not None for x in (clicked, accepted, reject))
        if provided != 1:
            raise HTTPException(status_code=400,
                                detail="provide exactly one of clicked/accepted/reject")
        try:
            if clicked is not None:
                if not isinstance(pending, Ask):
                    raise HTTPException(status_code=400, detail="pending action is not a question")
                ids = [_parse_id(c, "clicked id") for c in clicked]
                apply_click_answer(state, pending.type_id, pending.attrs, ids)
            elif isinstance(pending, Recommend):
                accepted_id = _parse_id(accepted, "accepted") if accepted is not None else None
                apply_recommendation_answer(state, pending.items, accepted_id)
            else:
                raise HTTPException(status_code=400, detail="pending action is not a recommendation")
        except SessionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        live.pending = None
        if not state.done:
            self._agent_step(live)
        if journal:
            self._journal({"event": "answer", "session_id": live.session_id,
                           "answer": answer})

    # --------------------------------------------------------------- accessors

    def get_live(self, sid: str, write: bool = False) -> LiveSession:
        live = self.sessions.get(sid)
        if live is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        if write and self.clock() - live.last_active > self.ttl:
            raise HTTPException(status_code=410, detail="session expired")
        return live


def create_app(catalog: Catalog, table: EmbeddingTable, checkpoint_dir,
               journal_path=None, clock: Callable[[], float] = time.time,
               ttl_seconds: float = SESSION_TTL_SECONDS, recover: bool = False) -> FastAPI:
    service = SessionService(catalog, table, checkpoint_dir, journal_path,
                             clock, ttl_seconds)
    if recover:
        service.recover()
    app = FastAPI(title="convrec session service")
    app.state.service = service

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/checkpoints")
    def checkpoints():
        return {"checkpoints": service.list_checkpoints()}

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        sid = uuid.uuid4().hex
        live = service._create(sid, req.checkpoint, req.p0, req.user, req.seed)
        with live.lock:
            return {
                "session_id": sid,
                "action": _action_json(live.pending),
                "snapshot": live.snapshots[-1],
                "turn": live.state.turn,
                "done": False,
            }

    @app.post("/sessions/{sid}/answer")
    def answer(sid: str, req: AnswerRequest):
        live = service.get_live(sid, write=True)
        with live.lock:
            live.last_active = service.clock()
            service._answer(live, req.model_dump(exclude_none=True))
            state = live.state
            body: dict = {
                "turn": state.turn,
                "done": state.done,
                "snapshot": live.snapshots[-1],
            }
            if state.done:
                body["outcome"] = state.outcome
            else:
                body["action"] = _action_json(live.pending)
            return body

    @app.get("/sessions/{sid}")
    def get_session(sid: str, full: bool = False):
        live = service.get_live(sid)
        with live.lock:
            body = {
                "session_id": sid,
                "checkpoint": live.checkpoint,
                "turn": live.state.turn,
                "done": live.state.done,
                "outcome": live.state.outcome,
                "pending_action": _action_json(live.pending) if live.pending else None,
                "transcript": live.state.transcript(),
                "snapshots": live.snapshots,
            }
            if full and live.last_ctx is not None:
                body["full_snapshot"] = service._snapshot(live, full=True)
            return body

    return app
