"""Live negotiation service: session lifecycle, wire protocol, persistence.

Wire messages are JSON objects:
  {type, session_id, seq, text?, price?, agreed?, detail?}
with type one of utterance | offer | accept | reject | quit | outcome | error.
The server assigns a strictly increasing seq to every message it records.
Sessions append to a jsonl log; serving never rewrites past records.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .data import tokenize_with_price_abstraction
from .policy import Action
from .session import IllegalActionError, NegotiationSession, SessionError, \
    WrongActorError, agent_turn, other

MESSAGE_TYPES = ("utterance", "offer", "accept", "reject", "quit",
                 "outcome", "error")

# phase -> message types a human participant may send; mirrored by chat
# clients (see protocol/phase_actions.json)
HUMAN_LEGAL_MESSAGES = {
    "open": ["utterance", "offer", "quit"],
    "offer_pending_own": ["quit"],
    "offer_pending_opponent": ["accept", "reject", "quit"],
    "terminal": [],
}


def human_phase_key(session: NegotiationSession, human_role: str) -> str:
    if session.terminal:
        return "terminal"
    if session.phase == "offer_pending":
        return ("offer_pending_own" if session.pending_by == human_role
                else "offer_pending_opponent")
    return "open"


class RatingError(ValueError):
    pass


@dataclass
class Rating:
    human_likeness: int
    language: int
    pricing: int

    def validate(self):
        for name in ("human_likeness", "language", "pricing"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 1 <= v <= 5:
                raise RatingError(f"{name} must be an integer in 1..5, got {v!r}")


@dataclass
class LiveSession:
    id: str
    session: NegotiationSession
    human_role: str
    seq: int = 0
    rating: Rating | None = None
    last_activity: float = field(default_factory=time.monotonic)

    @property
    def agent_role(self) -> str:
        return other(self.human_role)


class SessionManager:
    """Multiplexes live sessions; per-session handling is serialized."""

    def __init__(self, model, scenarios_by_id: dict, log_path=None,
                 max_turns: int | None = None, idle_timeout: float | None = None):
        self.model = model
        self.scenarios_by_id = scenarios_by_id
        self.log_path = log_path
        self.max_turns = max_turns or model.config.max_turns
        self.idle_timeout = idle_timeout
        self._sessions: dict[str, LiveSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global_lock = threading.Lock()

    # -- persistence ----------------------------------------------------

    def _append_log(self, record: dict):
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")

    def _emit(self, live: LiveSession, message: dict, direction: str) -> dict:
        live.seq += 1
        message = {**message, "session_id": live.id, "seq": live.seq}
        self._append_log({"kind": "message", "direction": direction,
                          "session_id": live.id, "message": message})
        return message

    # -- lifecycle -------------------------------------------------------

    def create_session(self, scenario_id: str, human_role: str,
                       seed: int | None = None) -> tuple[str, list[dict]]:
        if human_role not in ("seller", "buyer"):
            raise ValueError(f"unknown role {human_role!r}")
        scenario = self.scenarios_by_id.get(scenario_id)
        if scenario is None:
            raise KeyError(f"unknown scenario {scenario_id!r}")
        session = NegotiationSession(scenario, first_mover="buyer",
                                     max_turns=self.max_turns)
        session_id = uuid.uuid4().hex if seed is None else f"s{seed:08d}"
        live = LiveSession(id=session_id, session=session,
                           human_role=human_role)
        with self._global_lock:
            self._sessions[session_id] = live
            self._locks[session_id] = threading.Lock()
        self._append_log({"kind": "create", "session_id": session_id,
                          "scenario_id": scenario_id, "human_role": human_role})
        initial = []
        if session.next_actor == live.agent_role:
            initial = self._run_agent(live)
        return session_id, initial

    def _live(self, session_id: str) -> LiveSession:
        live = self._sessions.get(session_id)
        if live is None:
            raise KeyError(f"unknown session {session_id!r}")
        return live

    def _run_agent(self, live: LiveSession) -> list[dict]:
        session = live.session
        out = []
        decision, price_values = agent_turn(session, self.model, mode="greedy")
        session.step(session.next_actor, decision.action, decision.tokens,
                     price_values=price_values,
                     offer_price=decision.offer_price,
                     new_price=decision.new_price, ratio=decision.ratio)
        if decision.action in (Action.ACCEPT, Action.REJECT, Action.QUIT):
            out.append(self._emit(live, {"type": decision.action.wire_name,
                                         "text": decision.utterance}, "out"))
        else:
            msg = {"type": "utterance", "text": decision.utterance}
            out.append(self._emit(live, msg, "out"))
            if decision.action == Action.OFFER:
                out.append(self._emit(live, {"type": "offer",
                                             "price": decision.offer_price},
                                      "out"))
        if session.terminal:
            out.append(self._outcome_message(live))
        return out

    def _outcome_message(self, live: LiveSession) -> dict:
        outcome = live.session.outcome()
        msg = {"type": "outcome", "agreed": outcome.agreed,
               "ended_by": outcome.ended_by}
        if outcome.price is not None:
            msg["price"] = outcome.price
        return self._emit(live, msg, "out")

    # -- message handling -------------------------------------------------

    def handle_message(self, session_id: str, message: dict) -> list[dict]:
        live = self._live(session_id)
        with self._locks[session_id]:
            return self._handle_locked(live, message)

    def _handle_locked(self, live: LiveSession, message: dict) -> list[dict]:
        live.last_activity = time.monotonic()
        session = live.session
        mtype = message.get("type")
        if mtype not in ("utterance", "offer", "accept", "reject", "quit"):
            return [self._emit(live, {"type": "error",
                                      "detail": f"unsupported type {mtype!r}"},
                               "out")]
        self._emit(live, {**message, "type": mtype}, "in")
        scenario = session.scenario
        role = live.human_role
        try:
            if mtype == "utterance":
                text = message.get("text") or ""
                if not text.strip():
                    raise SessionError("empty utterance")
                tokens, prices = tokenize_with_price_abstraction(
                    text, scenario.listing_price,
                    max_len=self.model.config.max_utterance_len)
                action = Action.NEGOTIATE
                if prices:
                    current = session.proposals[role]
                    toward = (prices[-1] < current if role == "seller"
                              else prices[-1] > current)
                    action = Action.CONCEDE if toward else Action.NEGOTIATE
                session.step(role, action, tokens, price_values=prices)
            elif mtype == "offer":
                price = message.get("price")
                if not isinstance(price, (int, float)) or price <= 0:
                    raise SessionError("offer requires a positive price")
                session.step(role, Action.OFFER, [], offer_price=float(price))
            else:
                session.step(role, Action.from_name(mtype), [])
        except (IllegalActionError, WrongActorError, SessionError) as exc:
            return [self._emit(live, {"type": "error", "detail": str(exc)},
                               "out")]
        out = []
        if session.terminal:
            out.append(self._outcome_message(live))
        elif session.next_actor == live.agent_role:
            out.extend(self._run_agent(live))
        return out

    # -- ratings ----------------------------------------------------------

    def submit_rating(self, session_id: str, rating: Rating) -> dict:
        live = self._live(session_id)
        with self._locks[session_id]:
            if not live.session.terminal:
                raise RatingError("session is still live")
            rating.validate()
            live.rating = rating  # last write wins
            self._append_log({"kind": "rating", "session_id": session_id,
                              "rating": {"human_likeness": rating.human_likeness,
                                         "language": rating.language,
                                         "pricing": rating.pricing}})
        return {"ok": True}

    # -- housekeeping ------------------------------------------------------

    def expire_idle(self, now: float | None = None) -> list[str]:
        """Record a Quit by the idle side for timed-out live sessions."""
        if self.idle_timeout is None:
            return []
        now = time.monotonic() if now is None else now
        expired = []
        for live in list(self._sessions.values()):
            session = live.session
            if session.terminal:
                continue
            if now - live.last_activity > self.idle_timeout:
                with self._locks[live.id]:
                    if not session.terminal:
                        session.step(session.next_actor, Action.QUIT, [])
                        self._outcome_message(live)
                        expired.append(live.id)
        return expired

    def transcript(self, session_id: str):
        return self._live(session_id).session.transcript

    def phase_key(self, session_id: str) -> str:
        live = self._live(session_id)
        return human_phase_key(live.session, live.human_role)


# ---------------------------------------------------------------------------
# HTTP/WebSocket surface


def create_app(manager: SessionManager):
    """FastAPI app exposing session lifecycle over HTTP plus a message
    stream over WebSocket."""
    app = FastAPI(title="negotiation gateway")
    app.state.manager = manager

    @app.get("/scenarios/{scenario_id}")
    def get_scenario(scenario_id: str):
        scenario = manager.scenarios_by_id.get(scenario_id)
        if scenario is None:
            raise HTTPException(status_code=404, detail="unknown scenario")
        return {"id": scenario.id, "category": scenario.category,
                "title": " ".join(scenario.title),
                "description": " ".join(scenario.description),
                "listing_price": scenario.listing_price}

    @app.post("/sessions", status_code=201)
    def post_session(body: dict):
        try:
            session_id, messages = manager.create_session(
                body.get("scenario_id", ""), body.get("human_role", ""))
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"session_id": session_id, "messages": messages,
                "phase": manager.phase_key(session_id),
                "legal": HUMAN_LEGAL_MESSAGES[manager.phase_key(session_id)]}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: dict):
        try:
            messages = manager.handle_message(session_id, body)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        phase = manager.phase_key(session_id)
        return {"messages": messages, "phase": phase,
                "legal": HUMAN_LEGAL_MESSAGES[phase]}

    @app.post("/sessions/{session_id}/rating")
    def post_rating(session_id: str, body: dict):
        try:
            rating = Rating(human_likeness=body.get("human_likeness"),
                            language=body.get("language"),
                            pricing=body.get("pricing"))
            return manager.submit_rating(session_id, rating)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except RatingError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        try:
            manager._live(session_id)
        except KeyError:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        try:
            while True:
                message = await websocket.receive_json()
                for reply in manager.handle_message(session_id, message):
                    await websocket.send_json(reply)
        except WebSocketDisconnect:
            pass

    return app


# ---------------------------------------------------------------------------
# replay


def replay_log(log_path, scenarios_by_id, max_turns: int = 20) -> dict[str, dict]:
    """Re-run every persisted session's steps through a fresh state machine.

    Returns per-session {phase, agreed, price} for comparison against live
    outcomes. Agent and human messages are both replayed from the log, so a
    matching result certifies the log as a faithful protocol record.
    """
    sessions: dict[str, NegotiationSession] = {}
    roles: dict[str, str] = {}
    results: dict[str, dict] = {}
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            sid = rec["session_id"]
            if rec["kind"] == "create":
                scenario = scenarios_by_id[rec["scenario_id"]]
                sessions[sid] = NegotiationSession(scenario,
                                                   first_mover="buyer",
                                                   max_turns=max_turns)
                roles[sid] = rec["human_role"]
            elif rec["kind"] == "message":
                session = sessions[sid]
                msg = rec["message"]
                mtype = msg["type"]
                if mtype in ("outcome", "error"):
                    continue
                actor = (roles[sid] if rec["direction"] == "in"
                         else other(roles[sid]))
                if session.terminal or actor != session.next_actor:
                    # offer events follow the same actor's utterance; apply
                    # only the message that carries the phase change
                    if mtype == "offer" and not session.terminal:
                        actor = other(session.next_actor)
                    else:
                        continue
                scenario = session.scenario
                try:
                    if mtype == "utterance":
                        text = msg.get("text") or ""
                        tokens, prices = tokenize_with_price_abstraction(
                            text, scenario.listing_price) if text else ([], [])
                        action = Action.NEGOTIATE
                        if prices:
                            current = session.proposals[actor]
                            toward = (prices[-1] < current if actor == "seller"
                                      else prices[-1] > current)
                            action = (Action.CONCEDE if toward
                                      else Action.NEGOTIATE)
                        session.step(actor, action, tokens,
                                     price_values=prices)
                    elif mtype == "offer":
                        session.step(actor, Action.OFFER, [],
                                     offer_price=float(msg["price"]))
                    elif mtype in ("accept", "reject", "quit"):
                        session.step(actor, Action.from_name(mtype), [])
                except SessionError:
                    # the live server rejected this message with an in-band
                    # error and did not advance the state machine; skip it
                    continue
    for sid, session in sessions.items():
        if session.terminal:
            outcome = session.outcome()
            results[sid] = {"phase": session.phase, "agreed": outcome.agreed,
                            "price": outcome.price}
        else:
            results[sid] = {"phase": session.phase, "agreed": False,
                            "price": None}
    return results
