"""Turn-based negotiation state machine, agent turns, self-play, reward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .data import Dialogue, Outcome, PRICE_TOKEN, TurnRecord, extract_intent
from .encoding import PriceFrame, assemble_state
from .policy import Action, RatioClass, adjust_price, \
    initial_price, legal_actions, masked_log_probs
from .textgen import apply_copy, build_attention_memory


class SessionError(RuntimeError):
    pass


class IllegalActionError(SessionError):
    pass


class WrongActorError(SessionError):
    pass


TERMINAL_PHASES = ("agreed", "rejected", "quit", "max_turns")


def other(role: str) -> str:
    return "buyer" if role == "seller" else "seller"


@dataclass
class NegotiationSession:
    scenario: object
    first_mover: str = "buyer"
    max_turns: int = 20
    phase: str = "open"
    pending_by: str | None = None
    pending_price: float | None = None
    proposals: dict = field(default_factory=dict)
    turn_count: int = 0
    transcript: list = field(default_factory=list)
    next_actor: str = ""

    def __post_init__(self):
        if self.max_turns < 2:
            raise ValueError("max_turns must be at least 2")
        self.proposals = {role: initial_price(role, self.scenario)
                          for role in ("seller", "buyer")}
        self.next_actor = self.first_mover

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES

    def legal_mask(self, actor: str) -> np.ndarray:
        return legal_actions(self.phase, self.pending_by, actor)

    def step(self, actor: str, action: Action, utterance_tokens: list[str],
             price_values: list[float] | None = None,
             offer_price: float | None = None,
             new_price: float | None = None,
             ratio: RatioClass | None = None):
        """Apply one turn; mutates phase, proposals, and the transcript."""
        if self.terminal:
            raise IllegalActionError(f"session already terminal ({self.phase})")
        if actor != self.next_actor:
            raise WrongActorError(f"it is {self.next_actor}'s turn, not {actor}'s")
        if not self.legal_mask(actor)[int(action)]:
            raise IllegalActionError(
                f"{action.wire_name} illegal in phase {self.phase}")

        price_values = price_values or []
        record = TurnRecord(speaker=actor, tokens=list(utterance_tokens),
                            price_values=list(price_values), action=action,
                            ratio_class=ratio)

        if action in (Action.NEGOTIATE, Action.CONCEDE):
            if new_price is not None:
                self._update_proposal(actor, new_price)
            elif price_values:
                self._update_proposal(actor, price_values[-1])
        elif action == Action.OFFER:
            price = offer_price if offer_price is not None else self.proposals[actor]
            self._update_proposal(actor, price)
            price = self.proposals[actor]
            self.phase = "offer_pending"
            self.pending_by = actor
            self.pending_price = price
            record.event_price = price
        elif action == Action.ACCEPT:
            self.phase = "agreed"
        elif action == Action.REJECT:
            self.phase = "rejected"
        elif action == Action.QUIT:
            self.phase = "quit"

        prev = self.transcript[-1] if self.transcript else None
        record.intent = extract_intent(record, prev, self.scenario)
        self.transcript.append(record)
        self.turn_count += 1
        if not self.terminal and self.turn_count >= self.max_turns:
            self.phase = "max_turns"
        self.next_actor = other(actor)

    def _update_proposal(self, actor: str, price: float):
        """Clamp so each side's proposal sequence stays monotone and never
        crosses the opponent's standing proposal."""
        current = self.proposals[actor]
        opponent = self.proposals[other(actor)]
        if actor == "seller":
            price = max(min(price, current), opponent)
        else:
            price = min(max(price, current), opponent)
        self.proposals[actor] = round(price, 2)

    def outcome(self) -> Outcome:
        if not self.terminal:
            raise SessionError("session not terminal")
        agreed = self.phase == "agreed"
        return Outcome(agreed=agreed,
                       price=self.pending_price if agreed else None,
                       turns=self.turn_count, ended_by=self.phase)

    def to_dialogue(self) -> Dialogue:
        return Dialogue(scenario_id=self.scenario.id,
                        turns=list(self.transcript), outcome=self.outcome())


@dataclass
class TurnDecision:
    action: Action
    ratio: RatioClass | None
    tokens: list[str]
    utterance: str
    new_price: float | None          # committed proposal change, if any
    offer_price: float | None
    action_log_prob: Tensor | None = None   # graph nodes for policy-gradient use
    ratio_log_prob: Tensor | None = None


def agent_turn(session: NegotiationSession, model, mode: str = "greedy",
               rng: np.random.Generator | None = None,
               keep_log_probs: bool = False) -> TurnDecision:
    """Encode, pick an action (and maybe a price), generate the utterance.

    Head inputs are detached from the encoder graph: the decision heads
    never backpropagate into the encoders.
    """
    if session.terminal:
        raise SessionError("cannot act on a terminal session")
    role = session.next_actor
    scenario = session.scenario
    estimate, _ = model.estimate(scenario)

    turn_vecs = model.turn_vectors(session.transcript)
    seed = model.history_seed(scenario)
    history = model.history_encoder.encode(turn_vecs, seed)
    frame = PriceFrame.for_role(role, scenario,
                                model.config.seller_bottom_frac)
    state = assemble_state(Tensor(history.data.copy()),
                           session.proposals[role],
                           session.proposals[other(role)],
                           estimate, frame)
    state_vec = state.vector()

    mask = session.legal_mask(role)
    action_lp = masked_log_probs(model.action_predictor.logits(state_vec), mask)
    action_idx = _pick(action_lp.data[0], mode, rng)
    action = Action(action_idx)

    ratio = None
    ratio_lp = None
    tentative = None
    if action == Action.CONCEDE:
        ratio_lp = model.price_adjuster.logits(state_vec, action).log_softmax()
        ratio = RatioClass(_pick(ratio_lp.data[0], mode, rng))
        tentative = adjust_price(role, session.proposals[role], ratio, scenario,
                                 opponent_last=session.proposals[other(role)])

    prev_tokens = session.transcript[-1].tokens if session.transcript else []
    memory = build_attention_memory(model.word_encoder, scenario.title,
                                    scenario.description, prev_tokens)
    init_state = model.history_encoder.final_state(turn_vecs, seed)
    tokens = model.decoder.decode(init_state, memory, role, action,
                                  mode="greedy")

    # a Concede only takes effect if the words actually carry a price;
    # a formal Offer puts the standing proposal on the table, so the offered
    # price is always one the agent has already communicated
    new_price = None
    offer_price = None
    if action == Action.OFFER:
        offer_price = session.proposals[role]
        render_price = offer_price
    elif action == Action.CONCEDE and PRICE_TOKEN in tokens:
        new_price = tentative
        render_price = tentative
    else:
        render_price = session.proposals[role]
    utterance = apply_copy(tokens, render_price)

    sentinel_count = tokens.count(PRICE_TOKEN)
    return TurnDecision(
        action=action, ratio=ratio, tokens=tokens, utterance=utterance,
        new_price=new_price, offer_price=offer_price,
        action_log_prob=(action_lp[:, action_idx:action_idx + 1]
                         if keep_log_probs else None),
        ratio_log_prob=(ratio_lp[:, int(ratio):int(ratio) + 1]
                        if keep_log_probs and ratio is not None else None),
    ), [render_price] * sentinel_count


def _pick(log_probs: np.ndarray, mode: str,
          rng: np.random.Generator | None) -> int:
    if mode == "greedy":
        return int(np.argmax(log_probs))
    if mode == "sample":
        probs = np.exp(log_probs)
        probs /= probs.sum()
        return int(rng.choice(len(probs), p=probs))
    raise ValueError(f"unknown mode {mode!r}")


def selfplay(scenario, model, max_turns: int = 20, mode: str = "greedy",
             seed: int | None = None, first_mover: str = "buyer",
             keep_log_probs: bool = False):
    """Run one self-negotiation; one shared model plays both roles.

    Returns (dialogue, outcome, decisions) where decisions carry the
    per-turn log-prob graph nodes when requested.
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    session = NegotiationSession(scenario, first_mover=first_mover,
                                 max_turns=max_turns)
    decisions = []
    while not session.terminal:
        decision, price_values = agent_turn(session, model, mode=mode, rng=rng,
                                            keep_log_probs=keep_log_probs)
        session.step(session.next_actor, decision.action, decision.tokens,
                     price_values=price_values,
                     offer_price=decision.offer_price,
                     new_price=decision.new_price, ratio=decision.ratio)
        decisions.append(decision)
    return session.to_dialogue(), session.outcome(), decisions


def reward(outcome: Outcome, estimate: float, listing_price: float,
           disagreement_penalty: float = -0.5) -> float:
    """Closeness of the agreed price to the item's estimated value."""
    if estimate <= 0:
        raise ValueError("estimate must be positive")
    if outcome.agreed:
        return -abs(outcome.price - estimate) / listing_price
    return disagreement_penalty
