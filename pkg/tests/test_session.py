"""Negotiation state machine, agent turns, self-play, and reward."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haggle.data import Outcome, PRICE_TOKEN
from haggle.policy import Action, RatioClass
from haggle.session import IllegalActionError, NegotiationSession, \
    SessionError, WrongActorError, agent_turn, other, reward, selfplay

from conftest import make_model, make_scenarios


@pytest.fixture
def session(scenario):
    return NegotiationSession(scenario, first_mover="buyer", max_turns=10)


def test_other():
    assert other("seller") == "buyer" and other("buyer") == "seller"


def test_initial_proposals_and_actor(session, scenario):
    assert session.proposals["seller"] == pytest.approx(scenario.listing_price)
    assert session.proposals["buyer"] == pytest.approx(scenario.buyer_target)
    assert session.next_actor == "buyer"
    assert not session.terminal


def test_max_turns_floor(scenario):
    with pytest.raises(ValueError):
        NegotiationSession(scenario, max_turns=1)


def test_wrong_actor_rejected(session):
    with pytest.raises(WrongActorError):
        session.step("seller", Action.NEGOTIATE, ["hello"])


def test_offer_accept_flow(session, scenario):
    mid = round(0.85 * scenario.listing_price, 2)
    session.step("buyer", Action.NEGOTIATE, ["hello"])
    session.step("seller", Action.NEGOTIATE, ["hi"])
    session.step("buyer", Action.OFFER, [], offer_price=mid)
    assert session.phase == "offer_pending"
    assert session.pending_by == "buyer"
    with pytest.raises(IllegalActionError):
        # responder cannot keep negotiating with an offer on the table
        session.step("seller", Action.NEGOTIATE, ["hmm"])
    session.step("seller", Action.ACCEPT, [])
    outcome = session.outcome()
    assert outcome.agreed and outcome.price == pytest.approx(mid)
    assert session.terminal


def test_offer_reject_flow(session, scenario):
    session.step("buyer", Action.OFFER, [])
    session.step("seller", Action.REJECT, [])
    assert session.phase == "rejected"
    assert not session.outcome().agreed


def test_quit_any_time(session):
    session.step("buyer", Action.QUIT, [])
    assert session.phase == "quit"
    assert session.outcome().ended_by == "quit"


def test_accept_without_pending_rejected(session):
    with pytest.raises(IllegalActionError):
        session.step("buyer", Action.ACCEPT, [])


def test_step_after_terminal_rejected(session):
    session.step("buyer", Action.QUIT, [])
    with pytest.raises(IllegalActionError):
        session.step("seller", Action.NEGOTIATE, ["hello"])


def test_max_turns_exhaustion(scenario):
    session = NegotiationSession(scenario, max_turns=2)
    session.step("buyer", Action.NEGOTIATE, ["hello"])
    session.step("seller", Action.NEGOTIATE, ["hi"])
    assert session.phase == "max_turns"
    assert not session.outcome().agreed


def test_proposals_clamped_monotone(session, scenario):
    listing = scenario.listing_price
    session.step("buyer", Action.CONCEDE, [PRICE_TOKEN],
                 price_values=[round(0.8 * listing, 2)])
    first = session.proposals["buyer"]
    # an attempt to walk the proposal back down is clamped to the old value
    session.step("seller", Action.NEGOTIATE, ["no"])
    session.step("buyer", Action.CONCEDE, [PRICE_TOKEN],
                 price_values=[round(0.75 * listing, 2)])
    assert session.proposals["buyer"] == pytest.approx(first)
    # and the seller can never undercut the buyer's standing proposal
    session.step("seller", Action.CONCEDE, [PRICE_TOKEN],
                 price_values=[1.0])
    assert session.proposals["seller"] == pytest.approx(first)


def test_offer_price_clamped_to_own_proposal(session, scenario):
    listing = scenario.listing_price
    session.step("buyer", Action.CONCEDE, [PRICE_TOKEN],
                 price_values=[round(0.8 * listing, 2)])
    session.step("seller", Action.OFFER, [], offer_price=2 * listing)
    # the seller cannot offer above their own standing price
    assert session.pending_price == pytest.approx(listing)


def test_transcript_records_intents(session):
    session.step("buyer", Action.NEGOTIATE, ["hello", "there"])
    assert session.transcript[0].intent == "intro"


def test_to_dialogue_roundtrip(session, scenario):
    session.step("buyer", Action.OFFER, [])
    session.step("seller", Action.ACCEPT, [])
    d = session.to_dialogue()
    d.validate()
    assert d.scenario_id == scenario.id
    assert d.outcome.agreed


# -- reward -----------------------------------------------------------------


def test_reward_hand_values():
    agreed = Outcome(agreed=True, price=940.0)
    assert reward(agreed, estimate=890.0, listing_price=1000.0) \
        == pytest.approx(-0.05)
    assert reward(Outcome(agreed=False), 890.0, 1000.0) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        reward(agreed, estimate=0.0, listing_price=1000.0)


def test_reward_peaks_at_estimate():
    exact = Outcome(agreed=True, price=890.0)
    assert reward(exact, 890.0, 1000.0) == pytest.approx(0.0)


# -- agent turns and self-play ---------------------------------------------


def test_agent_turn_on_terminal_session_raises(model, scenario):
    session = NegotiationSession(scenario, max_turns=4)
    session.step("buyer", Action.QUIT, [])
    with pytest.raises(SessionError):
        agent_turn(session, model)


def test_agent_turn_is_legal_and_priced(model, scenario):
    session = NegotiationSession(scenario, max_turns=10)
    decision, price_values = agent_turn(session, model, mode="greedy")
    assert session.legal_mask("buyer")[int(decision.action)]
    assert len(price_values) == decision.tokens.count(PRICE_TOKEN)
    assert PRICE_TOKEN not in decision.utterance


def test_selfplay_terminates_and_validates(model):
    scenario = make_scenarios(1, seed=9)[0]
    dialogue, outcome, decisions = selfplay(scenario, model, max_turns=8,
                                            mode="greedy")
    dialogue.validate()
    assert outcome.ended_by in ("accept", "agreed", "rejected", "quit",
                                "max_turns")
    assert len(decisions) == len(dialogue.turns)
    assert len(dialogue.turns) <= 8


def test_selfplay_sample_mode_seeded(model):
    scenario = make_scenarios(1, seed=9)[0]
    d1, o1, _ = selfplay(scenario, model, max_turns=8, mode="sample", seed=11)
    d2, o2, _ = selfplay(scenario, model, max_turns=8, mode="sample", seed=11)
    assert [t.tokens for t in d1.turns] == [t.tokens for t in d2.turns]
    assert o1.ended_by == o2.ended_by


def test_selfplay_keep_log_probs(model):
    scenario = make_scenarios(1, seed=9)[0]
    _, _, decisions = selfplay(scenario, model, max_turns=6, mode="sample",
                               seed=3, keep_log_probs=True)
    assert decisions
    for decision in decisions:
        assert decision.action_log_prob is not None
        assert decision.action_log_prob.data.shape == (1, 1)
        if decision.action in (Action.CONCEDE, Action.OFFER):
            assert decision.ratio_log_prob is not None
