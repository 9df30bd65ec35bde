"""Shared synthetic-world builders for the test suite.

The synthetic catalog encodes each item's listing price directly in its
image features, so value estimation is learnable at desk scale; the true
agreement price is 0.89 x listing throughout.
"""

from __future__ import annotations

import numpy as np
import pytest

from haggle.config import ModelConfig, TrainConfig
from haggle.data import CatalogItem, Dialogue, Outcome, Scenario, TurnRecord, \
    Vocabulary, derive_labels
from haggle.model import NegotiationModel
from haggle.policy import Action

TRUE_DISCOUNT = 0.89
VISUAL_DIM = 8

# one line per end-to-end acceptance check, echoed after the run so the
# verdicts survive pytest's output capture
ACCEPTANCE_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)

CATEGORY_CYCLE = ("bike", "car", "electronics", "furniture", "housing", "phone")

_WORDS = ["hello", "hi", "interested", "in", "the", "item", "is", "it",
          "available", "yes", "condition", "great", "would", "you", "take",
          "how", "about", "price", "firm", "can", "do", "deal", "ok",
          "sounds", "good", "thanks", "that", "works", "for", "me", "sell",
          "buy", "lower", "best", "i", "offer", "no", "?", ".", ","]


def synth_item_features(listing_price: float, rng: np.random.Generator,
                        encode_price: bool = True) -> np.ndarray:
    """Visual features correlated with the listing price plus noise."""
    feats = rng.normal(scale=0.05, size=VISUAL_DIM)
    if encode_price:
        feats[0] = listing_price / 1000.0
        feats[1] = np.log(listing_price) / 10.0
    return feats


def make_catalog(n: int = 200, seed: int = 0,
                 encode_price: bool = True) -> list[CatalogItem]:
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        listing = float(rng.uniform(100.0, 1000.0))
        items.append(CatalogItem(
            id=f"cat{i:04d}",
            image_features=synth_item_features(listing, rng, encode_price),
            category=CATEGORY_CYCLE[i % len(CATEGORY_CYCLE)],
            title=[_WORDS[i % 10], "item"],
            description=[_WORDS[(i + 3) % 20], _WORDS[(i + 7) % 20]],
            listing_price=round(listing, 2)))
    return items


def make_scenarios(n: int = 20, seed: int = 100,
                   encode_price: bool = True) -> list[Scenario]:
    rng = np.random.default_rng(seed)
    scenarios = []
    for i in range(n):
        listing = float(rng.uniform(100.0, 1000.0))
        scenarios.append(Scenario(
            id=f"scen{i:03d}",
            image_features=synth_item_features(listing, rng, encode_price),
            category=CATEGORY_CYCLE[i % len(CATEGORY_CYCLE)],
            title=[_WORDS[i % 10], "item"],
            description=[_WORDS[(i + 5) % 20], _WORDS[(i + 11) % 20]],
            listing_price=round(listing, 2),
            seller_bottom=round(0.7 * listing, 2),
            buyer_target=round(0.7 * listing, 2)))
    return scenarios


def true_value(item) -> float:
    return TRUE_DISCOUNT * item.listing_price


def small_config(**overrides) -> ModelConfig:
    base = dict(embed_dim=16, visual_dim=VISUAL_DIM, n_neighbors=5,
                max_utterance_len=12, mlp_hidden=(16, 8, 8), max_turns=12)
    base.update(overrides)
    return ModelConfig(**base)


def small_vocab(extra=()) -> Vocabulary:
    return Vocabulary(list(_WORDS) + list(extra))


def make_model(config: ModelConfig | None = None, catalog=None,
               vocab: Vocabulary | None = None, seed: int = 0) -> NegotiationModel:
    config = config or small_config()
    catalog = catalog if catalog is not None else make_catalog(30, seed=7)
    vocab = vocab or small_vocab()
    return NegotiationModel(config, vocab, catalog, seed=seed)


def scripted_dialogue(scenario, agreed_price: float | None = None) -> Dialogue:
    """A short plausible negotiation for one scenario, fully labeled."""
    listing = scenario.listing_price
    price1 = round(0.8 * listing, 2)
    price2 = round(0.85 * listing, 2)
    turns = [
        TurnRecord(speaker="buyer", tokens=["hi", "is", "it", "available", "?"]),
        TurnRecord(speaker="seller", tokens=["yes", "great", "condition", "."]),
        TurnRecord(speaker="buyer",
                   tokens=["would", "you", "take", "<price>", "?"],
                   price_values=[price1]),
        TurnRecord(speaker="seller",
                   tokens=["can", "do", "<price>", "."],
                   price_values=[price2]),
        TurnRecord(speaker="buyer", tokens=["deal", "."],
                   action=Action.OFFER, event_price=price2),
        TurnRecord(speaker="seller", tokens=[], action=Action.ACCEPT),
    ]
    agreed = agreed_price if agreed_price is not None else price2
    dialogue = Dialogue(scenario_id=scenario.id, turns=turns,
                        outcome=Outcome(agreed=True, price=agreed,
                                        turns=len(turns), ended_by="accept"))
    derive_labels(dialogue, scenario)
    return dialogue


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def scenario():
    return make_scenarios(1, seed=42)[0]


@pytest.fixture
def catalog():
    return make_catalog(30, seed=7)


@pytest.fixture
def model():
    return make_model()


@pytest.fixture
def train_config():
    return TrainConfig(seed=0, batch_size=8)
