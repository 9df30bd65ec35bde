"""Modular price-negotiation dialogue agent.

A retrieval-grounded value estimator prices the item, hierarchical
recurrent encoders track the conversation, two small decision heads pick
the next action and price concession, and an attention decoder writes the
words. A turn-based state machine enforces protocol legality, and a
gateway serves live sessions over HTTP/WebSocket.
"""

from .config import ModelConfig, TrainConfig
from .data import Dialogue, Scenario, Vocabulary
from .model import NegotiationModel
from .policy import Action, RatioClass
from .session import NegotiationSession, selfplay
from .value import AttentionValueEstimator, CategoryAveragingBaseline, \
    DiscountedNeighborBaseline, OnlineValueEstimator

__version__ = "0.1.0"

__all__ = [
    "Action", "AttentionValueEstimator", "CategoryAveragingBaseline",
    "Dialogue", "DiscountedNeighborBaseline", "ModelConfig",
    "NegotiationModel", "NegotiationSession", "OnlineValueEstimator",
    "RatioClass", "Scenario", "TrainConfig", "Vocabulary", "selfplay",
    "__version__",
]
