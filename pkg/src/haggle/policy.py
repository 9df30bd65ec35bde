"""Discrete decision heads and the deterministic price-update arithmetic.

Two 6-way choices drive a negotiation turn: the next high-level action, and
(for Concede/Offer) the fraction of the role's concession range to give up.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from .autodiff import Tensor, concat
from .layers import MLP


class Action(IntEnum):
    NEGOTIATE = 0
    CONCEDE = 1
    OFFER = 2
    ACCEPT = 3
    REJECT = 4
    QUIT = 5

    @property
    def wire_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "Action":
        return cls[name.upper()]


N_ACTIONS = len(Action)

# invoked the price adjuster only for these
PRICED_ACTIONS = (Action.CONCEDE, Action.OFFER)


class RatioClass(IntEnum):
    """Concession step as a fraction of the role's concession range."""

    R0 = 0
    R20 = 1
    R40 = 2
    R60 = 3
    R80 = 4
    R100 = 5

    @property
    def fraction(self) -> float:
        return self.value * 0.2


N_RATIOS = len(RatioClass)


def nearest_ratio_class(fraction: float) -> RatioClass:
    """Snap an observed normalized step to the 0/.2/.4/.6/.8/1 grid; ties go low."""
    grid = np.arange(N_RATIOS) * 0.2
    dist = np.abs(grid - fraction)
    return RatioClass(int(np.argmin(dist)))  # argmin takes the first (smaller) on ties


def concession_range(role: str, scenario) -> float:
    """Total price span a role may concede over the whole negotiation."""
    if role == "seller":
        rng = 0.3 * scenario.listing_price
    elif role == "buyer":
        rng = scenario.listing_price - scenario.buyer_target
    else:
        raise ValueError(f"unknown role {role!r}")
    if rng < 0:
        raise ValueError("negative concession range")
    return rng


def initial_price(role: str, scenario) -> float:
    if role == "seller":
        return scenario.listing_price
    if role == "buyer":
        return scenario.buyer_target
    raise ValueError(f"unknown role {role!r}")


def adjust_price(role: str, current: float, ratio: RatioClass, scenario,
                 opponent_last: float | None = None) -> float:
    """Move `current` toward the opponent by ratio x concession range.

    Clamped so the seller never undercuts the buyer's standing proposal and
    vice versa; this makes proposal sequences monotone by construction.
    """
    if current <= 0:
        raise ValueError("current price must be positive")
    step = ratio.fraction * concession_range(role, scenario)
    if role == "seller":
        new = current - step
        if opponent_last is not None:
            new = max(new, opponent_last)
        new = min(new, current)
    else:
        new = current + step
        if opponent_last is not None:
            new = min(new, opponent_last)
        new = max(new, current)
    return round(new, 2)


def legal_actions(phase: str, pending_by: str | None, actor: str) -> np.ndarray:
    """Boolean mask over Action indices for the actor in the given phase."""
    mask = np.zeros(N_ACTIONS, dtype=bool)
    if phase == "open":
        mask[[Action.NEGOTIATE, Action.CONCEDE, Action.OFFER, Action.QUIT]] = True
    elif phase == "offer_pending":
        if pending_by == actor:
            # should not get the turn back with own offer pending; Quit stays legal
            mask[Action.QUIT] = True
        else:
            mask[[Action.ACCEPT, Action.REJECT, Action.QUIT]] = True
    else:
        raise ValueError(f"no legal actions in terminal phase {phase!r}")
    return mask


def masked_log_probs(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Log-softmax with illegal entries forced to -inf (zero probability)."""
    if not mask.any():
        raise ValueError("empty legal-action mask")
    penalty = np.where(mask, 0.0, -1e30)
    return (logits + Tensor(penalty.reshape(1, -1))).log_softmax()


class ActionPredictor:
    """4-layer ReLU perceptron: dialogue state -> 6 action logits."""

    def __init__(self, store, state_dim: int, hidden: tuple[int, ...],
                 rng, dropout: float = 0.3):
        sizes = [state_dim, *hidden, N_ACTIONS]
        if len(sizes) != 5:
            raise ValueError("action predictor expects 3 hidden sizes (4 layers)")
        self.mlp = MLP(store, "action_predictor", sizes, rng, dropout_rate=dropout)

    def logits(self, state: Tensor, rng=None, training=False) -> Tensor:
        return self.mlp(state, rng=rng, training=training)

    def probabilities(self, state: Tensor, mask: np.ndarray) -> np.ndarray:
        return np.exp(masked_log_probs(self.logits(state), mask).data[0])


class PriceAdjuster:
    """4-layer ReLU perceptron: dialogue state ++ action one-hot -> 6 ratio logits."""

    def __init__(self, store, state_dim: int, hidden: tuple[int, ...],
                 rng, dropout: float = 0.3):
        sizes = [state_dim + N_ACTIONS, *hidden, N_RATIOS]
        if len(sizes) != 5:
            raise ValueError("price adjuster expects 3 hidden sizes (4 layers)")
        self.mlp = MLP(store, "price_adjuster", sizes, rng, dropout_rate=dropout)

    def logits(self, state: Tensor, action: Action, rng=None,
               training=False) -> Tensor:
        if action not in PRICED_ACTIONS:
            raise ValueError(f"price adjuster not applicable to {action!r}")
        onehot = np.zeros((1, N_ACTIONS))
        onehot[0, int(action)] = 1.0
        return self.mlp(concat([state, Tensor(onehot)], axis=-1),
                        rng=rng, training=training)

    def probabilities(self, state: Tensor, action: Action) -> np.ndarray:
        return np.exp(self.logits(state, action).log_softmax().data[0])
