"""Hierarchical dialogue encoding and the price-bucketed dialogue state.

Each utterance runs through a word-level LSTM; the resulting turn vectors
run through a history-level LSTM seeded by the matching network's final
item representation. The dialogue state is the history encoding plus three
7-way one-hot price buckets (own price, opponent price, value estimate),
each normalized in the role's own frame (1 = target, 0 = bottom line).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, rows
from .layers import LSTMStack


@dataclass(frozen=True)
class PriceFrame:
    """Role-specific normalization anchors."""

    role: str
    target: float
    bottom: float

    def __post_init__(self):
        if self.target == self.bottom:
            raise ValueError("degenerate price frame: target == bottom")

    @classmethod
    def for_role(cls, role: str, scenario, seller_bottom_frac: float = 0.7):
        if role == "seller":
            return cls(role, target=scenario.listing_price,
                       bottom=seller_bottom_frac * scenario.listing_price)
        if role == "buyer":
            return cls(role, target=scenario.buyer_target,
                       bottom=scenario.listing_price)
        raise ValueError(f"unknown role {role!r}")


def normalize_price(price: float, frame: PriceFrame) -> float:
    """Affine map sending the frame's bottom to 0 and target to 1."""
    return (price - frame.bottom) / (frame.target - frame.bottom)


N_BUCKETS = 7


def price_bucket(x: float) -> int:
    """Monotone step function onto 7 buckets: <0, five fifths of [0,1], >1."""
    if np.isnan(x):
        raise ValueError("NaN normalized price")
    if x < 0.0:
        return 0
    if x > 1.0:
        return 6
    # explicit boundaries avoid float division artifacts; 1.0 lands in bucket 5
    for i, upper in enumerate((0.2, 0.4, 0.6, 0.8)):
        if x < upper:
            return i + 1
    return 5


def bucket_onehot(bucket: int) -> np.ndarray:
    v = np.zeros(N_BUCKETS)
    v[bucket] = 1.0
    return v


@dataclass
class DialogueState:
    """History encoding plus three price one-hots; feeds the decision heads."""

    history: Tensor                   # (1, d)
    agent_bucket: int
    opponent_bucket: int
    estimate_bucket: int

    def vector(self) -> Tensor:
        onehots = np.concatenate([
            bucket_onehot(self.agent_bucket),
            bucket_onehot(self.opponent_bucket),
            bucket_onehot(self.estimate_bucket),
        ]).reshape(1, -1)
        return concat([self.history, Tensor(onehots)], axis=-1)

    @property
    def length(self) -> int:
        return self.history.data.shape[1] + 3 * N_BUCKETS


def state_dim(embed_dim: int) -> int:
    return embed_dim + 3 * N_BUCKETS


class WordEncoder:
    """2-layer LSTM over token embeddings; returns the final top hidden state."""

    def __init__(self, store, prefix: str, dim: int, token_table: Tensor,
                 vocab, rng, n_layers: int = 2):
        self.dim = dim
        self.token_table = token_table
        self.vocab = vocab
        self.lstm = LSTMStack(store, prefix, dim, dim, n_layers, rng)

    def encode(self, tokens) -> Tensor:
        if not tokens:
            return Tensor(np.zeros((1, self.dim)))
        idx = self.vocab.encode(tokens)
        embedded = rows(self.token_table, idx)
        outputs, _ = self.lstm.run([embedded[i:i + 1, :]
                                    for i in range(len(idx))])
        return outputs[-1]

    def encode_with_outputs(self, tokens):
        """Per-token top-layer hidden states, for attention memories."""
        if not tokens:
            return [], Tensor(np.zeros((1, self.dim)))
        idx = self.vocab.encode(tokens)
        embedded = rows(self.token_table, idx)
        outputs, _ = self.lstm.run([embedded[i:i + 1, :]
                                    for i in range(len(idx))])
        return outputs, outputs[-1]


class HistoryEncoder:
    """2-layer LSTM over turn vectors, layer-1 hidden seeded by the item rep."""

    def __init__(self, store, prefix: str, dim: int, rng, n_layers: int = 2):
        self.dim = dim
        self.lstm = LSTMStack(store, prefix, dim, dim, n_layers, rng)

    def _initial_state(self, seed: Tensor):
        state = self.lstm.zero_state()
        return [(seed, state[0][1])] + state[1:]

    def encode(self, turn_vectors, seed: Tensor) -> Tensor:
        """Final top hidden; with no turns yet, the seed itself."""
        if not turn_vectors:
            return seed
        outputs, _ = self.lstm.run(turn_vectors, self._initial_state(seed))
        return outputs[-1]

    def final_state(self, turn_vectors, seed: Tensor):
        """Full LSTM state after the turns, for seeding the decoder."""
        state = self._initial_state(seed)
        if turn_vectors:
            _, state = self.lstm.run(turn_vectors, state)
        return state


def assemble_state(history_vec: Tensor, agent_price: float,
                   opponent_price: float, estimate: float,
                   frame: PriceFrame) -> DialogueState:
    """Bucket the three prices in the agent's own frame and attach them."""
    return DialogueState(
        history=history_vec,
        agent_bucket=price_bucket(normalize_price(agent_price, frame)),
        opponent_bucket=price_bucket(normalize_price(opponent_price, frame)),
        estimate_bucket=price_bucket(normalize_price(estimate, frame)),
    )
