"""Attention decoder with action/role start tokens and price substitution.

The decoder vocabulary contains no numeric price tokens; it can only emit
the ``<price>`` sentinel, which is substituted afterwards with the price
chosen by the decision heads. A transcript therefore cannot contain a
price the policy did not set.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, rows, stack_rows
from .data import PRICE_TOKEN, format_price
from .layers import BilinearAttention, Linear, LSTMStack
from .policy import Action


class CopyError(RuntimeError):
    """A price sentinel was generated with no adjusted price available."""


def build_attention_memory(word_encoder, title, description, prev_tokens) -> Tensor:
    """Word-encoder outputs over title ++ description ++ previous utterance."""
    rows_ = []
    for tokens in (title, description, prev_tokens):
        if tokens:
            outputs, _ = word_encoder.encode_with_outputs(tokens)
            rows_.extend(outputs)
    if not rows_:
        return Tensor(np.zeros((1, word_encoder.dim)))
    return stack_rows(rows_)


class Decoder:
    """2-layer LSTM decoder with bilinear attention and a log-softmax head."""

    def __init__(self, store, prefix: str, dim: int, vocab, token_table: Tensor,
                 rng, n_layers: int = 2, max_len: int = 40):
        self.dim = dim
        self.vocab = vocab
        self.token_table = token_table
        self.max_len = max_len
        self.lstm = LSTMStack(store, f"{prefix}.lstm", dim, dim, n_layers, rng)
        self.attention = BilinearAttention(store, f"{prefix}.att", dim, dim, rng)
        self.generative = Linear(store, f"{prefix}.gen", 2 * dim, len(vocab), rng)
        # structurally unreachable outputs: padding, unknown, start markers
        self._blocked = [vocab.pad, vocab.unk]
        self._blocked += [vocab.index(vocab.start_token(role, action))
                          for role in ("seller", "buyer") for action in Action]

    def _step(self, token_idx: int, state, memory: Tensor):
        x = rows(self.token_table, [token_idx])
        h, state = self.lstm.step(x, state)
        context, att_weights = self.attention(h, memory)
        log_probs = self.generative(concat([h, context], axis=-1)).log_softmax()
        return log_probs, att_weights, state

    def decode(self, init_state, memory: Tensor, role: str, action: Action,
               mode: str = "greedy", temperature: float = 0.5,
               rng: np.random.Generator | None = None,
               suppress_price: bool = False) -> list[str]:
        """Autoregressive generation until the end token or the length cap."""
        blocked = list(self._blocked)
        if suppress_price:
            blocked.append(self.vocab.price)
        token = self.vocab.index(self.vocab.start_token(role, action))
        state = init_state
        out: list[str] = []
        for _ in range(self.max_len):
            log_probs, _, state = self._step(token, state, memory)
            lp = log_probs.data[0].copy()
            lp[blocked] = -np.inf
            if mode == "greedy":
                token = int(np.argmax(lp))
            elif mode == "sample":
                scaled = lp / max(temperature, 1e-8)
                scaled -= scaled.max()
                probs = np.exp(scaled)
                probs /= probs.sum()
                token = int(rng.choice(len(probs), p=probs))
            else:
                raise ValueError(f"unknown decode mode {mode!r}")
            if token == self.vocab.end:
                break
            out.append(self.vocab.token(token))
        return out

    def teacher_forced_nll(self, gold_tokens, init_state, memory: Tensor,
                           role: str, action: Action) -> Tensor:
        """Mean negative log-likelihood per gold token (end token included)."""
        if not gold_tokens:
            raise ValueError("empty gold turn")
        targets = self.vocab.encode(gold_tokens) + [self.vocab.end]
        token = self.vocab.index(self.vocab.start_token(role, action))
        state = init_state
        nll = None
        for target in targets:
            log_probs, _, state = self._step(token, state, memory)
            term = -log_probs[:, target:target + 1]
            nll = term if nll is None else nll + term
            token = target
        return nll * (1.0 / len(targets))


def apply_copy(tokens: list[str], adjusted_price: float | None) -> str:
    """Replace every price sentinel with the formatted adjusted price."""
    if PRICE_TOKEN in tokens and adjusted_price is None:
        raise CopyError("generated a price sentinel but no price was adjusted")
    out = []
    for tok in tokens:
        out.append(format_price(adjusted_price) if tok == PRICE_TOKEN else tok)
    return " ".join(out)
