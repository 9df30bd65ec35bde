"""Composition of all trainable blocks into one negotiation agent.

One parameter store backs the whole agent; both roles share it and differ
only through role-specific decoder start tokens.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .config import ModelConfig
from .encoding import HistoryEncoder, WordEncoder, state_dim
from .layers import embedding_table
from .params import ParameterStore
from .policy import ActionPredictor, PriceAdjuster
from .textgen import Decoder
from .value import ItemFeaturizer, MatchingNetwork, clamp_estimate, knn


class NegotiationModel:
    def __init__(self, config: ModelConfig, vocab, catalog,
                 embeddings: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.catalog = catalog
        rng = np.random.default_rng(seed)
        d = config.embed_dim
        self.store = ParameterStore()
        pretrained = {}
        if embeddings:
            pretrained = {vocab.index(tok): vec for tok, vec in embeddings.items()
                          if tok in vocab and len(vec) == d}
        self.table = embedding_table(self.store, "tokens", len(vocab), d, rng,
                                     pretrained)
        self.matcher = MatchingNetwork(self.store, "matcher", config.visual_dim,
                                       d, self.table, vocab, rng)
        self.word_encoder = WordEncoder(self.store, "word_encoder", d,
                                        self.table, vocab, rng,
                                        n_layers=config.n_rnn_layers)
        self.history_encoder = HistoryEncoder(self.store, "history_encoder", d,
                                              rng, n_layers=config.n_rnn_layers)
        self.decoder = Decoder(self.store, "decoder", d, vocab, self.table, rng,
                               n_layers=config.n_rnn_layers,
                               max_len=config.max_utterance_len)
        self.action_predictor = ActionPredictor(self.store, state_dim(d),
                                                config.mlp_hidden, rng,
                                                dropout=config.dropout)
        self.price_adjuster = PriceAdjuster(self.store, state_dim(d),
                                            config.mlp_hidden, rng,
                                            dropout=config.dropout)
        self.featurizer = ItemFeaturizer(embeddings or {}, d)
        self._estimate_cache: dict[str, tuple[float, np.ndarray]] = {}

    def neighbors(self, scenario):
        found, _ = knn(scenario, self.catalog, self.config.n_neighbors,
                       self.featurizer)
        return found

    def estimate_graph(self, scenario):
        """Differentiable estimate; used by value-head training."""
        return self.matcher.forward(scenario, self.neighbors(scenario))

    def estimate(self, scenario) -> tuple[float, np.ndarray]:
        """Clamped scalar estimate and detached final item representation."""
        cached = self._estimate_cache.get(scenario.id)
        if cached is None:
            est, _, u3 = self.estimate_graph(scenario)
            cached = (clamp_estimate(est.item(), scenario.listing_price,
                                     self.config.estimate_clamp),
                      u3.data.copy())
            self._estimate_cache[scenario.id] = cached
        return cached

    def invalidate_estimates(self):
        """Call after updating matcher parameters."""
        self._estimate_cache.clear()

    def turn_vectors(self, turns):
        return [self.word_encoder.encode(t.tokens) for t in turns]

    def history_seed(self, scenario) -> Tensor:
        _, u3 = self.estimate(scenario)
        return Tensor(u3)

    def save(self, path):
        self.store.save(path)

    def load(self, path):
        self.store.load(path)
        self.invalidate_estimates()
