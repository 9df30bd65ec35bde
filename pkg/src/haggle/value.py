"""Agreement-price estimation from a catalog of similar listings.

An item is embedded from its image features plus title/description tokens;
the K most similar catalog items act as memory cells of a stacked-attention
matching network whose final attention weights blend their listing prices.
A scalar affine "discount" map converts the listing-based blend into an
agreement-price estimate. Averaging / direct-regression / discounted-KNN
baselines are provided for comparison.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .autodiff import Tensor, concat, rows, stack_rows
from .layers import Linear, MLP
from .params import Adam, ParameterStore


def _text_vector(item, embeddings: dict[str, np.ndarray], dim: int) -> np.ndarray:
    vec = np.zeros(dim)
    for tok in list(item.title) + list(item.description):
        emb = embeddings.get(tok)
        if emb is not None:
            vec += emb
    return vec


class ItemFeaturizer:
    """Raw (visual, text) feature views used by similarity retrieval."""

    def __init__(self, embeddings: dict[str, np.ndarray], text_dim: int):
        self.embeddings = embeddings
        self.text_dim = text_dim

    def visual(self, item) -> np.ndarray:
        return np.asarray(item.image_features, dtype=np.float64)

    def text(self, item) -> np.ndarray:
        return _text_vector(item, self.embeddings, self.text_dim)


def _cosine01(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cos = 0.0 if na == 0.0 or nb == 0.0 else float(a @ b) / (na * nb)
    return (cos + 1.0) / 2.0


def similarity(a, b, featurizer: ItemFeaturizer) -> float:
    """Equal-weight blend of visual cosine, text cosine, and price closeness."""
    visual = _cosine01(featurizer.visual(a), featurizer.visual(b))
    text = _cosine01(featurizer.text(a), featurizer.text(b))
    pa, pb = a.listing_price, b.listing_price
    price = 1.0 - abs(pa - pb) / max(pa, pb)
    return (visual + text + price) / 3.0


def knn(item, catalog, k: int, featurizer: ItemFeaturizer):
    """Top-k catalog items by similarity, same-category first, ties by id."""
    if not catalog:
        raise ValueError("empty catalog")
    same = [c for c in catalog if c.category == item.category]
    other = [c for c in catalog if c.category != item.category]

    def ranked(items):
        scored = [(similarity(item, c, featurizer), c) for c in items]
        scored.sort(key=lambda sc: (-sc[0], sc[1].id))
        return scored

    chosen = ranked(same)[:k]
    if len(chosen) < k:
        chosen += ranked(other)[:k - len(chosen)]
    neighbors = [c for _, c in chosen]
    scores = [s for s, _ in chosen]
    return neighbors, scores


class MultimodalEmbedder:
    """Project image features, sum token embeddings, fuse through a 2-layer MLP."""

    def __init__(self, store: ParameterStore, prefix: str, visual_dim: int,
                 dim: int, token_table: Tensor, vocab, rng):
        self.dim = dim
        self.token_table = token_table
        self.vocab = vocab
        self.visual_projection = Linear(store, f"{prefix}.visual", visual_dim, dim, rng)
        self.fusion = MLP(store, f"{prefix}.fusion", [2 * dim, dim, dim], rng)

    def _text_sum(self, tokens) -> Tensor:
        if not tokens:
            return Tensor(np.zeros((1, self.dim)))
        idx = [self.vocab.index(t) for t in tokens]
        return rows(self.token_table, idx).sum(axis=0, keepdims=True)

    def __call__(self, item) -> Tensor:
        feats = np.asarray(item.image_features, dtype=np.float64).reshape(1, -1)
        if feats.shape[1] != self.visual_projection.w.data.shape[0]:
            raise ValueError(
                f"image feature length {feats.shape[1]} != "
                f"{self.visual_projection.w.data.shape[0]}")
        visual = self.visual_projection(Tensor(feats))
        text = self._text_sum(list(item.title) + list(item.description))
        return self.fusion(concat([visual, text], axis=-1))


class MatchingNetwork:
    """Stacked attention over K similar items, then a scalar discount map.

    Layer l scores the running item representation against bank l-1
    embeddings of the neighbors and adds back the bank-l weighted blend;
    the last layer's weights read out a convex combination of neighbor
    listing prices.
    """

    N_BANKS = 4
    N_LAYERS = 3

    def __init__(self, store: ParameterStore, prefix: str, visual_dim: int,
                 dim: int, token_table: Tensor, vocab, rng):
        self.banks = [
            MultimodalEmbedder(store, f"{prefix}.bank{i}", visual_dim, dim,
                               token_table, vocab, rng)
            for i in range(self.N_BANKS)
        ]
        # identity init: untrained estimates stay a convex price combination
        self.discount_w = store.add(f"{prefix}.discount.w", np.array([[1.0]]))
        self.discount_b = store.add(f"{prefix}.discount.b", np.array([[0.0]]))

    def forward(self, item, neighbors):
        """Return (estimate (1,1) Tensor, final weights (K,), u3 (1,d) Tensor)."""
        u = self.banks[0](item)
        weights = None
        for layer in range(1, self.N_LAYERS + 1):
            keys = stack_rows([self.banks[layer - 1](nb) for nb in neighbors])
            values = stack_rows([self.banks[layer](nb) for nb in neighbors])
            weights = (u @ keys.T).softmax(axis=-1)
            u = u + weights @ values
        listings = Tensor(np.array([[nb.listing_price] for nb in neighbors]))
        raw = weights @ listings
        estimate = raw @ self.discount_w + self.discount_b
        return estimate, weights.data[0].copy(), u

    def discount_ratio(self) -> float:
        """Average shrinkage the discount map applies to a unit price."""
        return 1.0 - float(self.discount_w.data[0, 0])


def clamp_estimate(value: float, listing_price: float,
                   bounds: tuple[float, float] = (0.1, 2.0)) -> float:
    lo, hi = bounds[0] * listing_price, bounds[1] * listing_price
    return float(min(max(value, lo), hi))


# ---------------------------------------------------------------------------
# estimators with a fit/predict surface


class OnlineValueEstimator(BaseEstimator, RegressorMixin):
    """Catalog-retrieval + matching-network price regressor.

    fit(X, y) takes a list of scenario-like items and their ground-truth
    agreed prices; predict(X) returns clamped estimates.
    """

    def __init__(self, catalog=None, embeddings=None, embed_dim=300,
                 visual_dim=2048, n_neighbors=32, lr=1e-3, epochs=50,
                 seed=0, clamp=(0.1, 2.0)):
        self.catalog = catalog
        self.embeddings = embeddings
        self.embed_dim = embed_dim
        self.visual_dim = visual_dim
        self.n_neighbors = n_neighbors
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.clamp = clamp

    def _setup(self, vocab):
        from .layers import embedding_table
        rng = np.random.default_rng(self.seed)
        self.store_ = ParameterStore()
        self.table_ = embedding_table(self.store_, "tokens", len(vocab),
                                      self.embed_dim, rng)
        if self.embeddings:
            for tok, vec in self.embeddings.items():
                if tok in vocab and len(vec) == self.embed_dim:
                    self.table_.data[vocab.index(tok)] = vec
        self.net_ = MatchingNetwork(self.store_, "matcher", self.visual_dim,
                                    self.embed_dim, self.table_, vocab, rng)
        self.featurizer_ = ItemFeaturizer(self.embeddings or {}, self.embed_dim)

    def _neighbors(self, item):
        neighbors, _ = knn(item, self.catalog, self.n_neighbors, self.featurizer_)
        return neighbors

    def fit(self, X, y):
        from .data import Vocabulary, is_price_like
        vocab = Vocabulary()
        for item in list(X) + list(self.catalog or []):
            for tok in list(item.title) + list(item.description):
                if tok not in vocab and not is_price_like(tok):
                    vocab.add(tok)
        self.vocab_ = vocab
        self._setup(vocab)
        neighbor_sets = [self._neighbors(item) for item in X]
        optimizer = Adam(self.store_, lr=self.lr)
        y = np.asarray(y, dtype=np.float64)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            self.store_.zero_grad()
            total = None
            for item, neighbors, target in zip(X, neighbor_sets, y):
                est, _, _ = self.net_.forward(item, neighbors)
                err = (est - Tensor([[target]])).abs()
                total = err if total is None else total + err
            loss = total * (1.0 / len(y))
            loss.backward()
            optimizer.step()
            self.loss_curve_.append(loss.item())
        return self

    def predict(self, X):
        out = []
        for item in X:
            neighbors = self._neighbors(item)
            est, _, _ = self.net_.forward(item, neighbors)
            out.append(clamp_estimate(est.item(), item.listing_price, self.clamp))
        return np.asarray(out)

    def explain(self, item):
        """Estimate plus the neighbor ids and final attention weights."""
        neighbors, _ = knn(item, self.catalog, self.n_neighbors, self.featurizer_)
        est, weights, _ = self.net_.forward(item, neighbors)
        return {
            "estimate": clamp_estimate(est.item(), item.listing_price, self.clamp),
            "neighbors": [
                {"id": nb.id, "listing_price": nb.listing_price, "weight": float(w)}
                for nb, w in zip(neighbors, weights)
            ],
        }


class AttentionValueEstimator(BaseEstimator, RegressorMixin):
    """Direct regression from the item's own embedding; no catalog access."""

    def __init__(self, embeddings=None, embed_dim=300, visual_dim=2048,
                 lr=1e-3, epochs=50, seed=0):
        self.embeddings = embeddings
        self.embed_dim = embed_dim
        self.visual_dim = visual_dim
        self.lr = lr
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        from .data import Vocabulary, is_price_like
        from .layers import embedding_table
        vocab = Vocabulary()
        for item in X:
            for tok in list(item.title) + list(item.description):
                if tok not in vocab and not is_price_like(tok):
                    vocab.add(tok)
        self.vocab_ = vocab
        rng = np.random.default_rng(self.seed)
        self.store_ = ParameterStore()
        table = embedding_table(self.store_, "tokens", len(vocab),
                                self.embed_dim, rng)
        if self.embeddings:
            for tok, vec in self.embeddings.items():
                if tok in vocab and len(vec) == self.embed_dim:
                    table.data[vocab.index(tok)] = vec
        self.embedder_ = MultimodalEmbedder(self.store_, "embedder",
                                            self.visual_dim, self.embed_dim,
                                            table, vocab, rng)
        self.head_ = MLP(self.store_, "head",
                         [self.embed_dim, self.embed_dim, 1], rng)
        optimizer = Adam(self.store_, lr=self.lr)
        y = np.asarray(y, dtype=np.float64)
        for _ in range(self.epochs):
            self.store_.zero_grad()
            total = None
            for item, target in zip(X, y):
                pred = self.head_(self.embedder_(item))
                err = (pred - Tensor([[target]])).abs()
                total = err if total is None else total + err
            (total * (1.0 / len(y))).backward()
            optimizer.step()
        return self

    def predict(self, X):
        return np.asarray([self.head_(self.embedder_(item)).item() for item in X])


class CategoryAveragingBaseline(BaseEstimator, RegressorMixin):
    """Predict the mean agreed price of the item's category."""

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float64)
        self.global_mean_ = float(np.mean(y))
        sums: dict[str, list[float]] = {}
        for item, target in zip(X, y):
            sums.setdefault(item.category, []).append(float(target))
        self.category_means_ = {c: float(np.mean(v)) for c, v in sums.items()}
        return self

    def predict(self, X):
        return np.asarray([self.category_means_.get(item.category,
                                                    self.global_mean_)
                           for item in X])


class DiscountedNeighborBaseline(BaseEstimator, RegressorMixin):
    """Mean listing price of the K nearest catalog items, discounted."""

    def __init__(self, catalog=None, embeddings=None, embed_dim=300,
                 n_neighbors=32, discount_ratio=0.11):
        self.catalog = catalog
        self.embeddings = embeddings
        self.embed_dim = embed_dim
        self.n_neighbors = n_neighbors
        self.discount_ratio = discount_ratio

    def fit(self, X=None, y=None):
        self.featurizer_ = ItemFeaturizer(self.embeddings or {}, self.embed_dim)
        return self

    def predict(self, X):
        out = []
        for item in X:
            neighbors, _ = knn(item, self.catalog, self.n_neighbors,
                               self.featurizer_)
            mean_listing = float(np.mean([nb.listing_price for nb in neighbors]))
            out.append(mean_listing * (1.0 - self.discount_ratio))
        return np.asarray(out)
