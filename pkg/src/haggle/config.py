"""Model and training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    embed_dim: int = 300          # shared text/history/decoder width
    visual_dim: int = 2048        # raw precomputed image feature length
    n_neighbors: int = 32         # catalog items retrieved per estimate
    max_utterance_len: int = 40
    n_price_buckets: int = 7
    n_attention_layers: int = 3
    n_rnn_layers: int = 2
    mlp_hidden: tuple[int, ...] = (128, 64, 32)
    dropout: float = 0.3
    sample_temperature: float = 0.5
    max_turns: int = 20
    seller_bottom_frac: float = 0.7   # seller's bottom line as a fraction of listing
    estimate_clamp: tuple[float, float] = (0.1, 2.0)  # times listing price
    grad_clip_norm: float = 5.0

    def __post_init__(self):
        if self.embed_dim <= 0 or self.visual_dim <= 0 or self.n_neighbors <= 0:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class TrainConfig:
    lr_initial: float = 1e-3
    lr_decayed: float = 1e-4
    epochs_initial: int = 20
    epochs_decayed: int = 320
    batch_size: int = 128
    dropout: float = 0.3
    rl_episodes: int = 5000
    rl_lr: float = 1e-4
    rl_baseline: bool = True      # running-mean reward baseline; off for plain REINFORCE
    seed: int = 0
    metrics_log: str | None = None

    def __post_init__(self):
        for name in ("lr_initial", "lr_decayed", "rl_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size <= 0 or self.rl_episodes < 0:
            raise ValueError("batch_size/rl_episodes must be positive")

    @property
    def total_epochs(self) -> int:
        return self.epochs_initial + self.epochs_decayed

    def lr_for_epoch(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.epochs_initial else self.lr_decayed
