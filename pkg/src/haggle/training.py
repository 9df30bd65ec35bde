"""Losses, class weighting, staged supervised training, and self-play RL.

Supervised training is stage-wise: (1) the value estimator on absolute
price error, (2) encoders + decoder jointly on teacher-forced NLL,
(3) both decision heads on weighted cross-entropy over frozen dialogue
states. RL then fine-tunes only the two heads from self-play episodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, dropout
from .config import TrainConfig
from .data import class_frequencies, ground_truth_price, NoAgreementError
from .encoding import PriceFrame, assemble_state
from .params import Adam, clip_grad_norm
from .policy import Action, N_ACTIONS, N_RATIOS, PRICED_ACTIONS, initial_price
from .session import other, reward, selfplay
from .textgen import build_attention_memory


def loss_ove(estimates, targets) -> float:
    """Mean absolute error between estimates and ground-truth agreed prices."""
    estimates = np.asarray(estimates, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return float(np.mean(np.abs(estimates - targets)))


def class_weights(frequencies) -> np.ndarray:
    """Inverse-sqrt-frequency weights rescaled to sum to the class count."""
    freqs = np.asarray(frequencies, dtype=np.float64)
    raw = np.where(freqs > 0, 1.0 / np.sqrt(np.maximum(freqs, 1e-12)), 1.0)
    return raw * (len(raw) / raw.sum())


def weighted_ce(logits: Tensor, true_class: int, weights: np.ndarray) -> Tensor:
    """w_c * negative log-softmax probability of the true class."""
    log_probs = logits.log_softmax()
    return -log_probs[:, true_class:true_class + 1] * float(weights[true_class])


class MetricsLog:
    """CSV training log: one row per epoch/episode."""

    def __init__(self, path=None):
        self.path = path
        self.rows = []
        if path:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(["stage", "step", "loss", "reward_mean"])

    def record(self, stage: str, step: int, loss: float, reward_mean: float = float("nan")):
        self.rows.append((stage, step, loss, reward_mean))
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([stage, step, f"{loss:.6f}",
                                         f"{reward_mean:.6f}"])


def _batches(items, size, rng=None):
    order = list(range(len(items)))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), size):
        yield [items[i] for i in order[start:start + size]]


# ---------------------------------------------------------------------------
# stage 1: value estimator


def train_value_stage(model, scenarios, dialogues, config: TrainConfig,
                      epochs: int | None = None, log: MetricsLog | None = None):
    """L1 regression of the matching network onto mean human agreed prices."""
    targets = []
    items = []
    for s in scenarios:
        try:
            targets.append(ground_truth_price(s.id, dialogues))
            items.append(s)
        except NoAgreementError:
            continue
    if not items:
        raise ValueError("no scenario has an agreed dialogue to learn from")
    neighbor_sets = [model.neighbors(s) for s in items]
    optimizer = Adam(model.store, lr=config.lr_initial)
    epochs = epochs if epochs is not None else config.total_epochs
    curve = []
    for epoch in range(epochs):
        optimizer.lr = config.lr_for_epoch(epoch)
        model.store.zero_grad()
        total = None
        for item, neighbors, target in zip(items, neighbor_sets, targets):
            est, _, _ = model.matcher.forward(item, neighbors)
            err = (est - Tensor([[target]])).abs()
            total = err if total is None else total + err
        loss = total * (1.0 / len(items))
        loss.backward()
        optimizer.step()
        curve.append(loss.item())
        if log:
            log.record("value", epoch, curve[-1])
    model.invalidate_estimates()
    return curve


# ---------------------------------------------------------------------------
# stage 2: encoders + decoder


def _language_examples(model, scenarios_by_id, dialogues):
    for d in dialogues:
        scenario = scenarios_by_id[d.scenario_id]
        yield scenario, d


def train_language_stage(model, scenarios_by_id, dialogues,
                         config: TrainConfig, epochs: int = 50,
                         log: MetricsLog | None = None):
    """Joint teacher-forced NLL over every non-empty turn, both roles."""
    optimizer = Adam(model.store, lr=config.lr_initial)
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng(config.seed + 3)
    curve = []
    pairs = list(_language_examples(model, scenarios_by_id, dialogues))
    for epoch in range(epochs):
        optimizer.lr = config.lr_for_epoch(epoch)
        epoch_nll = 0.0
        n_turns = 0
        for batch in _batches(pairs, config.batch_size, rng):
            model.store.zero_grad()
            total = None
            batch_turns = 0
            for scenario, dialogue in batch:
                seed = model.history_seed(scenario)
                turn_vecs = [dropout(v, config.dropout, drop_rng, True)
                             for v in model.turn_vectors(dialogue.turns)]
                for t, turn in enumerate(dialogue.turns):
                    if not turn.tokens:
                        continue
                    init_state = model.history_encoder.final_state(
                        turn_vecs[:t], seed)
                    prev_tokens = dialogue.turns[t - 1].tokens if t else []
                    memory = build_attention_memory(
                        model.word_encoder, scenario.title,
                        scenario.description, prev_tokens)
                    nll = model.decoder.teacher_forced_nll(
                        turn.tokens, init_state, memory, turn.speaker,
                        turn.action if turn.action is not None
                        else Action.NEGOTIATE)
                    total = nll if total is None else total + nll
                    batch_turns += 1
            if total is None:
                continue
            loss = total * (1.0 / batch_turns)
            loss.backward()
            clip_grad_norm(model.store, model.config.grad_clip_norm)
            optimizer.step()
            epoch_nll += loss.item() * batch_turns
            n_turns += batch_turns
        curve.append(epoch_nll / max(n_turns, 1))
        if log:
            log.record("language", epoch, curve[-1])
    return curve


# ---------------------------------------------------------------------------
# stage 3: decision heads on frozen states


@dataclass
class HeadExample:
    state: np.ndarray
    action: Action
    ratio: int | None


def build_head_examples(model, scenarios_by_id, dialogues) -> list[HeadExample]:
    """Replay dialogues into frozen (state, action, ratio) training triples."""
    examples = []
    for d in dialogues:
        scenario = scenarios_by_id[d.scenario_id]
        estimate, _ = model.estimate(scenario)
        seed = model.history_seed(scenario)
        turn_vecs = model.turn_vectors(d.turns)
        proposals = {role: initial_price(role, scenario)
                     for role in ("seller", "buyer")}
        for t, turn in enumerate(d.turns):
            if turn.action is None:
                continue
            role = turn.speaker
            frame = PriceFrame.for_role(role, scenario,
                                        model.config.seller_bottom_frac)
            history = model.history_encoder.encode(turn_vecs[:t], seed)
            state = assemble_state(Tensor(history.data.copy()),
                                   proposals[role], proposals[other(role)],
                                   estimate, frame)
            examples.append(HeadExample(
                state=state.vector().data.copy(), action=turn.action,
                ratio=(int(turn.ratio_class)
                       if turn.ratio_class is not None
                       and turn.action in PRICED_ACTIONS else None)))
            price = turn.last_price
            if price is not None:
                proposals[role] = price
    return examples


def train_heads_stage(model, scenarios_by_id, dialogues, config: TrainConfig,
                      epochs: int = 100, log: MetricsLog | None = None):
    """Weighted cross-entropy on both heads; encoders and estimator frozen."""
    action_hist, ratio_hist = class_frequencies(dialogues)
    action_w = class_weights(action_hist)
    ratio_w = class_weights(ratio_hist)
    examples = build_head_examples(model, scenarios_by_id, dialogues)
    if not examples:
        raise ValueError("no labeled turns to train the decision heads on")
    optimizer = Adam(model.store, lr=config.lr_initial)
    rng = np.random.default_rng(config.seed + 1)
    drop_rng = np.random.default_rng(config.seed + 2)
    curve = []
    for epoch in range(epochs):
        optimizer.lr = config.lr_for_epoch(epoch)
        epoch_loss = 0.0
        n = 0
        for batch in _batches(examples, config.batch_size, rng):
            model.store.zero_grad()
            total = None
            for ex in batch:
                state = Tensor(ex.state)
                logits = model.action_predictor.logits(state, rng=drop_rng,
                                                       training=True)
                term = weighted_ce(logits, int(ex.action), action_w)
                if ex.ratio is not None:
                    r_logits = model.price_adjuster.logits(
                        state, ex.action, rng=drop_rng, training=True)
                    term = term + weighted_ce(r_logits, ex.ratio, ratio_w)
                total = term if total is None else total + term
            loss = total * (1.0 / len(batch))
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(batch)
            n += len(batch)
        curve.append(epoch_loss / max(n, 1))
        if log:
            log.record("heads", epoch, curve[-1])
    return curve


def train_supervised(model, scenarios, dialogues, config: TrainConfig,
                     value_epochs=None, language_epochs=50, head_epochs=100,
                     log: MetricsLog | None = None):
    """All three stages in order; returns the per-stage loss curves."""
    scenarios_by_id = {s.id: s for s in scenarios}
    curves = {
        "value": train_value_stage(model, scenarios, dialogues, config,
                                   epochs=value_epochs, log=log),
        "language": train_language_stage(model, scenarios_by_id, dialogues,
                                         config, epochs=language_epochs,
                                         log=log),
        "heads": train_heads_stage(model, scenarios_by_id, dialogues, config,
                                   epochs=head_epochs, log=log),
    }
    curves["total"] = (curves["value"][-1] + curves["language"][-1]
                       + curves["heads"][-1])
    return curves


# ---------------------------------------------------------------------------
# RL fine-tuning of the two heads


@dataclass
class RunningMean:
    total: float = 0.0
    count: int = 0

    @property
    def value(self) -> float:
        return self.total / self.count if self.count else 0.0

    def update(self, x: float):
        self.total += x
        self.count += 1


def train_rl(model, scenarios, config: TrainConfig,
             episodes: int | None = None, max_turns: int | None = None,
             log: MetricsLog | None = None):
    """REINFORCE over self-play episodes, updating only the decision heads.

    Advantage is episode reward minus a running-mean baseline (disable via
    config.rl_baseline for the plain estimator).
    """
    episodes = episodes if episodes is not None else config.rl_episodes
    max_turns = max_turns if max_turns is not None else model.config.max_turns
    optimizer = Adam(model.store, lr=config.rl_lr)
    baseline = RunningMean()
    rewards = []
    for episode in range(episodes):
        scenario = scenarios[episode % len(scenarios)]
        dialogue, outcome, decisions = selfplay(
            scenario, model, max_turns=max_turns, mode="sample",
            seed=config.seed * 1_000_003 + episode, keep_log_probs=True)
        estimate, _ = model.estimate(scenario)
        r = reward(outcome, estimate, scenario.listing_price)
        advantage = r - baseline.value if config.rl_baseline else r
        baseline.update(r)
        rewards.append(r)

        log_prob_terms = []
        for decision in decisions:
            if decision.action_log_prob is not None:
                log_prob_terms.append(decision.action_log_prob)
            if decision.ratio_log_prob is not None:
                log_prob_terms.append(decision.ratio_log_prob)
        if not log_prob_terms or advantage == 0.0:
            if log:
                log.record("rl", episode, 0.0, float(np.mean(rewards)))
            continue
        model.store.zero_grad()
        total = log_prob_terms[0]
        for term in log_prob_terms[1:]:
            total = total + term
        # gradient ascent on advantage-weighted log-likelihood
        (total * (-advantage)).backward()
        optimizer.step()
        if log:
            log.record("rl", episode, -advantage * total.item(),
                       float(np.mean(rewards)))
    return rewards
