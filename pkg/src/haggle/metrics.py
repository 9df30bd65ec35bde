"""Dialogue evaluation: BLEU over words and intents, diversity, pricing."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dialogue, detokenize
from .policy import Action, initial_price


@dataclass
class MetricReport:
    ibleu: float
    bleu: float
    sentence_diversity: float
    vocab_diversity: float
    avg_dialogue_length: float
    price_inconsistency_rate: float
    offer_inconsistency_rate: float
    human_divergence: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        rows = [
            ("IBLEU", f"{self.ibleu * 100:.2f}"),
            ("BLEU", f"{self.bleu * 100:.2f}"),
            ("Sentence Diversity", f"{self.sentence_diversity:.3f}"),
            ("Vocabulary Diversity", f"{self.vocab_diversity:.4f}"),
            ("Dialogue Length", f"{self.avg_dialogue_length:.1f}"),
            ("Inconsistency in Pricing", f"{self.price_inconsistency_rate:.0%}"),
            ("Inconsistency in Offering", f"{self.offer_inconsistency_rate:.0%}"),
            ("Human Divergence", f"${self.human_divergence:.0f}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


# ---------------------------------------------------------------------------
# clipped n-gram precision


def _ngrams(tokens, order):
    return Counter(tuple(tokens[i:i + order]) for i in range(len(tokens) - order + 1))


def bleu(hypotheses, references, max_order: int = 4, smooth: bool = True) -> float:
    """Corpus-level geometric mean of clipped n-gram precisions x brevity penalty.

    `references` holds, per hypothesis, either one token list or a list of
    alternatives. When any precision is zero and smoothing is on, add-one
    smoothing applies to every order above 1.
    """
    if not hypotheses or len(hypotheses) != len(references):
        raise ValueError("need aligned non-empty hypothesis/reference corpora")
    matches = np.zeros(max_order)
    totals = np.zeros(max_order)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if refs and isinstance(refs[0], str):
            refs = [refs]
        hyp_len += len(hyp)
        # closest reference length, ties toward the shorter
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for order in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, order)
            max_ref = Counter()
            for r in refs:
                for gram, count in _ngrams(r, order).items():
                    max_ref[gram] = max(max_ref[gram], count)
            matches[order - 1] += sum(min(c, max_ref[g])
                                      for g, c in hyp_counts.items())
            totals[order - 1] += sum(hyp_counts.values())
    if totals[0] == 0:
        return 0.0
    precisions = np.zeros(max_order)
    any_zero = any(totals[i] == 0 or matches[i] == 0 for i in range(max_order))
    for i in range(max_order):
        m, t = matches[i], totals[i]
        if smooth and any_zero and i > 0:
            m, t = m + 1.0, t + 1.0
        precisions[i] = m / t if t > 0 else 0.0
    if np.any(precisions == 0.0):
        return 0.0
    log_mean = float(np.mean(np.log(precisions)))
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / max(hyp_len, 1)))
    return float(np.exp(log_mean) * bp)


def intent_sequence(dialogue: Dialogue) -> list[str]:
    return [t.intent or "unknown" for t in dialogue.turns]


def ibleu(generated, human, max_order: int = 4, smooth: bool = True) -> float:
    """BLEU machinery over per-turn intent sequences, multi-reference by
    scenario; generated dialogues without a human reference are skipped."""
    refs_by_scenario: dict[str, list[list[str]]] = {}
    for d in human:
        refs_by_scenario.setdefault(d.scenario_id, []).append(intent_sequence(d))
    hyps = []
    refs = []
    skipped = 0
    for d in generated:
        scenario_refs = refs_by_scenario.get(d.scenario_id)
        if not scenario_refs:
            skipped += 1
            continue
        hyps.append(intent_sequence(d))
        refs.append(scenario_refs)
    if not hyps:
        raise ValueError(f"no generated dialogue has a human reference "
                         f"({skipped} skipped)")
    return bleu(hyps, refs, max_order=max_order, smooth=smooth)


# ---------------------------------------------------------------------------
# diversity and length


def diversity(dialogues) -> tuple[float, float]:
    """(distinct sentences / total sentences, distinct tokens / total tokens)."""
    sentences = []
    tokens = []
    for d in dialogues:
        for t in d.turns:
            if t.tokens:
                sentences.append(detokenize(t.tokens, t.price_values))
                tokens.extend(t.tokens)
    if not sentences:
        return 0.0, 0.0
    return (len(set(sentences)) / len(sentences),
            len(set(tokens)) / len(tokens) if tokens else 0.0)


def avg_dialogue_length(dialogues) -> float:
    if not dialogues:
        return 0.0
    return float(np.mean([len(d.turns) for d in dialogues]))


# ---------------------------------------------------------------------------
# pricing consistency


def _price_violations(dialogue: Dialogue, scenarios=None) -> bool:
    """True if any proposal regresses past the role's own prior price or
    crosses the opponent's standing proposal."""
    last_own: dict[str, float | None] = {"seller": None, "buyer": None}
    for t in dialogue.turns:
        price = t.last_price
        if price is None:
            continue
        role = t.speaker
        opp = "buyer" if role == "seller" else "seller"
        own_prev = last_own[role]
        opp_prev = last_own[opp]
        if role == "seller":
            if own_prev is not None and price > own_prev:
                return True
            if opp_prev is not None and price < opp_prev:
                return True
        else:
            if own_prev is not None and price < own_prev:
                return True
            if opp_prev is not None and price > opp_prev:
                return True
        last_own[role] = price
    return False


def price_inconsistency(dialogues) -> float:
    """Fraction of dialogues containing at least one pricing violation."""
    if not dialogues:
        return 0.0
    flagged = sum(1 for d in dialogues if _price_violations(d))
    return flagged / len(dialogues)


def _offer_violation(dialogue: Dialogue, scenario=None) -> bool:
    last_discussed: dict[str, float | None] = {"seller": None, "buyer": None}
    for t in dialogue.turns:
        if t.action == Action.OFFER:
            offered = t.event_price if t.event_price is not None else t.last_price
            if offered is None:
                continue
            prior = last_discussed[t.speaker]
            if prior is None:
                # no prior proposal: consistent iff it equals the role's
                # initial price (when the scenario is known), else consistent
                if scenario is not None and offered != initial_price(
                        t.speaker, scenario):
                    return True
                continue
            if offered != prior:
                return True
        price = t.last_price
        if price is not None:
            last_discussed[t.speaker] = price
    return False


def offer_inconsistency(dialogues, scenarios_by_id=None) -> float:
    """Fraction of dialogues whose formal offer differs from the offering
    role's last discussed proposal."""
    if not dialogues:
        return 0.0
    flagged = 0
    for d in dialogues:
        scenario = (scenarios_by_id or {}).get(d.scenario_id)
        if _offer_violation(d, scenario):
            flagged += 1
    return flagged / len(dialogues)


def human_divergence(dialogues, ground_truth: dict[str, float]) -> float:
    """Mean |agreed - human ground truth| over agreed dialogues."""
    gaps = []
    for d in dialogues:
        if not d.outcome.agreed:
            continue
        truth = ground_truth.get(d.scenario_id)
        if truth is None:
            raise KeyError(f"no ground-truth price for {d.scenario_id!r}")
        gaps.append(abs(d.outcome.price - truth))
    return float(np.mean(gaps)) if gaps else 0.0


def evaluate(generated, human, ground_truth: dict[str, float],
             scenarios_by_id=None) -> MetricReport:
    sent_div, vocab_div = diversity(generated)
    word_hyps = []
    word_refs = []
    refs_by_scenario: dict[str, list[list[str]]] = {}
    for d in human:
        refs_by_scenario.setdefault(d.scenario_id, []).append(
            [tok for t in d.turns for tok in t.tokens])
    for d in generated:
        if d.scenario_id in refs_by_scenario:
            word_hyps.append([tok for t in d.turns for tok in t.tokens])
            word_refs.append(refs_by_scenario[d.scenario_id])
    return MetricReport(
        ibleu=ibleu(generated, human),
        bleu=bleu(word_hyps, word_refs) if word_hyps else 0.0,
        sentence_diversity=sent_div,
        vocab_diversity=vocab_div,
        avg_dialogue_length=avg_dialogue_length(generated),
        price_inconsistency_rate=price_inconsistency(generated),
        offer_inconsistency_rate=offer_inconsistency(generated, scenarios_by_id),
        human_divergence=human_divergence(generated, ground_truth),
    )
