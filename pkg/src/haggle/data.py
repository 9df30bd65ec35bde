"""Corpus ingestion: scenarios, dialogues, catalog, tokenization, labeling.

Utterances are tokenized with *price abstraction*: every detected price
numeral is replaced by the ``<price>`` sentinel and its numeric value is
kept alongside, in order. Currency-prefixed numerals always count as
prices; bare numerals only when they fall within 0.2x-2x of the listing
price (so "3 bedrooms" stays a word).
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .policy import Action, N_ACTIONS, N_RATIOS, RatioClass, concession_range, \
    initial_price, nearest_ratio_class

CATEGORIES = ("bike", "car", "electronics", "furniture", "housing", "phone")

PRICE_TOKEN = "<price>"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
END_TOKEN = "<end>"

ROLES = ("seller", "buyer")

INTENTS = ("intro", "inquiry", "inform", "propose-price", "counter-price",
           "agree", "offer", "accept", "reject", "quit", "unknown")


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class InvariantError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class NoAgreementError(CorpusError):
    pass


# ---------------------------------------------------------------------------
# domain records


@dataclass
class Scenario:
    id: str
    image_features: np.ndarray
    category: str
    title: list[str]
    description: list[str]
    listing_price: float
    seller_bottom: float
    buyer_target: float

    def validate(self):
        if self.category not in CATEGORIES:
            raise InvariantError(f"unknown category {self.category!r}")
        for name in ("listing_price", "seller_bottom", "buyer_target"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvariantError(f"{name} must be positive finite, got {v}")
        if self.buyer_target >= self.listing_price:
            raise InvariantError("buyer_target must be below listing_price")
        if self.seller_bottom >= self.listing_price:
            raise InvariantError("seller_bottom must be below listing_price")
        if not np.all(np.isfinite(self.image_features)):
            raise InvariantError("image_features contain non-finite values")


@dataclass
class CatalogItem:
    id: str
    image_features: np.ndarray
    category: str
    title: list[str]
    description: list[str]
    listing_price: float

    def validate(self):
        if self.category not in CATEGORIES:
            raise InvariantError(f"unknown category {self.category!r}")
        if not np.isfinite(self.listing_price) or self.listing_price <= 0:
            raise InvariantError("listing_price must be positive finite")
        if np.any(np.isnan(self.image_features)):
            raise InvariantError("image_features contain NaN")


@dataclass
class TurnRecord:
    speaker: str
    tokens: list[str]
    price_values: list[float] = field(default_factory=list)
    action: Action | None = None
    ratio_class: RatioClass | None = None
    intent: str | None = None
    event_price: float | None = None  # price carried by an offer event

    def validate(self):
        if self.speaker not in ROLES:
            raise InvariantError(f"unknown speaker {self.speaker!r}")
        if self.tokens.count(PRICE_TOKEN) != len(self.price_values):
            raise InvariantError("price sentinel count != recorded price count")

    @property
    def has_price(self) -> bool:
        return bool(self.price_values) or self.event_price is not None

    @property
    def last_price(self) -> float | None:
        if self.event_price is not None:
            return self.event_price
        return self.price_values[-1] if self.price_values else None


@dataclass
class Outcome:
    agreed: bool
    price: float | None = None
    turns: int = 0
    ended_by: str = ""

    def validate(self):
        if self.agreed != (self.price is not None):
            raise InvariantError("agreed outcomes must carry a price, others none")


@dataclass
class Dialogue:
    scenario_id: str
    turns: list[TurnRecord]
    outcome: Outcome

    def validate(self):
        for prev, cur in zip(self.turns, self.turns[1:]):
            if prev.speaker == cur.speaker:
                raise InvariantError("turns must alternate speakers")
        terminal = [t for t in self.turns
                    if t.action in (Action.ACCEPT, Action.REJECT, Action.QUIT)]
        if len(terminal) > 1:
            raise InvariantError("at most one terminal turn allowed")
        for t in self.turns:
            t.validate()
        self.outcome.validate()


# ---------------------------------------------------------------------------
# tokenization with price abstraction

_CURRENCY_RE = re.compile(r"\$\s?(\d[\d,]*(?:\.\d+)?)")
_BARE_NUMBER_RE = re.compile(r"(?<![\w$.])(\d[\d,]*(?:\.\d+)?)(?![\w,.]\d|\d)")
_TOKEN_RE = re.compile(r"<price>|[a-z0-9']+|[^\sa-z0-9']")
_NUMERAL_TOKEN_RE = re.compile(r"^\$?\d[\d,]*(?:\.\d+)?$")


def _parse_amount(text: str) -> float:
    return float(text.replace(",", ""))


def tokenize_with_price_abstraction(text: str, listing_price: float,
                                    max_len: int = 40):
    """Lowercase tokenization with price numerals abstracted to a sentinel.

    Returns (tokens, price_values) where the i-th value belongs to the i-th
    sentinel. Bare numerals are treated as prices only inside
    [0.2, 2.0] x listing_price.
    """
    if not text:
        raise ValueError("empty utterance")
    lowered = text.lower()
    prices: list[float] = []
    combined = re.compile(
        r"\$\s?(\d[\d,]*(?:\.\d+)?)|(?<![\w$.])(\d[\d,]*(?:\.\d+)?)(?![\w,.]\d|\d)")

    def combined_sub(m: re.Match) -> str:
        if m.group(1) is not None:
            prices.append(_parse_amount(m.group(1)))
            return f" {PRICE_TOKEN} "
        value = _parse_amount(m.group(2))
        if 0.2 * listing_price <= value <= 2.0 * listing_price:
            prices.append(value)
            return f" {PRICE_TOKEN} "
        return m.group(0)

    replaced = combined.sub(combined_sub, lowered)
    tokens = _TOKEN_RE.findall(replaced)
    if len(tokens) > max_len:
        kept = tokens[:max_len]
        prices = prices[:kept.count(PRICE_TOKEN)]
        tokens = kept
    return tokens, prices


def format_price(value: float) -> str:
    if float(value).is_integer():
        return f"${int(value)}"
    return f"${value:.2f}"


def detokenize(tokens: list[str], price_values: list[float] | None = None) -> str:
    """Join tokens into a string, substituting sentinel prices in order."""
    out = []
    values = list(price_values or [])
    for tok in tokens:
        if tok == PRICE_TOKEN and values:
            out.append(format_price(values.pop(0)))
        else:
            out.append(tok)
    return " ".join(out)


def is_price_like(token: str) -> bool:
    return bool(_NUMERAL_TOKEN_RE.match(token))


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Token-index map with fixed reserved tokens at the lowest indices.

    Numeric price-like tokens are never admitted, so the decoder cannot
    produce a price the policy did not set.
    """

    def __init__(self, tokens=()):
        self.reserved = [PAD_TOKEN, UNK_TOKEN, END_TOKEN, PRICE_TOKEN]
        self.reserved += [f"<{role}:{action.wire_name}>"
                          for role in ROLES for action in Action]
        self._index = {tok: i for i, tok in enumerate(self.reserved)}
        self._tokens = list(self.reserved)
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self._index:
            return self._index[token]
        if is_price_like(token):
            raise InvariantError(f"price-like token {token!r} not allowed in vocabulary")
        idx = len(self._tokens)
        self._index[token] = idx
        self._tokens.append(token)
        return idx

    @classmethod
    def build(cls, dialogues, scenarios=(), min_count: int = 1) -> "Vocabulary":
        counts = Counter()
        for d in dialogues:
            for t in d.turns:
                counts.update(t.tokens)
        for s in scenarios:
            counts.update(s.title)
            counts.update(s.description)
        vocab = cls()
        for tok, n in sorted(counts.items()):
            if n >= min_count and not is_price_like(tok):
                vocab.add(tok)
        return vocab

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, self._index[UNK_TOKEN])

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens) -> list[int]:
        return [self.index(t) for t in tokens]

    def start_token(self, role: str, action: Action) -> str:
        return f"<{role}:{action.wire_name}>"

    @property
    def pad(self): return self._index[PAD_TOKEN]

    @property
    def unk(self): return self._index[UNK_TOKEN]

    @property
    def end(self): return self._index[END_TOKEN]

    @property
    def price(self): return self._index[PRICE_TOKEN]


# ---------------------------------------------------------------------------
# jsonl loaders


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=line_no) from exc


def _as_tokens(value) -> list[str]:
    if isinstance(value, str):
        return value.lower().split()
    return [str(v).lower() for v in value]


def load_scenarios(path) -> list[Scenario]:
    scenarios = []
    for line_no, rec in _read_jsonl(path):
        try:
            s = Scenario(
                id=str(rec["id"]),
                image_features=np.asarray(rec["image_features"], dtype=np.float64),
                category=rec["category"],
                title=_as_tokens(rec["title"]),
                description=_as_tokens(rec["description"]),
                listing_price=float(rec["listing_price"]),
                seller_bottom=float(rec["seller_bottom"]),
                buyer_target=float(rec["buyer_target"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed scenario record: {exc}", line=line_no)
        try:
            s.validate()
        except InvariantError as exc:
            raise InvariantError(str(exc), line=line_no)
        scenarios.append(s)
    return scenarios


def load_catalog(path) -> list[CatalogItem]:
    items = []
    for line_no, rec in _read_jsonl(path):
        try:
            item = CatalogItem(
                id=str(rec["id"]),
                image_features=np.asarray(rec["image_features"], dtype=np.float64),
                category=rec["category"],
                title=_as_tokens(rec["title"]),
                description=_as_tokens(rec["description"]),
                listing_price=float(rec["listing_price"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed catalog record: {exc}", line=line_no)
        try:
            item.validate()
        except InvariantError as exc:
            raise InvariantError(str(exc), line=line_no)
        items.append(item)
    return items


_EVENT_ACTIONS = {"offer": Action.OFFER, "accept": Action.ACCEPT,
                  "reject": Action.REJECT, "quit": Action.QUIT}


def load_dialogues(path, scenarios: dict[str, Scenario],
                   max_len: int = 40) -> list[Dialogue]:
    """Load raw dialogues, tokenize with price abstraction, derive labels."""
    dialogues = []
    for line_no, rec in _read_jsonl(path):
        try:
            scenario = scenarios[rec["scenario_id"]]
        except KeyError:
            raise ParseError(f"unknown scenario_id {rec.get('scenario_id')!r}",
                             line=line_no)
        turns = []
        try:
            for raw in rec["turns"]:
                text = raw.get("text", "")
                if text:
                    tokens, prices = tokenize_with_price_abstraction(
                        text, scenario.listing_price, max_len=max_len)
                else:
                    tokens, prices = [], []
                event = raw.get("event") or {}
                action = _EVENT_ACTIONS.get(event.get("type"))
                turns.append(TurnRecord(
                    speaker=raw["speaker"],
                    tokens=tokens,
                    price_values=prices,
                    action=action,
                    event_price=(float(event["price"])
                                 if event.get("price") is not None else None),
                ))
            out = rec["outcome"]
            outcome = Outcome(
                agreed=bool(out["agreed"]),
                price=float(out["price"]) if out.get("price") is not None else None,
                turns=len(turns),
                ended_by=(turns[-1].action.wire_name
                          if turns and turns[-1].action else "exhausted"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed dialogue record: {exc}", line=line_no)
        dialogue = Dialogue(scenario_id=rec["scenario_id"], turns=turns,
                            outcome=outcome)
        derive_labels(dialogue, scenario)
        try:
            dialogue.validate()
        except InvariantError as exc:
            raise InvariantError(str(exc), line=line_no)
        dialogues.append(dialogue)
    return dialogues


def load_embeddings(path) -> dict[str, np.ndarray]:
    """GloVe text layout: token then whitespace-separated decimals."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            try:
                table[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad embedding row: {exc}", line=line_no)
    return table


# ---------------------------------------------------------------------------
# derived labels, ground truth, intents


def derive_labels(dialogue: Dialogue, scenario: Scenario):
    """Fill action/ratio/intent labels on human turns.

    The dataset carries explicit offer/accept/reject/quit events; for other
    turns we call a move toward the opponent Concede (ratio snapped to the
    0.2 grid), anything else Negotiate.
    """
    own_price = {role: initial_price(role, scenario) for role in ROLES}
    prev_turn: TurnRecord | None = None
    for turn in dialogue.turns:
        role = turn.speaker
        opponent = "buyer" if role == "seller" else "seller"
        price = turn.last_price
        if turn.action is None:
            if price is not None:
                prev = own_price[role]
                toward = (price < prev) if role == "seller" else (price > prev)
                if toward:
                    turn.action = Action.CONCEDE
                else:
                    turn.action = Action.NEGOTIATE
            else:
                turn.action = Action.NEGOTIATE
        if turn.action in (Action.CONCEDE, Action.OFFER) and price is not None:
            span = concession_range(role, scenario)
            if span > 0:
                frac = abs(price - own_price[role]) / span
                turn.ratio_class = nearest_ratio_class(min(frac, 1.0))
            else:
                turn.ratio_class = RatioClass.R0
        if price is not None:
            own_price[role] = price
        turn.intent = extract_intent(turn, prev_turn, scenario)
        prev_turn = turn


def ground_truth_price(scenario_id: str, dialogues) -> float:
    """Mean agreed price over the item's human dialogues."""
    agreed = [d.outcome.price for d in dialogues
              if d.scenario_id == scenario_id and d.outcome.agreed]
    if not agreed:
        raise NoAgreementError(f"no agreed dialogues for scenario {scenario_id!r}")
    return float(np.mean(agreed))


_GREETING_WORDS = {"hello", "hi", "hey", "howdy", "greetings"}
_AGREEMENT_WORDS = {"deal", "agree", "agreed", "ok", "okay", "sure", "sold"}


def extract_intent(turn: TurnRecord, prev_turn: TurnRecord | None,
                   scenario: Scenario) -> str:
    """Deterministic rule-based intent label for a tokenized turn."""
    if turn.action == Action.OFFER:
        return "offer"
    if turn.action == Action.ACCEPT:
        return "accept"
    if turn.action == Action.REJECT:
        return "reject"
    if turn.action == Action.QUIT:
        return "quit"
    tokens = turn.tokens
    has_price = PRICE_TOKEN in tokens
    if has_price:
        if prev_turn is not None and prev_turn.has_price:
            return "counter-price"
        return "propose-price"
    token_set = set(tokens)
    if token_set & _GREETING_WORDS:
        return "intro"
    if "?" in token_set:
        return "inquiry"
    if token_set & _AGREEMENT_WORDS:
        return "agree"
    if any(tok.isalpha() for tok in tokens):
        return "inform"
    return "unknown"


def class_frequencies(dialogues):
    """Counts per action class and per ratio class over labeled turns."""
    action_hist = np.zeros(N_ACTIONS, dtype=np.int64)
    ratio_hist = np.zeros(N_RATIOS, dtype=np.int64)
    for d in dialogues:
        for t in d.turns:
            if t.action is not None:
                action_hist[int(t.action)] += 1
            if t.ratio_class is not None:
                ratio_hist[int(t.ratio_class)] += 1
    return action_hist, ratio_hist


def dialogue_to_record(dialogue: Dialogue) -> dict:
    """Serialize to the on-disk dialogue schema (transcripts round-trip)."""
    turns = []
    for t in dialogue.turns:
        raw: dict = {"speaker": t.speaker,
                     "text": detokenize(t.tokens, t.price_values)}
        if t.action in _EVENT_ACTIONS.values() and t.action is not None:
            event: dict = {"type": t.action.wire_name}
            if t.action == Action.OFFER and t.event_price is not None:
                event["price"] = t.event_price
            raw["event"] = event
        turns.append(raw)
    outcome: dict = {"agreed": dialogue.outcome.agreed}
    if dialogue.outcome.price is not None:
        outcome["price"] = dialogue.outcome.price
    return {"scenario_id": dialogue.scenario_id, "turns": turns,
            "outcome": outcome}


def save_dialogues(dialogues, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_record(d)) + "\n")
