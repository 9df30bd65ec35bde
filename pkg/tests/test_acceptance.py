"""Acceptance gate: ten checks covering gradients, price machinery,
structural consistency, valuation ordering, RL direction, metric fidelity,
language-model sanity, the copy guarantee, determinism, and protocol replay.

Each check prints one PASS/FAIL line. Heavy artifacts (trained models,
transcript pools) are built once per module and shared.
"""

import time

import numpy as np
import pytest

from haggle.autodiff import Tensor
from haggle.config import TrainConfig
from haggle.data import CatalogItem, Dialogue, Outcome, PRICE_TOKEN, Scenario, \
    TurnRecord, Vocabulary, derive_labels, detokenize, is_price_like
from haggle.encoding import HistoryEncoder, PriceFrame, WordEncoder, \
    normalize_price, price_bucket
from haggle.layers import embedding_table
from haggle.metrics import bleu, diversity, human_divergence, ibleu, \
    offer_inconsistency, price_inconsistency
from haggle.params import Adam, ParameterStore, check_gradients
from haggle.policy import Action, ActionPredictor, PriceAdjuster, RatioClass, \
    adjust_price, concession_range
from haggle.service import SessionManager, replay_log
from haggle.session import selfplay
from haggle.textgen import Decoder, build_attention_memory
from haggle.training import RunningMean, train_heads_stage, \
    train_language_stage, train_rl, train_value_stage
from haggle.value import CategoryAveragingBaseline, DiscountedNeighborBaseline, \
    MatchingNetwork, MultimodalEmbedder, OnlineValueEstimator

from conftest import ACCEPTANCE_REPORT, make_catalog, make_model, \
    make_scenarios, scripted_dialogue, small_config, true_value


def report(number: int, name: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] acceptance {number} ({name}): {detail}"
    print("\n" + line)
    ACCEPTANCE_REPORT.append(line)
    assert ok, f"acceptance {number} ({name}): {detail}"


# ---------------------------------------------------------------------------
# shared artifacts


TRANSCRIPT_POOL: list[Dialogue] = []   # filled by checks 3, 5, 7; read by 8


def _toy_language_corpus(scenarios):
    openers = [["hi", "is", "it", "available", "?"],
               ["hello", "interested", "in", "the", "item"],
               ["hi", "how", "firm", "is", "the", "price", "?"],
               ["hello", "can", "you", "do", "lower", "?"]]
    replies = [["yes", "great", "condition", "."],
               ["it", "is", "available", "yes", "."],
               ["the", "price", "is", "firm", "."],
               ["i", "can", "do", "a", "deal", "."]]
    asks = [["would", "you", "take", PRICE_TOKEN, "?"],
            ["how", "about", PRICE_TOKEN, "?"],
            ["i", "can", "offer", PRICE_TOKEN, "."],
            ["best", "i", "can", "do", "is", PRICE_TOKEN, "."]]
    closes = [["can", "do", PRICE_TOKEN, "."],
              ["ok", PRICE_TOKEN, "works", "for", "me", "."],
              ["sounds", "good", "deal", "."],
              ["that", "works", "thanks", "."]]
    dialogues = []
    for i, s in enumerate(scenarios):
        p1 = round(0.8 * s.listing_price, 2)
        p2 = round(0.85 * s.listing_price, 2)
        closing = closes[i % 4]
        turns = [
            TurnRecord("buyer", list(openers[i % 4])),
            TurnRecord("seller", list(replies[(i + 1) % 4])),
            TurnRecord("buyer", list(asks[(i + 2) % 4]), price_values=[p1]),
            TurnRecord("seller", list(closing),
                       price_values=[p2] if PRICE_TOKEN in closing else []),
        ]
        d = Dialogue(s.id, turns, Outcome(agreed=False, turns=4,
                                          ended_by="exhausted"))
        derive_labels(d, s)
        dialogues.append(d)
    return dialogues


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_acceptance_1_gradient_correctness():
    t0 = time.time()
    worst = {}

    def tiny_item(rng, visual_dim, price=120.0):
        return CatalogItem(id="q", image_features=rng.normal(size=visual_dim),
                           category="bike", title=["hello"],
                           description=["deal"], listing_price=price)

    for trial in range(5):
        rng = np.random.default_rng(1000 + trial)
        d = 3 + trial % 2
        visual = 2 + trial % 2
        vocab = Vocabulary(["hello", "deal", "good", "item"])
        query = tiny_item(rng, visual)
        neighbors = [tiny_item(rng, visual, 80.0 + 20 * i) for i in range(2)]

        # multimodal embedder
        store = ParameterStore()
        table = embedding_table(store, "tok", len(vocab), d, rng)
        emb = MultimodalEmbedder(store, "e", visual, d, table, vocab, rng)
        err = check_gradients(lambda: (emb(query) * emb(query)).sum() * 0.1,
                              store)
        worst["embedder"] = max(worst.get("embedder", 0.0), err)

        # matching network including the discount map
        store = ParameterStore()
        table = embedding_table(store, "tok", len(vocab), d, rng)
        net = MatchingNetwork(store, "m", visual, d, table, vocab, rng)
        err = check_gradients(lambda: net.forward(query, neighbors)[0] * 0.01,
                              store)
        worst["matching"] = max(worst.get("matching", 0.0), err)

        # word + history encoders
        store = ParameterStore()
        table = embedding_table(store, "tok", len(vocab), d, rng)
        word = WordEncoder(store, "w", d, table, vocab, rng)
        hist = HistoryEncoder(store, "h", d, rng)
        seed_vec = rng.normal(size=(1, d))

        def enc_loss():
            turns = [word.encode(["hello", "deal"]), word.encode(["good"])]
            out = hist.encode(turns, Tensor(seed_vec))
            return (out * out).sum()

        err = check_gradients(enc_loss, store)
        worst["encoders"] = max(worst.get("encoders", 0.0), err)

        # decoder with attention
        store = ParameterStore()
        table = embedding_table(store, "tok", len(vocab), d, rng)
        word = WordEncoder(store, "w", d, table, vocab, rng)
        hist = HistoryEncoder(store, "h", d, rng)
        dec = Decoder(store, "d", d, vocab, table, rng, max_len=6)

        def dec_loss():
            mem = build_attention_memory(word, ["hello"], [], ["good"])
            init = hist.final_state([word.encode(["item"])], Tensor(seed_vec))
            return dec.teacher_forced_nll(["deal", "."], init, mem,
                                          "buyer", Action.NEGOTIATE)

        err = check_gradients(dec_loss, store)
        worst["decoder"] = max(worst.get("decoder", 0.0), err)

        # both decision heads
        store = ParameterStore()
        ap = ActionPredictor(store, 10, (5, 4, 3), rng)
        pa = PriceAdjuster(store, 10, (5, 4, 3), rng)
        state = rng.normal(size=(1, 10))

        def head_loss():
            a = ap.logits(Tensor(state)).log_softmax()
            r = pa.logits(Tensor(state), Action.CONCEDE).log_softmax()
            return -a[:, 2:3] - r[:, 1:2]

        err = check_gradients(head_loss, store)
        worst["heads"] = max(worst.get("heads", 0.0), err)

    elapsed = time.time() - t0
    max_err = max(worst.values())
    report(1, "gradient correctness",
           max_err <= 1e-4 and elapsed < 120,
           f"max relative error {max_err:.2e} over 5 configs/block "
           f"({', '.join(f'{k}={v:.1e}' for k, v in worst.items())}), "
           f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. price machinery


def test_acceptance_2_price_machinery():
    t0 = time.time()
    s1000 = Scenario(
        id="p", image_features=np.zeros(8), category="bike", title=["x"],
        description=["y"], listing_price=1000.0, seller_bottom=700.0,
        buyer_target=700.0)

    checks = [
        # normalize_price hand value: seller, listing 100, p=84 -> 0.4667
        abs(normalize_price(84.0, PriceFrame("seller", 100.0, 70.0))
            - 0.4667) < 1e-4,
        price_bucket(normalize_price(84.0, PriceFrame("seller", 100.0, 70.0))) == 3,
        # bucket hand example (5, 0, 4)
        price_bucket(1.0) == 5,
        price_bucket((500.0 - 700.0) / 300.0) == 0,
        price_bucket((890.0 - 700.0) / 300.0) == 4,
        # concession ranges
        concession_range("seller", s1000) == pytest.approx(300.0),
        concession_range("buyer", s1000) == pytest.approx(300.0),
        # adjust_price hand values
        adjust_price("seller", 1000.0, RatioClass.R20, s1000) == pytest.approx(940.0),
        adjust_price("buyer", 700.0, RatioClass.R40, s1000) == pytest.approx(820.0),
    ]

    rng = np.random.default_rng(0)
    xs = np.sort(rng.uniform(-2.0, 3.0, size=10_000))
    buckets = [price_bucket(x) for x in xs]
    monotone = all(a <= b for a, b in zip(buckets, buckets[1:]))

    elapsed = time.time() - t0
    report(2, "price machinery",
           all(checks) and monotone and elapsed < 30,
           f"{len(checks)} hand-derived checks, bucket monotone over 10^4 "
           f"sorted samples, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. structural consistency


def test_acceptance_3_structural_consistency():
    t0 = time.time()
    scenarios = make_scenarios(20, seed=31)
    by_id = {s.id: s for s in scenarios}
    model = make_model(small_config(embed_dim=8, n_neighbors=3),
                       catalog=make_catalog(12, seed=1), seed=3)
    dialogues = []
    for run in range(10):
        for s in scenarios:
            d, _, _ = selfplay(s, model, max_turns=3 + run,
                               mode="greedy",
                               first_mover="buyer" if run % 2 else "seller")
            dialogues.append(d)
    assert len(dialogues) == 200
    price_rate = price_inconsistency(dialogues)
    offer_rate = offer_inconsistency(dialogues, by_id)
    TRANSCRIPT_POOL.extend(dialogues)
    elapsed = time.time() - t0
    report(3, "structural consistency",
           price_rate == 0.0 and offer_rate == 0.0 and elapsed < 60,
           f"200 greedy self-plays: price inconsistency {price_rate:.0%}, "
           f"offer inconsistency {offer_rate:.0%}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. valuation ordering


def test_acceptance_4_valuation_ordering():
    t0 = time.time()
    catalog = make_catalog(200, seed=0)
    train = make_scenarios(40, seed=100)
    test = make_scenarios(40, seed=200)
    y_train = [true_value(s) for s in train]
    y_test = np.array([true_value(s) for s in test])

    ove = OnlineValueEstimator(catalog=catalog, embed_dim=8, visual_dim=8,
                               n_neighbors=16, epochs=60, lr=1e-2, seed=0)
    ove.fit(train, y_train)
    err_ove = float(np.mean(np.abs(ove.predict(test) - y_test)))

    oknn = DiscountedNeighborBaseline(catalog=catalog, embed_dim=8,
                                      n_neighbors=16).fit()
    err_knn = float(np.mean(np.abs(oknn.predict(test) - y_test)))

    avg = CategoryAveragingBaseline().fit(train, y_train)
    err_avg = float(np.mean(np.abs(avg.predict(test) - y_test)))

    elapsed = time.time() - t0
    ordered = err_ove < 0.95 * err_knn and err_knn < 0.95 * err_avg
    report(4, "valuation ordering",
           ordered and elapsed < 300,
           f"mean abs divergence OVE ${err_ove:.0f} < O-KNN ${err_knn:.0f} "
           f"< averaging ${err_avg:.0f} (gaps "
           f"{1 - err_ove / err_knn:.0%}/{1 - err_knn / err_avg:.0%}), "
           f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 5. RL direction


def test_acceptance_5_rl_direction():
    t0 = time.time()

    # two-action bandit sanity world on the same primitives
    store = ParameterStore()
    logits = store.add("logits", np.zeros((1, 2)))
    optimizer = Adam(store, lr=0.05)
    baseline = RunningMean()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        lp = logits.log_softmax()
        probs = np.exp(lp.data[0])
        action = int(rng.choice(2, p=probs))
        r = 1.0 if action == 0 else 0.0
        advantage = r - baseline.value
        baseline.update(r)
        store.zero_grad()
        (lp[:, action:action + 1] * (-advantage)).backward()
        optimizer.step()
    bandit_mass = float(np.exp(logits.log_softmax().data[0, 0]))

    # toy negotiation world: supervised warm start, then REINFORCE
    config = small_config(embed_dim=8, n_neighbors=3, max_turns=8)
    scenarios = make_scenarios(6, seed=2)
    by_id = {s.id: s for s in scenarios}
    model = make_model(config, catalog=make_catalog(12, seed=1), seed=0)
    dialogues = [scripted_dialogue(s) for s in scenarios]
    tc = TrainConfig(seed=0, batch_size=8)
    train_value_stage(model, scenarios, dialogues, tc, epochs=60)
    train_language_stage(model, by_id, dialogues,
                         TrainConfig(seed=0, batch_size=8, dropout=0.0,
                                     lr_initial=5e-3, epochs_initial=10_000),
                         epochs=150)
    train_heads_stage(model, by_id, dialogues, tc, epochs=100)

    def mean_gap():
        gaps = []
        pool = []
        for i in range(60):
            s = scenarios[i % len(scenarios)]
            d, o, _ = selfplay(s, model, max_turns=8, mode="sample",
                               seed=900000 + i)
            pool.append(d)
            if o.agreed:
                estimate, _ = model.estimate(s)
                gaps.append(abs(o.price - estimate))
        TRANSCRIPT_POOL.extend(pool)
        return (float(np.mean(gaps)) if gaps else float("inf")), len(gaps)

    pre_gap, pre_agreed = mean_gap()
    train_rl(model, scenarios, TrainConfig(seed=0, rl_lr=1e-3),
             episodes=2000, max_turns=8)
    post_gap, post_agreed = mean_gap()

    elapsed = time.time() - t0
    improved = post_gap <= 0.95 * pre_gap
    report(5, "RL direction",
           bandit_mass > 0.99 and improved and elapsed < 600,
           f"bandit mass {bandit_mass:.4f}; mean |agreed - estimate| "
           f"${pre_gap:.0f} ({pre_agreed}/60 agreed) -> ${post_gap:.0f} "
           f"({post_agreed}/60 agreed), {1 - post_gap / pre_gap:.0%} decrease, "
           f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. metric fidelity


def test_acceptance_6_metric_fidelity():
    hyp = "the cat sat on the mat".split()
    ref = "the cat is on the mat".split()
    hand = (5 / 6 * 4 / 6 * 2 / 5 * 1 / 4) ** 0.25

    scenario = make_scenarios(1, seed=0)[0]
    d = scripted_dialogue(scenario)
    div_dialogue = Dialogue("x", [
        TurnRecord("buyer", ["a"]), TurnRecord("seller", ["b"]),
        TurnRecord("buyer", ["a"]), TurnRecord("seller", ["c"]),
    ], Outcome(agreed=False))
    agreed = Dialogue("x", [], Outcome(agreed=True, price=90.0))

    checks = [
        abs(bleu([hyp], [hyp]) - 1.0) < 1e-6,                     # identity
        bleu([list("abcd")], [list("wxyz")]) == 0.0,              # disjoint
        abs(bleu([hyp], [ref]) - hand) < 1e-6,                    # hand counts
        bleu([hyp], [ref], smooth=False) == 0.0,
        abs(ibleu([d], [d]) - 1.0) < 1e-6,
        diversity([div_dialogue])[0] == 0.75,
        price_inconsistency([div_dialogue]) == 0.0,
        human_divergence([agreed], {"x": 100.0}) == 10.0,
    ]
    report(6, "metric fidelity", all(checks),
           f"{len(checks)} identity/disjoint/hand-count checks at 1e-6")


# ---------------------------------------------------------------------------
# 7. language-model sanity


def test_acceptance_7_language_model_sanity():
    t0 = time.time()
    config = small_config(embed_dim=16, n_neighbors=3, max_utterance_len=12)
    catalog = make_catalog(10, seed=1)
    scenarios = make_scenarios(20, seed=2)
    by_id = {s.id: s for s in scenarios}

    # a fresh decoder with a zeroed generative layer is exactly uniform
    probe = make_model(config, catalog=catalog, seed=0)
    probe.store["decoder.gen.w"].data[:] = 0.0
    probe.store["decoder.gen.b"].data[:] = 0.0
    init = probe.history_encoder.final_state([], Tensor(np.zeros((1, 16))))
    nll = probe.decoder.teacher_forced_nll(
        ["hello", "deal"], init, Tensor(np.zeros((1, 16))),
        "seller", Action.NEGOTIATE)
    uniform_ok = abs(nll.item() - np.log(len(probe.vocab))) < 1e-6

    # overfit a separate untouched model on the toy corpus
    model = make_model(config, catalog=catalog, seed=0)
    dialogues = _toy_language_corpus(scenarios)
    tc = TrainConfig(seed=0, batch_size=4, dropout=0.0, lr_initial=5e-3,
                     epochs_initial=10_000)
    curve = train_language_stage(model, by_id, dialogues, tc, epochs=140)

    total = hits = 0
    generated = []
    for d in dialogues:
        s = by_id[d.scenario_id]
        seed = model.history_seed(s)
        turn_vecs = model.turn_vectors(d.turns)
        out_turns = []
        for t, turn in enumerate(d.turns):
            if not turn.tokens:
                continue
            init = model.history_encoder.final_state(turn_vecs[:t], seed)
            prev = d.turns[t - 1].tokens if t else []
            memory = build_attention_memory(model.word_encoder, s.title,
                                            s.description, prev)
            out = model.decoder.decode(init, memory, turn.speaker,
                                       turn.action or Action.NEGOTIATE,
                                       mode="greedy")
            total += 1
            hits += (out == turn.tokens)
            out_turns.append(TurnRecord(turn.speaker, out,
                                        price_values=[100.0] * out.count(PRICE_TOKEN)))
        generated.append(Dialogue(d.scenario_id, out_turns,
                                  Outcome(agreed=False)))
    TRANSCRIPT_POOL.extend(generated)

    elapsed = time.time() - t0
    report(7, "language-model sanity",
           uniform_ok and curve[-1] < 0.5 and hits / total >= 0.8
           and elapsed < 600,
           f"fresh NLL = ln|V| ok; overfit NLL {curve[-1]:.3f} < 0.5; "
           f"verbatim {hits}/{total} = {hits / total:.0%}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. copy guarantee


def test_acceptance_8_copy_guarantee():
    assert TRANSCRIPT_POOL, "transcript pool filled by checks 3, 5, 7"
    sentinels = 0
    numeric = 0
    utterances = 0
    for d in TRANSCRIPT_POOL:
        for t in d.turns:
            utterances += 1
            rendered = detokenize(t.tokens, t.price_values)
            sentinels += rendered.count(PRICE_TOKEN)
            # every numeric token must come from copy substitution ($-form),
            # never from the decoder vocabulary
            for tok in t.tokens:
                if tok != PRICE_TOKEN and is_price_like(tok):
                    numeric += 1
    report(8, "copy guarantee", sentinels == 0 and numeric == 0,
           f"{len(TRANSCRIPT_POOL)} transcripts / {utterances} utterances: "
           f"{sentinels} sentinels, {numeric} decoder-produced price tokens")


# ---------------------------------------------------------------------------
# 9. determinism


def test_acceptance_9_determinism(tmp_path):
    def run(tag):
        config = small_config(embed_dim=8, n_neighbors=3, max_turns=8)
        scenarios = make_scenarios(4, seed=2)
        by_id = {s.id: s for s in scenarios}
        model = make_model(config, catalog=make_catalog(10, seed=1), seed=0)
        dialogues = [scripted_dialogue(s) for s in scenarios]
        tc = TrainConfig(seed=0, batch_size=4)
        train_value_stage(model, scenarios, dialogues, tc, epochs=5)
        train_heads_stage(model, by_id, dialogues, tc, epochs=5)
        train_rl(model, scenarios, TrainConfig(seed=0, rl_lr=1e-3),
                 episodes=20, max_turns=6)
        path = tmp_path / f"{tag}.npz"
        model.save(path)
        transcripts = []
        for s in scenarios:
            d, o, _ = selfplay(s, model, max_turns=8, mode="greedy")
            transcripts.append(([t.tokens for t in d.turns],
                                [t.price_values for t in d.turns],
                                o.ended_by, o.price))
        return model.store.digest(), path.read_bytes(), transcripts

    digest1, bytes1, transcripts1 = run("one")
    digest2, bytes2, transcripts2 = run("two")
    report(9, "determinism",
           digest1 == digest2 and bytes1 == bytes2
           and transcripts1 == transcripts2,
           "two fixed-seed train+self-play runs: checkpoints and transcripts "
           "bit-identical")


# ---------------------------------------------------------------------------
# 10. protocol replay


def test_acceptance_10_protocol_replay(tmp_path):
    scenarios = make_scenarios(10, seed=5)
    by_id = {s.id: s for s in scenarios}
    model = make_model(small_config(embed_dim=8, n_neighbors=3),
                       catalog=make_catalog(10, seed=1), seed=1)
    log = tmp_path / "sessions.jsonl"
    manager = SessionManager(model, by_id, log_path=log, max_turns=8)

    outcomes = {}
    rejected = 0
    for i in range(50):
        scenario = scenarios[i % len(scenarios)]
        role = "buyer" if i % 2 == 0 else "seller"
        sid, _ = manager.create_session(scenario.id, role, seed=i)
        # one deliberately illegal message per session must be rejected
        out = manager.handle_message(sid, {"type": "accept"}) \
            if manager.phase_key(sid) == "open" else \
            manager.handle_message(sid, {"type": "utterance", "text": "x"})
        if out and out[0]["type"] == "error":
            rejected += 1
        live = manager._live(sid).session
        steps = 0
        while not live.terminal and steps < 20:
            key = manager.phase_key(sid)
            if key == "offer_pending_opponent":
                msg = {"type": "accept"} if i % 3 else {"type": "reject"}
            elif key == "open":
                if steps >= 2:
                    msg = {"type": "offer",
                           "price": round(0.8 * scenario.listing_price, 2)}
                else:
                    msg = {"type": "utterance",
                           "text": f"how about ${round(0.75 * scenario.listing_price, 2)}"}
            else:
                msg = {"type": "quit"}
            manager.handle_message(sid, msg)
            steps += 1
        if not live.terminal:
            manager.handle_message(sid, {"type": "quit"})
        outcomes[sid] = {"phase": live.phase,
                         "agreed": live.outcome().agreed,
                         "price": live.outcome().price}

    replayed = replay_log(log, by_id, max_turns=8)
    matches = sum(1 for sid, ref in outcomes.items() if replayed.get(sid) == ref)
    report(10, "protocol replay",
           matches == 50 and rejected == 50,
           f"{matches}/50 replayed sessions match live outcomes; "
           f"{rejected}/50 illegal messages rejected per phase table")
