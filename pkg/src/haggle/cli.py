"""Command-line entry points for training, evaluation, and serving."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import CorpusError, Vocabulary, ground_truth_price, load_catalog, \
    load_dialogues, load_embeddings, load_scenarios, NoAgreementError, \
    save_dialogues
from .metrics import evaluate
from .model import NegotiationModel
from .service import HUMAN_LEGAL_MESSAGES, Rating, SessionManager
from .session import selfplay
from .training import MetricsLog, train_rl, train_supervised, train_value_stage

log = logging.getLogger("haggle")


def _add_data_args(p: argparse.ArgumentParser, need_dialogues=True):
    p.add_argument("--scenarios", required=True, help="scenarios jsonl")
    p.add_argument("--catalog", required=True, help="catalog jsonl")
    if need_dialogues:
        p.add_argument("--dialogues", required=True, help="dialogues jsonl")
    p.add_argument("--embeddings", help="pretrained word vectors (text layout)")


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("--embed-dim", type=int, default=300)
    p.add_argument("--visual-dim", type=int, default=2048)
    p.add_argument("--neighbors", type=int, default=32)
    p.add_argument("--hidden", type=int, nargs=3, default=(128, 64, 32),
                   metavar=("H1", "H2", "H3"))
    p.add_argument("--max-turns", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", required=True, help="npz parameter file")


def _build_model(args, dialogues=()):
    scenarios = load_scenarios(args.scenarios)
    catalog = load_catalog(args.catalog)
    scenarios_by_id = {s.id: s for s in scenarios}
    loaded_dialogues = (load_dialogues(args.dialogues, scenarios_by_id)
                        if getattr(args, "dialogues", None) else list(dialogues))
    vocab = Vocabulary.build(loaded_dialogues, scenarios)
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    config = ModelConfig(embed_dim=args.embed_dim, visual_dim=args.visual_dim,
                         n_neighbors=args.neighbors,
                         mlp_hidden=tuple(args.hidden),
                         max_turns=args.max_turns)
    model = NegotiationModel(config, vocab, catalog, embeddings=embeddings,
                             seed=args.seed)
    return model, scenarios, scenarios_by_id, loaded_dialogues


def _train_config(args) -> TrainConfig:
    return TrainConfig(seed=args.seed)


def cmd_train_ove(args) -> int:
    model, scenarios, _, dialogues = _build_model(args)
    mlog = MetricsLog(args.metrics_log)
    curve = train_value_stage(model, scenarios, dialogues, _train_config(args),
                              epochs=args.epochs, log=mlog)
    model.save(args.checkpoint)
    log.info("value stage final L1 loss: %.4f", curve[-1])
    print(f"final L1 loss {curve[-1]:.4f}; checkpoint -> {args.checkpoint}")
    return 0


def cmd_train_sl(args) -> int:
    model, scenarios, _, dialogues = _build_model(args)
    mlog = MetricsLog(args.metrics_log)
    curves = train_supervised(model, scenarios, dialogues, _train_config(args),
                              value_epochs=args.value_epochs,
                              language_epochs=args.language_epochs,
                              head_epochs=args.head_epochs, log=mlog)
    model.save(args.checkpoint)
    print(f"value {curves['value'][-1]:.4f}  language {curves['language'][-1]:.4f}"
          f"  heads {curves['heads'][-1]:.4f}; checkpoint -> {args.checkpoint}")
    return 0


def cmd_train_rl(args) -> int:
    model, scenarios, _, _ = _build_model(args)
    model.load(args.checkpoint)
    mlog = MetricsLog(args.metrics_log)
    config = _train_config(args)
    rewards = train_rl(model, scenarios, config, episodes=args.episodes,
                       log=mlog)
    out = args.out_checkpoint or args.checkpoint
    model.save(out)
    tail = rewards[-100:]
    print(f"mean reward (last {len(tail)}): {float(np.mean(tail)):.4f}; "
          f"checkpoint -> {out}")
    return 0


def cmd_selfplay(args) -> int:
    model, scenarios, _, _ = _build_model(args)
    model.load(args.checkpoint)
    dialogues = []
    for i in range(args.episodes):
        scenario = scenarios[i % len(scenarios)]
        dialogue, outcome, _ = selfplay(scenario, model,
                                        max_turns=args.max_turns,
                                        mode=args.mode,
                                        seed=args.seed + i)
        dialogues.append(dialogue)
        print(f"{scenario.id}: {outcome.ended_by} "
              f"({outcome.turns} turns"
              f"{f', ${outcome.price:g}' if outcome.price is not None else ''})")
    if args.out:
        save_dialogues(dialogues, args.out)
        print(f"wrote {len(dialogues)} transcripts -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, scenarios, scenarios_by_id, human = _build_model(args)
    model.load(args.checkpoint)
    generated = load_dialogues(args.generated, scenarios_by_id)
    truth = {}
    for s in scenarios:
        try:
            truth[s.id] = ground_truth_price(s.id, human)
        except NoAgreementError:
            continue
    report = evaluate(generated, human, truth, scenarios_by_id)
    if args.json:
        print(report.to_json())
    else:
        print(report.table())
    return 0


def cmd_estimate(args) -> int:
    model, _, scenarios_by_id, _ = _build_model(args)
    model.load(args.checkpoint)
    scenario = scenarios_by_id.get(args.scenario_id)
    if scenario is None:
        print(f"unknown scenario {args.scenario_id!r}", file=sys.stderr)
        return 1
    estimate, _ = model.estimate(scenario)
    print(f"listing ${scenario.listing_price:g}  estimate ${estimate:.2f}  "
          f"discount {1 - estimate / scenario.listing_price:.1%}")
    if args.explain:
        neighbors = model.neighbors(scenario)
        _, weights, _ = model.matcher.forward(scenario, neighbors)
        for item, weight in sorted(zip(neighbors, weights),
                                   key=lambda p: -p[1]):
            print(f"  {weight:6.3f}  {item.id}  ${item.listing_price:g}  "
                  f"{' '.join(item.title)}")
    return 0


def _manager(args) -> SessionManager:
    model, _, scenarios_by_id, _ = _build_model(args)
    model.load(args.checkpoint)
    return SessionManager(model, scenarios_by_id, log_path=args.session_log,
                          max_turns=args.max_turns,
                          idle_timeout=args.idle_timeout)


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    app = create_app(_manager(args))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_chat(args) -> int:
    manager = _manager(args)
    session_id, initial = manager.create_session(args.scenario_id, args.role)
    scenario = manager.scenarios_by_id[args.scenario_id]
    print(f"negotiating {' '.join(scenario.title)} "
          f"(listed ${scenario.listing_price:g}) as {args.role}")
    print("commands: /offer <price>, /accept, /reject, /quit")
    for msg in initial:
        _print_wire(msg)
    while not manager._live(session_id).session.terminal:
        legal = HUMAN_LEGAL_MESSAGES[manager.phase_key(session_id)]
        try:
            line = input(f"[{'|'.join(legal)}] > ").strip()
        except EOFError:
            line = "/quit"
        if not line:
            continue
        if line.startswith("/offer"):
            parts = line.split()
            if len(parts) != 2:
                print("usage: /offer <price>")
                continue
            message = {"type": "offer", "price": float(parts[1])}
        elif line in ("/accept", "/reject", "/quit"):
            message = {"type": line[1:]}
        else:
            message = {"type": "utterance", "text": line}
        for msg in manager.handle_message(session_id, message):
            _print_wire(msg)
    while True:
        try:
            raw = input("rate the agent 1-5 (likeness language pricing): ").strip()
        except EOFError:
            return 0
        parts = raw.split()
        if len(parts) == 3 and all(p.isdigit() for p in parts):
            manager.submit_rating(session_id,
                                  Rating(*[int(p) for p in parts]))
            print("thanks!")
            return 0
        print("enter three integers 1..5")


def _print_wire(msg: dict):
    mtype = msg["type"]
    if mtype == "utterance":
        print(f"agent: {msg.get('text', '')}")
    elif mtype == "offer":
        print(f"agent offers ${msg['price']:g}")
    elif mtype == "outcome":
        if msg.get("agreed"):
            print(f"deal at ${msg['price']:g}")
        else:
            print(f"no deal ({msg.get('ended_by')})")
    elif mtype == "error":
        print(f"error: {msg.get('detail')}")
    else:
        print(f"agent: {mtype}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="haggle",
                                     description="price negotiation agent")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ove", help="train the value estimator")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--metrics-log")
    p.set_defaults(func=cmd_train_ove)

    p = sub.add_parser("train-sl", help="staged supervised training")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--value-epochs", type=int, default=None)
    p.add_argument("--language-epochs", type=int, default=50)
    p.add_argument("--head-epochs", type=int, default=100)
    p.add_argument("--metrics-log")
    p.set_defaults(func=cmd_train_sl)

    p = sub.add_parser("train-rl", help="self-play fine-tuning of the heads")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out-checkpoint")
    p.add_argument("--metrics-log")
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("selfplay", help="generate self-play transcripts")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--out", help="write transcripts jsonl here")
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("eval", help="score generated dialogues")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--generated", required=True, help="generated dialogues jsonl")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("estimate", help="estimate one item's value")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--scenario-id", required=True)
    p.add_argument("--explain", action="store_true",
                   help="show neighbor attention weights")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("serve", help="run the HTTP/WebSocket gateway")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--session-log", default="sessions.jsonl")
    p.add_argument("--idle-timeout", type=float, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("chat", help="negotiate with the agent in the terminal")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--scenario-id", required=True)
    p.add_argument("--role", choices=("buyer", "seller"), default="buyer")
    p.add_argument("--session-log", default=None)
    p.add_argument("--idle-timeout", type=float, default=None)
    p.set_defaults(func=cmd_chat)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
