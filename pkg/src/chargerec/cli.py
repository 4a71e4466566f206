"""Command-line entry point: train, evaluate, gradcheck, simulate.

Exit codes: 0 ok, 1 verification failure, 2 configuration error,
3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

from .agents import BASELINE_KINDS, LEARNED_KINDS, POLICY_KINDS, AgentConfig, make_policy
from .config import RunConfig, preset
from .episode import day_of_week, run_episode
from .errors import CheckpointError, ConfigError, NumericAbort, ShapeError
from .mdp import EpisodeLedger
from .metrics import aggregate, compare_table, format_table, metrics_dict, pool, write_report
from .nn import backward, gradcheck_suite, load_checkpoint, save_checkpoint
from .training import run_training

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("chargerec")


# -- config plumbing -----------------------------------------------------------


def resolve_config(args) -> RunConfig:
    """Config file (or the bundled desk preset) with command-line overrides applied."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else preset("desk_train")
    if getattr(args, "policy", None) and args.policy in POLICY_KINDS:
        cfg.policy = args.policy
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "epochs", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    if getattr(args, "checkpoint", None):
        cfg.checkpoint = args.checkpoint[0] if isinstance(args.checkpoint, list) else args.checkpoint
    cfg.validate()
    return cfg


def _agent_config(hyper: dict, fallback: AgentConfig) -> AgentConfig:
    known = {f.name for f in dataclasses.fields(AgentConfig)}
    values = {k: v for k, v in hyper.items() if k in known}
    return dataclasses.replace(fallback, **values)


def load_trained_policy(path, kind: Optional[str], scenario, fallback: AgentConfig):
    """Rebuild a learned policy from its checkpoint; the checkpoint's kind must match ``kind``."""
    model_kind, nets, hyper = load_checkpoint(path)
    if kind is not None and model_kind != kind:
        raise ConfigError(f"checkpoint {path} holds a {model_kind!r} model, not {kind!r}")
    if model_kind not in LEARNED_KINDS:
        raise ConfigError(f"checkpoint {path}: unknown model kind {model_kind!r}")
    policy = make_policy(model_kind, scenario, _agent_config(hyper, fallback), zero=True)
    try:
        policy.load_nets(nets)
    except ShapeError as exc:
        raise ConfigError(f"checkpoint {path} does not fit scenario {scenario.name!r}: {exc}") from exc
    return policy


def _policy_for(kind: str, cfg: RunConfig, scenario, checkpoints: dict):
    if kind in BASELINE_KINDS:
        return make_policy(kind, scenario, cfg.agent)
    if kind not in checkpoints:
        raise ConfigError(f"policy {kind!r} is learned and needs --checkpoint")
    return load_trained_policy(checkpoints[kind], kind, scenario, cfg.agent)


# -- commands ------------------------------------------------------------------


def _write_learning_curve(result, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "seed", "reward", "inconvenience_min", "wait_min", "drive_min", "n_queries"])
        for epoch, seed, m in result.evaluations:
            w.writerow([epoch, "pooled" if seed is None else seed, repr(m.reward), repr(m.inconvenience_min),
                        repr(m.wait_min), repr(m.drive_min), m.n_queries])


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if cfg.policy not in LEARNED_KINDS:
        raise ConfigError(f"{cfg.policy!r} is rule-based; train one of {', '.join(LEARNED_KINDS)}")
    scenario = cfg.load_scenario()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    started = time.time()

    def progress(epoch, result):
        if result.evaluations and result.evaluations[-1][0] == epoch:
            m = result.evaluations[-1][2]
            log.info("epoch %d: test inconvenience %.2f min (wait %.2f, drive %.2f)", epoch + 1,
                     m.inconvenience_min, m.wait_min, m.drive_min)

    try:
        result = run_training(scenario, cfg.policy, cfg.schedule(), cfg.agent, out_dir=out, callback=progress)
    except NumericAbort as exc:
        print(f"numeric abort: {exc}; diagnostics in {exc.dump_path}", file=sys.stderr)
        return EXIT_NUMERIC
    (out / "metrics.csv").write_text(result.metrics_csv())
    _write_learning_curve(result, out / "learning_curve.csv")
    save_checkpoint(out / "checkpoint.json", cfg.policy, result.policy.nets, result.policy.hyperparameters())
    final = result.final_evaluation()
    if final is not None:
        write_report(compare_table({cfg.policy: final}), out)
        print(format_table(compare_table({cfg.policy: final})))
    print(f"trained {cfg.policy} for {cfg.train.epochs} epochs in {time.time() - started:.0f}s; artifacts in {out}")
    return EXIT_OK


def _evaluate_kinds(spec: str) -> list:
    """Expand ``all`` / ``baselines`` and comma lists into distinct policy kinds."""
    groups = {"all": POLICY_KINDS, "baselines": BASELINE_KINDS}
    kinds = []
    for token in (k.strip() for k in spec.split(",")):
        if not token:
            continue
        if token not in groups and token not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {token!r}; choose from {', '.join(POLICY_KINDS)}, baselines, all")
        for k in groups.get(token, (token,)):
            if k not in kinds:
                kinds.append(k)
    return kinds


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    scenario = cfg.load_scenario()
    checkpoints = {}
    for path in args.checkpoint or []:
        try:
            kind, _, _ = load_checkpoint(path)
        except CheckpointError as exc:
            raise ConfigError(str(exc)) from exc
        checkpoints[kind] = path
    kinds = _evaluate_kinds(args.policy or cfg.policy)
    if len(kinds) == 1 and args.checkpoint and kinds[0] not in checkpoints:
        raise ConfigError(f"checkpoint model kind {sorted(checkpoints)} does not match policy {kinds[0]!r}")
    seeds = list(cfg.train.test_seeds)
    pooled, per_seed_rows = {}, []
    for kind in kinds:
        policy = _policy_for(kind, cfg, scenario, checkpoints)
        per_seed = [aggregate(run_episode(scenario, policy, s).ledger, cfg.train.K, cfg.train.lam) for s in seeds]
        pooled[kind] = pool(per_seed)
        for s, m in zip(seeds, per_seed):
            row = compare_table({kind: m})[0]
            per_seed_rows.append({"policy": kind, "seed": s, **{k: v for k, v in row.items() if k != "policy"}})
        row = compare_table({kind: pooled[kind]})[0]
        per_seed_rows.append({"policy": kind, "seed": "pooled", **{k: v for k, v in row.items() if k != "policy"}})
    out = Path(cfg.out)
    rows = compare_table(pooled)
    write_report(rows, out, "report")
    write_report(per_seed_rows, out, "report_per_seed")
    print(format_table(rows))
    return EXIT_OK


def cmd_gradcheck(args, backward_fn=backward) -> int:
    started = time.time()
    res = gradcheck_suite(n_configs=args.configs, seed=args.seed, backward_fn=backward_fn)
    ok = res.passed(args.tol)
    print(f"gradcheck: {res.n_configs} networks, max relative error {res.max_rel_error:.3e} "
          f"(tolerance {args.tol:g}) in {time.time() - started:.1f}s")
    if not ok:
        print(f"FAIL worst offender: {json.dumps(res.worst)}")
        return EXIT_VERIFY
    print("PASS")
    return EXIT_OK


def simulate_trace(scenario, policy, seed: int, K: float = 10.0, lam: float = 1.0) -> dict:
    """Run one greedy episode and return a JSON-ready per-step trace."""
    result = run_episode(scenario, policy, seed, keep_accounts=True, track_occupancy=True)
    caps = scenario.capacities()
    steps = []
    for acct, open_now, queues in zip(result.accounts, result.open_chargers, result.waiting_counts):
        steps.append({
            "t": acct.t,
            "n_arrive": acct.n_arrive, "n_wait": acct.n_wait, "n_drive": acct.n_drive,
            "seated": list(acct.seated), "waiting": list(acct.waiting), "driving": list(acct.driving),
            "arrived": list(acct.arrived), "redirected": [list(r) for r in acct.redirected],
            "exogenous_arrivals": acct.exogenous_arrivals, "departures": acct.departures,
            "occupied": (caps - open_now).tolist(), "queue": list(queues),
        })
    decisions = [{"query_id": d.query_id, "t": d.t, "station": d.station} for d in result.decisions]
    return {
        "scenario": scenario.name,
        "policy": policy.kind,
        "seed": seed,
        "day_of_week": day_of_week(seed),
        "K": K,
        "lam": lam,
        "steps": steps,
        "ledger": result.ledger.to_trace(),
        "metrics": metrics_dict(aggregate(result.ledger, K, lam)),
    }


def replay_trace(trace: dict):
    """Recompute episode metrics from a trace alone."""
    return aggregate(EpisodeLedger.from_trace(trace["ledger"]), trace["K"], trace["lam"])


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    scenario = cfg.load_scenario()
    kind = args.policy or cfg.policy
    checkpoints = {kind: cfg.checkpoint} if cfg.checkpoint else {}
    policy = _policy_for(kind, cfg, scenario, checkpoints)
    trace = simulate_trace(scenario, policy, cfg.seed, cfg.train.K, cfg.train.lam)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"trace_{kind}_seed{cfg.seed}.json"
    path.write_text(json.dumps(trace) + "\n")
    m = trace["metrics"]
    print(f"{kind} seed {cfg.seed}: {m['n_queries']} queries, inconvenience {m['inconvenience_min']:.2f} min; "
          f"trace in {path}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chargerec", description="EV charging station recommendation experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy_help="policy kind"):
        p.add_argument("--config", help="run config JSON (default: bundled desk preset)")
        p.add_argument("--policy", help=policy_help)
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", parents=[verbose], help="train a learned policy")
    common(p, f"one of {', '.join(LEARNED_KINDS)}")
    p.add_argument("--epochs", type=int, help="override the number of epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[verbose], help="greedy evaluation on the test seeds")
    common(p, "a kind, a comma-separated list, 'baselines' or 'all'")
    p.add_argument("--checkpoint", action="append", help="trained model (repeat for several kinds)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", parents=[verbose], help="finite-difference check of backpropagation")
    p.add_argument("--configs", type=int, default=100, help="random networks to check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("simulate", parents=[verbose], help="run one episode and dump its per-step trace")
    common(p)
    p.add_argument("--checkpoint", help="trained model for learned kinds")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
