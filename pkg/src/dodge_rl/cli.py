"""``dodge-rl`` command line: train, manager, worker, eval, gradcheck.

Exit codes: 0 ok, 1 usage or configuration error, 2 runtime error,
3 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import signal
import sys
import threading
from pathlib import Path

import numpy as np

from . import arena, metrics, nncore
from .agents import select_action
from .config import CONFIG_FIELDS, ConfigError, RunConfig, load_config
from .distrib import Manager, manager_loop, run_local, worker_loop
from .snapshot import SnapshotError, load_snapshot

log = logging.getLogger("dodge_rl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    group = p.add_argument_group("run configuration (overrides the config file)")
    for name, f in CONFIG_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, dest=name, nargs="?", const="true", default=None,
                               metavar="BOOL")
        else:
            group.add_argument(flag, dest=name, default=None, metavar=f.type.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dodge-rl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, text in (("train", "single-process training with an in-process worker"),
                       ("manager", "serve workers, train and publish models"),
                       ("worker", "generate samples for a manager")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        # workers need the step budget too: it sets their epsilon schedule
        p.add_argument("--steps", dest="total_training_steps", default=None,
                       help="alias for --total-training-steps")

    p = sub.add_parser("eval", help="evaluate a snapshot against one opponent level")
    p.add_argument("snapshot")
    p.add_argument("--level", type=int, default=9)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--record", default=None,
                   help="write the first episode's per-frame trajectory to this CSV file")

    p = sub.add_parser("gradcheck", help="finite-difference check of backprop for every head")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=30, help="random networks per head")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {name: getattr(args, name) for name in CONFIG_FIELDS
                 if getattr(args, name, None) is not None}
    return load_config(args.config, overrides)


def _prepare_run_dir(cfg: RunConfig) -> Path:
    run_dir = cfg.resolved_run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfg.to_text())
    return run_dir


def _final_eval(cfg: RunConfig, manager: Manager, run_dir: Path) -> metrics.EvalReport:
    report = metrics.evaluate(manager.ts.online, cfg.eval_level, cfg.eval_episodes,
                              seed=cfg.seed + 1, greedy=cfg.eval_greedy,
                              epsilon=cfg.eval_epsilon, config=cfg.eval_arena_config(),
                              cap=cfg.eval_episode_cap)
    report.write_csv(run_dir / "eval_report.csv")
    print(report.summary())
    return report


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    run_dir = _prepare_run_dir(cfg)
    marks = {int(cfg.total_training_steps * k / 10) for k in range(1, 11)}

    def progress(m: Manager):
        if m.step in marks:
            marks.discard(m.step)
            log.info("step %d, uploads %d, replay %d", m.step, m.uploads, len(m.replay))

    manager = run_local(cfg, run_dir, progress=progress)
    _final_eval(cfg, manager, run_dir)
    return EXIT_OK


def cmd_manager(args) -> int:
    cfg = _config_from_args(args)
    run_dir = _prepare_run_dir(cfg)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    manager = manager_loop(cfg, run_dir, stop=stop)
    log.info("manager stopped at step %d after %d uploads", manager.step, manager.uploads)
    return EXIT_OK


def cmd_worker(args) -> int:
    cfg = _config_from_args(args)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    code = worker_loop(cfg, stop=stop)
    return EXIT_OK if code == 0 else EXIT_RUNTIME


def _record_episode(path, net, level, seed, epsilon) -> None:
    rng = np.random.default_rng(seed)
    st = arena.reset(level, seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(arena.TRAJECTORY_COLUMNS)
        for _ in range(metrics.SURVIVAL_FRAMES):
            a = select_action(net, arena.encode_state(st), epsilon, rng)
            nxt, r, term = arena.step(st, a)
            w.writerow(arena.trajectory_row(nxt, a, r, term))
            st = nxt
            if term:
                break


def cmd_eval(args) -> int:
    net, kind, step = load_snapshot(args.snapshot)
    report = metrics.evaluate(net, args.level, args.episodes, seed=args.seed,
                              greedy=args.greedy, epsilon=args.epsilon)
    run_dir = RunConfig(run_dir=args.run_dir or "").resolved_run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(run_dir / "eval_report.csv")
    print(f"snapshot {args.snapshot} ({kind.value}, step {step}) vs level {args.level}")
    print(report.summary())
    if args.record:
        _record_episode(args.record, net, args.level, args.seed, 0.0 if args.greedy else args.epsilon)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = nncore.gradient_check_suite(args.seed, args.configs)
    worst = max(results.values())
    for head, err in results.items():
        print(f"{head:<13} max relative error {err:.3e}")
    ok = worst < GRADCHECK_TOLERANCE
    print(f"overall       max relative error {worst:.3e} ({'ok' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "train": cmd_train,
    "manager": cmd_manager,
    "worker": cmd_worker,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"dodge-rl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dodge-rl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SnapshotError, OSError, RuntimeError, ValueError) as exc:
        print(f"dodge-rl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
