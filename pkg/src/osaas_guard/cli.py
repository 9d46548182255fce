"""Command-line entry point: ``osaas-guard {generate,train,run,evaluate,report,replay}``.

Exit codes: 0 success, 2 usage or input error, 3 acceptance gate failed
(``evaluate --check`` / ``report --check``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from . import dataset as dataset_mod
from .closed_loop import default_policy, replay_stream, run_closed_loop
from .errors import OSaaSError
from .evaluation import read_csvs, report
from .evaluation import evaluate as evaluate_scenarios
from .pipeline import CONFIG_ENV, RunConfig, check_acceptance, load_models, train_users
from .scenario import Scenario, default_users
from .spectrum import slice_window
from .telemetry import read_replay, write_replay

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ACCEPTANCE = 3

log = logging.getLogger("osaas_guard")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    dataset, detector, policy = {}, {}, {}
    if getattr(args, "seed", None) is not None:
        dataset["seed"] = args.seed
        detector["random_state"] = args.seed
    if getattr(args, "window_len", None) is not None:
        dataset["window_len"] = args.window_len
    if getattr(args, "epochs", None) is not None:
        detector["epochs"] = args.epochs
    for name in ("p_alarm", "p_block"):
        if getattr(args, name, None) is not None:
            policy[name] = getattr(args, name)
    return cfg.with_overrides(dataset, detector, policy)


def _print_gates(gates) -> bool:
    for name, ok, detail in gates:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all(ok for _, ok, _ in gates)


def cmd_generate(args) -> int:
    cfg = _config(args)
    t0 = time.perf_counter()
    ds = dataset_mod.generate(cfg.dataset, args.out)
    sizes = ", ".join(f"{u} {ds.split(u, 'train').X.shape[0]}/{ds.split(u, 'test').X.shape[0]}"
                      for u in sorted(ds.users))
    print(f"{len(ds.scenarios)} scenarios -> {args.out} (train/test windows: {sizes}) "
          f"in {time.perf_counter() - t0:.1f} s")
    if ds.status != "ok":
        print(f"warning: dataset status {ds.status}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = dataset_mod.load(args.data)
    if args.window_len is not None and args.window_len != ds.spec.window_len:
        raise UsageError(f"--window-len {args.window_len} does not match the dataset's {ds.spec.window_len}")

    def progress(uid, epoch, loss):
        if args.verbose and (epoch % 10 == 0 or epoch == 1):
            print(f"{uid} epoch {epoch} loss {loss:.6f}", flush=True)

    t0 = time.perf_counter()
    models = train_users(ds, cfg.detector, args.out, users=args.users, resume_dir=args.resume,
                         on_epoch=progress)
    for uid, m in models.items():
        st = m.train_state
        print(f"{uid}: {st.epoch} epochs, final loss {st.loss_curve[-1]:.6f}"
              f"{' (early stop)' if st.stopped_early else ''}")
    print(f"checkpoints -> {args.out} in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    scenario = Scenario.load(args.scenario)
    models = load_models(args.models) if args.models else None
    policy = default_policy(scenario, **cfg.policy)
    evlog = run_closed_loop(scenario, models, policy, oracle=args.oracle)
    if args.log:
        evlog.write(args.log)
    if args.stream:
        write_replay(args.stream, evlog.stream_messages())
    for action in evlog.actions:
        detail = (f"slice {action.slice}" if action.slice is not None else
                  f"slices {list(action.slices)}" if action.slices else "all slices")
        db = f" {action.db:g} dB" if action.db is not None else ""
        print(f"t={action.timestamp:<4d}{action.user_id:<8} {action.kind:<15}{detail}{db}")
    print(f"{len(evlog.violations)} violations, {len(evlog.actions)} actions, "
          f"{len(evlog.commands)} commands over {scenario.duration} s")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ds = dataset_mod.load(args.data)
    models = load_models(args.models)
    scenarios = [sc for _, sc in ds.test_scenarios()]
    rep = evaluate_scenarios(models, scenarios, cfg.policy_config())
    paths = report(rep, args.out)
    for p in paths.values():
        print(f"wrote {p}")
    if args.check:
        return EXIT_OK if _print_gates(check_acceptance(rep)) else EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_report(args) -> int:
    rep = read_csvs(args.input)
    report(rep)
    if args.check:
        return EXIT_OK if _print_gates(check_acceptance(rep)) else EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    models = load_models(args.models) if args.models else {}
    users = default_users()
    policy = cfg.policy_config()
    evlog = replay_stream(read_replay(args.log), models, policy,
                          {u.user_id: slice_window(u.window) for u in users})
    if args.out:
        evlog.write(args.out)
    for action in evlog.actions:
        print(json.dumps(action.to_fields(), sort_keys=True))
    print(f"{len(evlog.telemetry)} ticks replayed, {len(evlog.actions)} actions")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="osaas-guard",
        description="OSaaS line simulator, OOK detector and SLA mitigation controller.")
    p.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def policy_flags(sp):
        sp.add_argument("--p-alarm", type=float)
        sp.add_argument("--p-block", type=float)

    g = sub.add_parser("generate", help="build the synthetic train/test corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--window-len", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit one detector per user")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="directory for checkpoints and training curves")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--window-len", type=int)
    t.add_argument("--users", nargs="+")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="run one scenario through the closed loop")
    r.add_argument("scenario")
    r.add_argument("--models", help="checkpoint directory (omit for power/PSD control only)")
    r.add_argument("--oracle", action="store_true", help="use ground-truth occupancy as detector output")
    r.add_argument("--log", help="write the event log (NDJSON)")
    r.add_argument("--stream", help="write the telemetry-plane traffic for replay (NDJSON)")
    policy_flags(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="score detectors and mitigation on the held-out scenarios")
    e.add_argument("--data", required=True)
    e.add_argument("--models", required=True)
    e.add_argument("--out", help="directory for the CSV files")
    e.add_argument("--check", action="store_true", help="exit 3 if an acceptance gate fails")
    policy_flags(e)
    e.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report", help="print a report from CSV files written by evaluate")
    rp.add_argument("input")
    rp.add_argument("--check", action="store_true")
    rp.set_defaults(func=cmd_report)

    rl = sub.add_parser("replay", help="re-feed a recorded telemetry stream through detectors and policy")
    rl.add_argument("log")
    rl.add_argument("--models")
    rl.add_argument("--out", help="write the resulting event log")
    policy_flags(rl)
    rl.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, OSaaSError, FileNotFoundError, NotADirectoryError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"osaas-guard {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
