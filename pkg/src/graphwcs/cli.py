"""Command line: train, eval, transfer, proptest and report.

Exit codes: 0 success, 1 usage, 2 configuration, 3 property failure,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import baselines, evaluation, policy, proptest, report, trainer
from .env import NumericalAbort
from .scenarios import ConfigError, ScenarioConfig, format_config, load_config, make_environment

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_PROPERTY, EXIT_NUMERICAL = 0, 1, 2, 3, 4

TRANSFER_HEADER = ("m",) + evaluation.EVAL_HEADER
DAGGER_HEADER = ("iteration", "loss", "dataset_size")

log = logging.getLogger("graphwcs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return vals


def _name_list(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [n for n in names if n not in baselines.BASELINES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown baseline(s) {', '.join(bad)}; choose from {', '.join(baselines.BASELINES)}")
    return names


def build_parser():
    p = _Parser(prog="graphwcs", description="Graph RL resource allocation for wireless control systems.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="flat key = value scenario file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--no-plots", action="store_true", help="write CSVs only")

    t = sub.add_parser("train", help="DAgger warm start then primal-dual PPO")
    common(t)
    t.add_argument("--no-dagger", action="store_true")
    t.add_argument("--undiscounted-dual", action="store_true")
    t.add_argument("--timing", action="store_true", help="record wall time per episode (breaks byte reproducibility)")

    e = sub.add_parser("eval", help="evaluate a checkpoint and baselines")
    common(e)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--baselines", type=_name_list, default=list(baselines.BASELINES))
    e.add_argument("--reps", type=int, default=None)

    tr = sub.add_parser("transfer", help="evaluate one checkpoint on larger networks")
    common(tr, config_required=False)
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--sizes", type=_int_list, required=True)
    tr.add_argument("--baselines", type=_name_list, default=["random_access", "control_aware", "equal_power"])
    tr.add_argument("--reps", type=int, default=None)

    pt = sub.add_parser("proptest", help="run randomized property suites")
    pt.add_argument("--suite", choices=proptest.SUITES + ("all",), default="all")
    pt.add_argument("--trials", type=int, default=None)
    pt.add_argument("--seed", type=int, default=0)

    rp = sub.add_parser("report", help="render figures for existing CSV files")
    rp.add_argument("csv", nargs="+")
    return p


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig.defaults("transfer", m=20)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "undiscounted_dual", False):
        cfg.undiscounted_dual = True
    if getattr(args, "reps", None) is not None:
        if args.reps < 1:
            raise UsageError("--reps must be positive")
        cfg.reps = args.reps
    cfg.validate()
    return cfg


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plot(args, path, plotter, rows, **kw):
    if args.no_plots:
        return
    plotter([[report.fmt(v) for v in r] for r in rows], path.with_suffix(".png"), **kw)


def cmd_train(args):
    cfg = _config(args)
    out = _outdir(args)
    env = make_environment(cfg)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    res = trainer.train(cfg, env, dagger=not args.no_dagger, timing=args.timing,
                        on_episode=lambda row: log.debug("episode %d cost %.4g constraint %.4g", *row[:2], row[3]))
    policy.save_checkpoint(out / "checkpoint.txt", res.actor, res.critic)
    path = report.write_csv(out / "train.csv", trainer.LOG_HEADER, res.log)
    _plot(args, path, report.plot_training, res.log, budget=0.05 * cfg.m * cfg.p0 if cfg.constraint else None)
    if res.dagger is not None:
        rows = [(i, l, n) for i, (l, n) in enumerate(zip(res.dagger.losses, res.dagger.dataset_sizes))]
        dpath = report.write_csv(out / "dagger.csv", DAGGER_HEADER, rows)
        _plot(args, dpath, report.plot_dagger, rows)
    if res.skipped_updates:
        log.warning("%d updates skipped on non-finite gradients", res.skipped_updates)
    log.info("wrote %s", out)
    return EXIT_OK


def _load_actor(path, env):
    try:
        actor, _ = policy.load_checkpoint(path, env.chan.p0, env.cells if env.head == "percell" else None)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"bad checkpoint {path}: {exc}") from None
    if actor.head.mode != env.head:
        raise ConfigError(f"checkpoint head {actor.head.mode!r} does not match scenario head {env.head!r}")
    return actor


def cmd_eval(args):
    cfg = _config(args)
    out = _outdir(args)
    env = make_environment(cfg)
    actor = _load_actor(args.checkpoint, env) if args.checkpoint else None
    rows = evaluation.evaluate(env, actor, args.baselines, T=cfg.T_eval, reps=cfg.reps, seed=cfg.seed)
    table = [r.as_tuple() for r in rows]
    path = report.write_csv(out / "eval.csv", evaluation.EVAL_HEADER, table)
    _plot(args, path, report.plot_eval, table)
    for r in rows:
        log.info("%-14s %.6g +- %.3g", r.policy, r.mean_cost_per_plant, r.std_cost_per_plant)
    return EXIT_OK


def transfer_rows(cfg, checkpoint, sizes, baseline_names):
    """One evaluation per size; the checkpoint text is parsed once and the
    same taps act on every network size."""
    try:
        text = Path(checkpoint).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint: {exc}") from None
    table = []
    for m in sizes:
        env = make_environment(cfg.with_size(m))
        try:
            actor, _ = policy.parse_checkpoint(text, env.chan.p0)
        except ValueError as exc:
            raise ConfigError(f"bad checkpoint {checkpoint}: {exc}") from None
        for r in evaluation.evaluate(env, actor, baseline_names, T=cfg.T_eval, reps=cfg.reps, seed=cfg.seed):
            table.append((m,) + r.as_tuple())
            log.info("m=%d %-14s %.6g", m, r.policy, r.mean_cost_per_plant)
    return table


def cmd_transfer(args):
    cfg = _config(args)
    out = _outdir(args)
    table = transfer_rows(cfg, args.checkpoint, args.sizes, args.baselines)
    path = report.write_csv(out / "transfer.csv", TRANSFER_HEADER, table)
    _plot(args, path, report.plot_transfer, table)
    return EXIT_OK


def cmd_proptest(args):
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be positive")
    ok = True
    for res in proptest.run_suite(args.suite, args.trials, args.seed):
        print(res.line())
        for msg in res.messages[:10]:
            print("   ", msg)
        ok &= res.ok
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_report(args):
    for path in args.csv:
        try:
            print(report.render_csv(path))
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(str(exc)) from None
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "transfer": cmd_transfer, "proptest": cmd_proptest,
            "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"graphwcs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"graphwcs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"graphwcs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"graphwcs: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
