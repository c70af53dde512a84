"""Command line entry point: ``bcda run``, ``bcda compare``, ``bcda selftest``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .errors import BcdaError, ConfigError
from .harness import load_config, run_experiment

log = logging.getLogger("bcda")


def _add_run_flags(p):
    p.add_argument("--config", help="flat YAML config file")
    p.add_argument("--task", choices=["invpen", "reacher"])
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--seed", type=int, dest="seed_base")
    p.add_argument("--il-scheme", dest="il_scheme", choices=["s1", "s2", "s3", "s4"])
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="bcda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="train one agent on one task over several trials")
    _add_run_flags(run)
    run.add_argument("--agent", choices=["bcda", "ddpg"])
    cmp_ = sub.add_parser("compare", help="run bcda and ddpg with the same config and summarize")
    _add_run_flags(cmp_)
    st = sub.add_parser("selftest", help="run the built-in property checks")
    st.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args, keys):
    return {k: getattr(args, k, None) for k in keys}


_RUN_KEYS = ("task", "agent", "trials", "total_steps", "seed_base", "il_scheme", "workers", "output_dir")


def _config_text(path):
    if path is None:
        return None
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _summary_line(s):
    r = np.asarray(s.max_avg_reward)
    return (f"{s.agent:<6} {s.task:<8} max avg reward {r.mean():10.4f} +- {r.std():.4f}   "
            f"mean train time {s.mean_train_time:9.2f} s")


def cmd_run(args):
    cfg = load_config(args.config, _overrides(args, _RUN_KEYS))
    summary = run_experiment(cfg, config_text=_config_text(args.config))
    print(_summary_line(summary))
    print(f"artifacts in {cfg.output_dir}")
    return 0


def cmd_compare(args):
    keys = tuple(k for k in _RUN_KEYS if k != "agent")
    base = load_config(args.config, _overrides(args, keys))
    text = _config_text(args.config)
    results = {}
    for agent in ("bcda", "ddpg"):
        cfg = base.replace(agent=agent, output_dir=os.path.join(base.output_dir, agent))
        results[agent] = run_experiment(cfg, config_text=text)
    print(f"task {base.task}, {base.trials} trials x {base.total_steps} steps")
    for s in results.values():
        print(_summary_line(s))
    t_b, t_d = results["bcda"].mean_train_time, results["ddpg"].mean_train_time
    if t_d > 0:
        print(f"training time improvement {100.0 * (t_d - t_b) / t_d:.2f}%  (ratio {t_b / t_d:.3f})")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest
    return 0 if run_selftest(args.seed) else 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    handler = {"run": cmd_run, "compare": cmd_compare, "selftest": cmd_selftest}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (BcdaError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
