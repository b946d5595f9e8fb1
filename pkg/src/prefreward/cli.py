"""Command-line entry point: ``prefreward <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data validation error,
4 numerical failure, 1 anything else.
"""
import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import yaml
from threadpoolctl import threadpool_limits

from . import __version__, pipeline
from .cohort.synthetic import SynthConfig
from .config import BaselineConfig, EvalConfig, RLConfig, parse_override, resolve_config
from .exceptions import ConfigError, PrefRewardError
from .preference import PrefTrainConfig

logger = logging.getLogger("prefreward")

_PREFIX = "cfg__"


def _yaml_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _add_section_flags(parser, cls, section, exclude=()):
    group = parser.add_argument_group(f"{section or 'general'} settings")
    for f in fields(cls):
        if f.name in exclude or not isinstance(f.default, (int, float, str, bool, tuple, type(None))):
            continue
        key = f"{section}.{f.name}" if section else f.name
        flag = "--" + f.name.replace("_", "-").lower()
        group.add_argument(flag, dest=_PREFIX + key.replace(".", "__"), type=_yaml_value,
                           default=argparse.SUPPRESS, metavar="VALUE", help=f"sets {key}")


def _common(parser):
    parser.add_argument("--config", type=Path, help="YAML experiment config")
    parser.add_argument("--output-dir", dest=_PREFIX + "output_dir", default=argparse.SUPPRESS,
                        help="run directory (overrides config and PREFREWARD_OUTPUT_DIR)")
    parser.add_argument("--threads", dest=_PREFIX + "threads", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--seed", dest=_PREFIX + "seed", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set rl.epochs=5 (repeatable)")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _cohort_flags(parser):
    parser.add_argument("--cohort-source", dest=_PREFIX + "cohort_source", default=argparse.SUPPRESS,
                        help="'synthetic' or a JSONL cohort file")
    parser.add_argument("--reduced-features", dest=_PREFIX + "reduced_features", action="store_const",
                        const=True, default=argparse.SUPPRESS)
    parser.add_argument("--train-frac", dest=_PREFIX + "train_frac", type=float, default=argparse.SUPPRESS)


def build_parser():
    p = argparse.ArgumentParser(prog="prefreward", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", help="generate or ingest a cohort and assign the split")
    _common(s)
    _cohort_flags(s)
    _add_section_flags(s, SynthConfig, "synthetic", exclude=("reduced_features",))
    s.add_argument("--out", type=Path, help="cohort JSONL path")

    s = sub.add_parser("learn-reward", help="train the preference reward model")
    _common(s)
    _add_section_flags(s, PrefTrainConfig, "reward", exclude=("seed",))
    s.add_argument("--cohort", type=Path)
    s.add_argument("--out", type=Path, help="reward checkpoint path")
    s.add_argument("--log", type=Path, help="training log CSV path")

    s = sub.add_parser("score-baselines", help="export per-step reward traces for every formulation")
    _common(s)
    _add_section_flags(s, BaselineConfig, "baselines")
    s.add_argument("--cohort", type=Path)
    s.add_argument("--reward-model", type=Path)
    s.add_argument("--out", type=Path)

    s = sub.add_parser("train-policy", help="train a D3QN-CQL policy on one reward formulation")
    _common(s)
    _add_section_flags(s, RLConfig, "rl")
    s.add_argument("--reward", required=True,
                   help="cnpr, mortality, sofa_lac, news2, or a reward checkpoint path")
    s.add_argument("--cohort", type=Path)
    s.add_argument("--reward-model", type=Path, help="reward checkpoint for --reward cnpr")
    s.add_argument("--name", help="policy name (defaults to the reward source)")
    s.add_argument("--out", type=Path, help="policy checkpoint path")
    s.add_argument("--log", type=Path, help="training log CSV path")

    s = sub.add_parser("compute-outcomes", help="per-trajectory outcome metrics CSV")
    _common(s)
    s.add_argument("--cohort", type=Path)
    s.add_argument("--out", type=Path)

    s = sub.add_parser("evaluate", help="distances, regressions, heatmaps, importance")
    _common(s)
    _add_section_flags(s, EvalConfig, "evaluation")
    s.add_argument("--cohort", type=Path)
    s.add_argument("--policy", action="append", default=[], metavar="NAME=PATH",
                   help="policy checkpoint (repeatable); defaults to every policy in the run directory")
    s.add_argument("--outcomes", type=Path)
    s.add_argument("--reward-model", type=Path)
    s.add_argument("--out-dir", type=Path)

    s = sub.add_parser("report", help="summarize a finished run as Markdown")
    _common(s)
    s.add_argument("--run-dir", type=Path)

    s = sub.add_parser("run", help="full pipeline end to end")
    _common(s)
    _cohort_flags(s)
    s.add_argument("--n", dest=_PREFIX + "synthetic__n", type=int, default=argparse.SUPPRESS,
                   help="synthetic cohort size")
    return p


def _overrides(args):
    out = [parse_override(o) for o in args.overrides]
    for key, value in vars(args).items():
        if key.startswith(_PREFIX):
            out.append((key[len(_PREFIX):].replace("__", "."), value))
    return out


def _policy_paths(specs):
    if not specs:
        return None
    out = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"--policy expects NAME=PATH, got {spec!r}")
        name, path = spec.split("=", 1)
        out[name] = Path(path)
    return out


def _dispatch(args, cfg):
    c = args.command
    if c == "generate":
        name = "generate" if cfg.cohort_source == "synthetic" else "load_cohort"
        return name, lambda: pipeline.run_generate(cfg, args.out)
    if c == "learn-reward":
        return "learn_reward", lambda: pipeline.run_learn_reward(cfg, args.cohort, args.out, args.log)
    if c == "score-baselines":
        return "score_baselines", lambda: pipeline.run_score_baselines(cfg, args.cohort, args.reward_model, args.out)
    if c == "train-policy":
        return (f"train_policy:{args.name or Path(args.reward).stem}",
                lambda: pipeline.run_train_policy(cfg, args.reward, args.cohort, args.reward_model, args.out,
                                                  args.log, args.name))
    if c == "compute-outcomes":
        return "compute_outcomes", lambda: pipeline.run_compute_outcomes(cfg, args.cohort, args.out)
    if c == "evaluate":
        paths = _policy_paths(args.policy)
        return "evaluate", lambda: pipeline.run_evaluate(cfg, args.cohort, paths, args.outcomes,
                                                         args.reward_model, args.out_dir)
    if c == "report":
        return "report", lambda: pipeline.run_report(cfg, args.run_dir)
    raise ConfigError(f"unknown command {c!r}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.config, _overrides(args))
    except PrefRewardError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    try:
        if args.command == "run":
            root = pipeline.run_pipeline(cfg)
            print(root)
            return 0
        name, fn = _dispatch(args, cfg)
        root = args.run_dir if args.command == "report" and args.run_dir else cfg.output_dir
        with threadpool_limits(limits=cfg.threads), pipeline.stage(name, root):
            result = fn()
        if result is not None:
            print(result if isinstance(result, (str, Path)) else Path(cfg.output_dir))
        return 0
    except pipeline.StageFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except PrefRewardError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
