"""Command-line entry point: ``zeromatch <subcommand> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources

from . import oracle as fm
from .config import derive_seed, load_config, parse_method
from .data import save_dataset, split_semisupervised
from .exceptions import ConfigurationError, ParseError
from .harness import (
    build_dataset,
    build_pseudo_labels,
    check_acceptance,
    format_acceptance,
    format_summary,
    read_runs,
    report,
    run_suite,
    summarize,
)
from .train import NEEDS_PSEUDO_LABELS, evaluate, train, write_log


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _out(args, config=None):
    out = args.out or (config.output_dir if config else "results")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_gen_data(args):
    config = _config(args)
    out = _out(args, config)
    for seed in config.seeds:
        path = os.path.join(out, f"data_seed{seed}.csv")
        save_dataset(build_dataset(config, seed), path)
        print(path)
    return 0


def cmd_gen_pseudolabels(args):
    config = _config(args)
    out = _out(args, config)
    names = [args.oracle] if args.oracle else sorted(config.oracles)
    for seed in config.seeds:
        ds = build_dataset(config, seed)
        for name in names:
            path = os.path.join(out, f"pl_{name}_seed{seed}.tsv")
            pls = build_pseudo_labels(config, name, ds, seed)
            fm.save(pls, path)
            print(f"{path}\tzero-shot test accuracy {fm.zero_shot_accuracy(pls, ds):.4f}")
    return 0


def cmd_train(args):
    config = _config(args)
    out = _out(args, config)
    base, overrides = parse_method(args.method)
    hyper = config.hyper_for(overrides)
    seed = config.seeds[0]
    ds = split_semisupervised(build_dataset(config, seed), args.k,
                              derive_seed(config.master_seed, "split", seed, args.k))
    pls = None
    if args.oracle or base in NEEDS_PSEUDO_LABELS:
        name = args.oracle or sorted(config.oracles)[0]
        pls = build_pseudo_labels(config, name, ds, seed)
    result = train(base, ds, pls, hyper, seed=derive_seed(config.master_seed, "train", seed, args.k),
                   checkpoint_dir=out)
    if result.stage1_log is not None:
        write_log(result.stage1_log, os.path.join(out, "stage1_log.csv"))
    write_log(result.stage2_log, os.path.join(out, "stage2_log.csv"))
    summary = {
        "method": args.method,
        "k": args.k,
        "seed": seed,
        "test_acc": evaluate(result.model, ds, "test", pls),
        "zero_shot_acc": fm.zero_shot_accuracy(pls, ds) if pls is not None else None,
        "stage1_steps": result.stage1_steps,
        "stage2_steps": result.stage2_steps,
        "final_mask_rate": result.final_mask_rate,
        "model": result.model.config(),
    }
    with open(os.path.join(out, "result.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary))
    return 0


def cmd_run_suite(args):
    config = _config(args)
    out = _out(args, config)
    results = run_suite(config, out, workers=args.workers)
    report(results, out, "csv")
    print(format_summary(summarize(results)), end="")
    return 1 if any(not r.ok for r in results) else 0


def _results(args):
    path = args.results
    if os.path.isdir(path):
        path = os.path.join(path, "runs.jsonl")
    if not os.path.exists(path):
        raise ConfigurationError(f"no results at {path}")
    return read_runs(path)


def cmd_summarize(args):
    results = _results(args)
    print(format_summary(summarize(results)), end="")
    return 0


def _criteria_text(source):
    if source is None or source == "acceptance":
        return resources.files("zeromatch.configs").joinpath("acceptance.criteria").read_text()
    with open(source) as fh:
        return fh.read()


def cmd_check(args):
    results = _results(args)
    rep = check_acceptance(results, _criteria_text(args.criteria))
    print(format_acceptance(rep))
    errors = [r for r in results if not r.ok]
    for r in errors:
        print(f"[FAIL] run error {r.method}@{r.oracle}/{r.k} seed {r.seed}: {r.error}")
    return 0 if all(c.passed for c in rep) and not errors else 1


def cmd_report(args):
    results = _results(args)
    path = report(results, _out(args), args.format)
    print(path)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default",
                        help="config file path or built-in name (default, acceptance, sensitivity)")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="zeromatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write dataset CSVs")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-pseudolabels", parents=[common], help="write pseudo-label files")
    p.add_argument("--oracle", default=None)
    p.set_defaults(func=cmd_gen_pseudolabels)

    p = sub.add_parser("train", parents=[common], help="train a single model")
    p.add_argument("--method", default="zeromatch")
    p.add_argument("--oracle", default=None)
    p.add_argument("--k", type=int, default=1, help="labels per class")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run-suite", parents=[common], help="run every configured cell")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_run_suite)

    for name, func, helptext in (("summarize", cmd_summarize, "print median/std table"),
                                 ("check", cmd_check, "evaluate acceptance criteria"),
                                 ("report", cmd_report, "write run and summary tables")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--results", required=True, help="runs.jsonl/runs.csv or a suite directory")
        if name == "check":
            p.add_argument("--criteria", default=None, help="criteria file (default: built-in)")
        if name == "report":
            p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
