"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 infeasible or
degenerate problem.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from privfair.audit import audit_sample_threshold, discrimination_report, lemma1_bound
from privfair.core import LabeledDataset, PrivatizedDataset
from privfair.errors import ConfigError, DataError, PrivFairError
from privfair.harness.config import ExperimentConfig, load_config
from privfair.harness.ingest import apply_encoding, encode_rows, read_csv, standardize
from privfair.harness.report import aggregate, emit_report, trend_table
from privfair.harness.sweep import run_sweep
from privfair.mechanism import make_mechanism, randomize_groups
from privfair.missing import ReportingFunction, lemma3_bounds, split_by_reporting, two_dataset_train
from privfair.posthoc import TwoStepConfig, alpha_tilde_n, plugin_min_cell, two_step_bounds, two_step_train
from privfair.reduction import (
    LearnerConfig,
    RandomizedClassifier,
    alpha_n_step1,
    exp_gradient_train,
    step1_bounds,
    training_log_json_lines,
)

log = logging.getLogger("privfair")


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def cmd_privatize(args) -> int:
    header, rows = read_csv(args.input)
    header = [h.strip() for h in header]
    if args.group_column not in header:
        raise DataError(f"column {args.group_column!r} not found")
    gi = header.index(args.group_column)
    rows = [[v.strip() for v in r] for r in rows if r and any(v.strip() for v in r)]
    if any(len(r) != len(header) for r in rows):
        raise DataError("rows with the wrong number of fields")
    kept = [r for r in rows if r[gi] != "?"]
    if len(kept) < len(rows):
        log.warning("dropped %d rows without a group value", len(rows) - len(kept))
    levels = list(args.group_values.split(",")) if args.group_values else []
    for r in kept:
        if r[gi] not in levels:
            levels.append(r[gi])
    if len(levels) < 2:
        raise DataError("need at least two group values")
    groups = np.array([levels.index(r[gi]) for r in kept])
    mech = make_mechanism(args.epsilon, len(levels))
    z = randomize_groups(groups, mech, args.seed)
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r, zi in zip(kept, z):
            writer.writerow(r[:gi] + [levels[zi]] + r[gi + 1:])
    log.info("privatized %d rows at epsilon=%g (group order %s)", len(kept), args.epsilon, levels)
    return 0


def _load_model(path):
    try:
        model = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from None
    if "classifier" not in model or "encoding" not in model:
        raise ConfigError("model file lacks classifier or encoding")
    return model


def cmd_audit(args) -> int:
    model = _load_model(args.predictor)
    clf = model["classifier"]
    if clf.get("type") != "randomized":
        raise ConfigError("only X-only (step one) predictors can be audited")
    predictor = RandomizedClassifier.from_dict(clf)
    header, rows = read_csv(args.input)
    table = apply_encoding(header, rows, model["encoding"])
    data = PrivatizedDataset(table.features, table.labels, table.groups, table.group_count)
    mech = make_mechanism(args.epsilon, table.group_count)
    report = discrimination_report(data, predictor, mech, args.delta, args.seed)
    _write_json(report.to_dict(), args.output)
    return 0


def _config(args) -> ExperimentConfig:
    overrides = {}
    for key in ("trials", "seed", "workers", "T", "eta", "B", "delta", "dataset"):
        overrides[key] = getattr(args, key, None)
    grid = getattr(args, "epsilon_grid", None)
    if grid:
        try:
            overrides["epsilon_grid"] = tuple(float(e) for e in grid.split(","))
        except ValueError:
            raise ConfigError(f"bad epsilon grid {grid!r}") from None
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    config = _config(args)
    learner = LearnerConfig(config.learner_steps, config.learner_step_size, config.learner_l2)
    header, rows = read_csv(args.input)
    table = standardize(encode_rows(header, rows, config.group_column, config.label_column,
                                    config.positive_label, config.drop_columns))
    k = table.group_count
    out = {"mode": args.mode, "encoding": table.metadata}
    if args.mode == "missing":
        data = LabeledDataset(table.features, table.labels, table.groups, k)
        split = split_by_reporting(data, ReportingFunction.constant(config.report_probability), config.seed)
        if config.alpha_n == "theory":
            counts = np.zeros((2, k))
            np.add.at(counts, (split.labeled.labels, split.labeled.groups), 1.0)
            alpha = alpha_n_step1(len(split.labeled), config.delta, float(counts.min() / len(split.labeled)), k)
        else:
            alpha = float(config.alpha_n)
        result = two_dataset_train(split, config.B, config.effective_eta, config.T, alpha, learner)
        out["classifier"] = result.classifier.to_dict()
        out["report"] = {"beta_hat": split.beta_hat, "n_labeled": len(split.labeled), "alpha_n": alpha}
    else:
        if args.epsilon is None:
            raise ConfigError("--epsilon is required for private-attribute training")
        mech = make_mechanism(args.epsilon, k)
        data = PrivatizedDataset(table.features, table.labels, table.groups, k)
        if args.mode == "step1":
            if config.alpha_n == "theory":
                alpha = alpha_n_step1(len(data), config.delta, plugin_min_cell(data, mech), k)
            else:
                alpha = float(config.alpha_n)
            result = exp_gradient_train(data, config.B, config.effective_eta, config.T, alpha, learner,
                                        config.mixture)
            out["classifier"] = result.classifier.to_dict()
            out["report"] = {"alpha_n": alpha, "final": result.log[-1]}
        else:
            two = two_step_train(data, mech, TwoStepConfig(
                B=config.B,
                eta=config.effective_eta,
                T=config.T,
                alpha_n=None if config.alpha_n == "theory" else float(config.alpha_n),
                alpha_tilde=None if config.alpha_tilde == "theory" else float(config.alpha_tilde),
                delta=config.delta,
                learner=learner,
                split_seed=config.seed,
                s1_fraction=config.split_fraction_s1,
                mixture=config.mixture,
            ))
            result = two.step1
            out["classifier"] = two.predictor.to_dict()
            out["report"] = two.report
    if args.log:
        Path(args.log).write_text(training_log_json_lines(result))
    _write_json(out, args.output)
    return 0


def cmd_sweep(args) -> int:
    config = _config(args)
    start = time.time()
    result = run_sweep(config)
    csv_path, json_path = emit_report(result, args.out_dir)
    log.info("sweep finished in %.1fs: %s, %s", time.time() - start, csv_path, json_path)
    print(trend_table(aggregate(result)))
    if result.failures:
        log.warning("%d failed cells", len(result.failures))
    return 0


def _parse_params(text: str) -> dict:
    params = {}
    for item in filter(None, (s.strip() for s in (text or "").split(","))):
        if "=" not in item:
            raise ConfigError(f"bad parameter {item!r}; use key=value")
        key, value = item.split("=", 1)
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"parameter {key!r} is not a number") from None
    return params


def cmd_bounds(args) -> int:
    p = _parse_params(args.params)

    def need(*names):
        missing = [n for n in names if n not in p]
        if missing:
            raise ConfigError(f"missing parameters: {', '.join(missing)}")
        return [p[n] for n in names]

    k = int(p.get("k", 2))
    rad = p.get("rademacher", 0.0)
    if args.lemma == "1":
        n, delta, eps, m = need("n", "delta", "epsilon", "min_cell")
        mech = make_mechanism(eps, k)
        out = {
            "bound": lemma1_bound(int(n), delta, mech, m),
            "bound_main": lemma1_bound(int(n), delta, mech, m, "main"),
            "sample_threshold": audit_sample_threshold(delta, k, m),
        }
    elif args.lemma == "2":
        n, delta, eps, m, B = need("n", "delta", "epsilon", "min_cell", "B")
        err, disc = step1_bounds(int(n), delta, B, rad, m, make_mechanism(eps, k))
        out = {"alpha_n": alpha_n_step1(int(n), delta, m, k), "err_excess": err, "disc": disc}
    elif args.lemma == "3":
        n, n_l, delta, m, B = need("n", "n_l", "delta", "min_cell", "B")
        err, disc = lemma3_bounds(int(n), int(n_l), delta, B, rad, m, k)
        out = {"err_excess": err, "disc": disc}
    else:
        n, delta, eps, m, B = need("n", "delta", "epsilon", "min_cell", "B")
        mech = make_mechanism(eps, k)
        err, disc = two_step_bounds(int(n), delta, B, rad, m, mech)
        out = {"alpha_tilde_n": alpha_tilde_n(int(n), delta, mech, m), "err_excess": err, "disc": disc}
    _write_json(out, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privfair", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("privatize", help="apply randomized response to the group column of a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--group-column", default="sex")
    p.add_argument("--group-values", help="comma-separated group order (default: first seen)")
    p.set_defaults(func=cmd_privatize)

    p = sub.add_parser("audit", help="corrected discrimination estimate of a trained step-one model")
    p.add_argument("--input", required=True, help="privatized CSV")
    p.add_argument("--predictor", required=True, help="model JSON written by train")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_audit)

    def experiment_flags(q):
        q.add_argument("--config")
        q.add_argument("--seed", type=int)
        q.add_argument("--T", type=int)
        q.add_argument("--eta", type=float)
        q.add_argument("--B", type=float)
        q.add_argument("--delta", type=float)

    p = sub.add_parser("train", help="train a fair classifier")
    p.add_argument("--mode", choices=("step1", "two-step", "missing"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--output")
    p.add_argument("--log", help="write the per-iteration log as JSON lines")
    experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run the privacy sweep")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--dataset")
    p.add_argument("--epsilon-grid", help="comma-separated epsilons")
    experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="evaluate a guarantee formula")
    p.add_argument("--lemma", choices=("1", "2", "3", "thm1"), required=True,
                   help="1: audit error bound, 2: step-one guarantees, 3: partial reporting, thm1: two-step")
    p.add_argument("--params", required=True, help="key=value list, e.g. n=10000,delta=0.1,epsilon=1,min_cell=0.1")
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PrivFairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
