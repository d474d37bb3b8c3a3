"""Command line entry point: ``confair run|rank|validate-data --config PATH``."""
from __future__ import annotations

import argparse
import logging
import sys

from .dataio import DataError
from .experiment import (
    AllCellsFailedError, ConfigError, ExperimentConfig, emit_outputs, importance_table,
    load_dataset, rank_features, run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ALL_FAILED = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="confair", description="Fairness-constrained kernel SVM experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "train and evaluate the configured methods over seeds and f_tol values"),
        ("rank", "compute permutation importances only"),
        ("validate-data", "load the configured dataset and report its shape"),
    ):
        c = sub.add_parser(name, help=text)
        c.add_argument("--config", required=True, help="JSON experiment config")
        c.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="replace a config field; VALUE is parsed as JSON when possible")
        c.add_argument("--output-dir", help="shortcut for --override output_dir=...")
    return p


def _validate(config: ExperimentConfig) -> int:
    data, test = load_dataset(config)
    pos = int((data.labels > 0).sum())
    grp = int((data.sensitive_values > 0).sum())
    print(f"{config.dataset_name}: n={data.n} d={data.d} positives={pos} "
          f"group_a={grp} group_b={data.n - grp}")
    if test is not None:
        print(f"provided test split: n={test.n}")
    print("sensitive feature:", data.feature_names[data.sensitive_index])
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.override)
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    try:
        config = ExperimentConfig.from_json(args.config, overrides)
        if args.command == "validate-data":
            return _validate(config)
        if args.command == "rank":
            result = rank_features(config)
            emit_outputs(result)
            for name, mean, std in importance_table(result.rankings, result.feature_names):
                print(f"{name:<32} {mean:+.4f} ± {std:.4f}")
            return EXIT_OK
        result = run_experiment(config)
        emit_outputs(result)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AllCellsFailedError as exc:
        print(f"all cells failed: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED

    if result.rows and not any(r.ok for r in result.rows):
        print("all cells failed; see the status column of results.csv", file=sys.stderr)
        return EXIT_ALL_FAILED
    for s in result.summary:
        acc = "—" if s.accuracy_mean is None else f"{s.accuracy_mean:.3f}±{s.accuracy_std:.3f}"
        deo = "—" if s.deo_mean is None else f"{s.deo_mean:.3f}±{s.deo_std:.3f}"
        ftol = "" if s.f_tol is None else f"f_tol={s.f_tol:g}"
        print(f"{s.dataset:<8} {s.method:<24} {ftol:<12} acc {acc:<14} DEO {deo}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
