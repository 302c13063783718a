"""Command-line entry point: ``rebalance <subcommand> ...``.

Exit status: 0 success, 2 usage error, 3 invalid input, 4 failed self-check,
1 anything else. Errors go to stderr as ``error[<kind>]: message``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, analysis, factors, frequency, ingest, sampling, verify
from .errors import (AnnotationParseError, AnnotationValidationError, EmptyDatasetError,
                     FactorDomainError, FactorOverflowError, GenerationError,
                     InsufficientDataError, ManifestFormatError)

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_INPUT, EXIT_CHECK = 0, 1, 2, 3, 4
OUTPUT_DIR_ENV = "REBALANCE_OUTPUT_DIR"
DEFAULT_SEED = 0

_INPUT_ERRORS = (AnnotationParseError, AnnotationValidationError, EmptyDatasetError,
                 FactorDomainError, FactorOverflowError, GenerationError,
                 InsufficientDataError, ManifestFormatError, OSError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error[usage]: {message}\n")
        sys.exit(EXIT_USAGE)


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _output_path(args, default_name):
    if args.output:
        return Path(args.output)
    base = Path(os.environ.get(OUTPUT_DIR_ENV, "."))
    return base / default_name


def _add_input(p):
    p.add_argument("input", help="COCO .json, dataset manifest .jsonl, or YOLO label directory")
    p.add_argument("--classes", help="class-names file for YOLO input (default: classes.txt)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")


def _add_config(p):
    p.add_argument("--method", choices=[m.value for m in factors.Method], default="eirfs")
    p.add_argument("--t", "--threshold", dest="threshold", type=float,
                   default=factors.DEFAULT_THRESHOLD)
    p.add_argument("--alpha", type=float, default=factors.DEFAULT_ALPHA)


def _add_output(p, what):
    p.add_argument("-o", "--output", help=f"{what} (default: under ${OUTPUT_DIR_ENV} or cwd)")


def _config(args):
    alpha = args.alpha if args.method == "eirfs" else None
    return factors.RebalanceConfig(args.method, args.threshold, alpha)


def _load(args):
    return ingest.load_dataset(args.input, class_names=args.classes, jobs=args.jobs)


def _config_lines(cfg, **extra):
    fields = {"method": cfg.method.value, "threshold": repr(cfg.threshold),
              "alpha": "-" if cfg.alpha is None else repr(cfg.alpha), **extra}
    return "".join(f"# {k}={v}\n" for k, v in fields.items())


def cmd_inspect(args):
    index = _load(args)
    for issue in ingest.validate(index):
        sys.stderr.write(f"{issue.severity}[validate]: {issue.locator}: {issue.message}\n")
    freqs = frequency.compute_frequencies(index)
    out = _output_path(args, f"{index.dataset_id}.frequencies.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# dataset_id={index.dataset_id}\n# images={freqs.total_images}\n"
                 f"# instances={freqs.total_instances}\n")
        frequency.write_frequency_report(freqs, fh)
    print(out)
    return EXIT_OK


def cmd_factors(args):
    index = _load(args)
    freqs = frequency.compute_frequencies(index)
    table = factors.build_table(freqs, index, _config(args))
    out = _output_path(args, f"{index.dataset_id}.{table.config.method.value}.factors.tsv")
    factors.write_table(table, out)
    print(out)
    return EXIT_OK


def cmd_sample(args):
    index = _load(args)
    freqs = frequency.compute_frequencies(index)
    table = factors.build_table(freqs, index, _config(args))
    out_dir = _output_path(args, "manifests")
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = args.epoch if args.epoch else args.epochs
    manifests = sampling.plan_epochs(table, args.mode, epochs, args.size, args.seed, args.jobs)
    for m in manifests:
        print(sampling.write_epoch_manifest(m, out_dir / f"epoch_{m.epoch_index:05d}.manifest"))
    return EXIT_OK


def cmd_sweep(args):
    index = _load(args)
    grid = analysis.sweep(index, args.alphas, args.thresholds, args.mode, jobs=args.jobs)
    prefix = _output_path(args, f"{index.dataset_id}.sweep")
    head = (f"# method={grid.method}\n# mode={grid.mode}\n"
            f"# rare_category={grid.rare_category}\n")
    with open(f"{prefix}.cells.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(head)
        analysis.write_sweep_cells(grid, fh)
    with open(f"{prefix}.matrix.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(head)
        for metric in ("rare_class_share", "max_class_factor", "epoch_inflation", "l1_shift"):
            analysis.write_sweep_matrix(grid, fh, metric)
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(analysis.sweep_to_dict(grid), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{prefix}.cells.csv\n{prefix}.matrix.csv\n{prefix}.json")
    return EXIT_OK


def cmd_simulate(args):
    index = _load(args)
    freqs = frequency.compute_frequencies(index)
    cfg = _config(args)
    table = factors.build_table(freqs, index, cfg)
    report = analysis.simulate_training_distribution(index, table, args.mode, args.epochs,
                                                     args.size, args.seed, args.jobs)
    prefix = _output_path(args, f"{index.dataset_id}.{cfg.method.value}.simulation")
    with open(f"{prefix}.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(_config_lines(cfg, mode=args.mode, seed=args.seed, epochs=args.epochs,
                               samples=report.samples, l1_deviation=repr(report.l1_deviation),
                               single_class_regime=report.single_class_regime))
        analysis.write_distribution_csv(report, fh)
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        analysis.write_distribution_json(report, fh)
    print(f"{prefix}.csv\n{prefix}.json")
    return EXIT_OK


def cmd_synth(args):
    index = analysis.generate_synthetic(args.classes, args.gamma, args.images, args.law,
                                        args.multi_class, args.seed)
    out = _output_path(args, f"{index.dataset_id}.jsonl")
    ingest.write_manifest(index, out)
    print(out)
    return EXIT_OK


def cmd_verify(args):
    results = verify.run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    if all(r.passed for r in results):
        return EXIT_OK
    sys.stderr.write("error[check]: self-check failed\n")
    return EXIT_CHECK


def build_parser():
    parser = _Parser(prog="rebalance", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inspect", help="per-class frequency report")
    _add_input(p)
    _add_output(p, "report path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("factors", help="repeat-factor table")
    _add_input(p)
    _add_config(p)
    _add_output(p, "table path")
    p.set_defaults(func=cmd_factors)

    p = sub.add_parser("sample", help="epoch manifests")
    _add_input(p)
    _add_config(p)
    p.add_argument("--mode", choices=sampling.MODES, default="draw")
    p.add_argument("--size", type=int, help="draws per epoch in draw mode (default: #images)")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--epoch", type=int, action="append",
                   help="generate only this epoch index (repeatable)")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    _add_output(p, "output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("sweep", help="alpha x threshold grid")
    _add_input(p)
    p.add_argument("--alphas", type=_float_list, default=list(analysis.DEFAULT_ALPHAS))
    p.add_argument("--thresholds", type=_float_list, default=list(analysis.DEFAULT_THRESHOLDS))
    p.add_argument("--mode", choices=sampling.MODES, default="draw")
    _add_output(p, "output prefix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo training distribution")
    _add_input(p)
    _add_config(p)
    p.add_argument("--mode", choices=sampling.MODES, default="draw")
    p.add_argument("--size", type=int)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    _add_output(p, "output prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="synthetic power-law dataset")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--gamma", type=float, default=1.5)
    p.add_argument("--images", type=int, default=14_400)
    p.add_argument("--law", default="one", help="one | poisson:<mean> | geometric:<mean>")
    p.add_argument("--multi-class", action="store_true")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    _add_output(p, "manifest path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("epochs", "size", "jobs"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            sys.stderr.write(f"error[usage]: --{name} must be >= 1\n")
            return EXIT_USAGE
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        sys.stderr.write(f"error[input]: {exc}\n")
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"error[internal]: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
