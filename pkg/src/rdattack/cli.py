"""Command-line front end: ``rdattack {train,attack,angles,report}``.

Exit codes: 0 success, 2 bad flags, 3 bad data or model, 4 I/O failure,
5 empty result.
"""

import argparse
import csv
import logging
import os
import sys

from . import __version__
from .attacks import AttackConfig
from .datasets import DataFormatError, load_csv, load_idx
from .evalharness import (
    DEFAULT_ANGLE_FILTER,
    METHODS,
    angle_histogram,
    angle_statistics,
    export_report,
    load_report,
    report_to_csv,
    run_attack_suite,
    select_correctly_classified,
)
from .netcore import ModelFormatError, ShapeError, TrainConfig, accuracy, init_network, load_model, save_model, train

EXIT_OK, EXIT_FLAGS, EXIT_DATA, EXIT_IO, EXIT_EMPTY = 0, 2, 3, 4, 5
DEFAULT_EPS = "0.03,0.05,0.1,0.2,0.3"
DEFAULT_SEED = 42

log = logging.getLogger("rdattack")


class FlagError(Exception):
    pass


class EmptyResult(Exception):
    pass


def _csv_list(text, conv, what):
    try:
        values = [conv(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise FlagError(f"--{what}: cannot parse {text!r}") from None
    if not values:
        raise FlagError(f"--{what}: empty list")
    return values


def _seed(args):
    if args.seed is not None:
        seed = args.seed
    else:
        env = os.environ.get("RDA_SEED")
        if env is None or not env.strip():
            seed = DEFAULT_SEED
        else:
            try:
                seed = int(env, 0)
            except ValueError:
                raise FlagError(f"RDA_SEED: not an integer: {env!r}") from None
    if not 0 <= seed < 2**64:
        raise FlagError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def _load_data(fmt, paths, what):
    if fmt == "csv":
        if len(paths) != 1:
            raise FlagError(f"--{what}: csv data takes exactly one path")
        return load_csv(paths[0])
    if len(paths) != 2:
        raise FlagError(f"--{what}: idx data takes an images path and a labels path")
    return load_idx(paths[0], paths[1])


def _add_data_flags(p, *names):
    p.add_argument("--data-format", choices=("idx", "csv"), default="idx", help="dataset file format")
    for name in names:
        p.add_argument(
            f"--{name}",
            nargs="+",
            required=True,
            metavar="PATH",
            help=f"{name} data: one csv file, or an idx images file and an idx labels file",
        )


def _add_seed_flag(p):
    p.add_argument(
        "--seed",
        type=int,
        default=None,
        help=f"random seed; falls back to $RDA_SEED, then {DEFAULT_SEED}",
    )


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="rdattack", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a dense classifier and save it", formatter_class=fmt)
    _add_data_flags(p, "train", "test")
    p.add_argument("--layers", default="256,128", help="hidden layer widths, comma separated")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs, help="passes over the training set")
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size, help="minibatch size")
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate, help="initial learning rate")
    p.add_argument(
        "--lr-decay",
        type=float,
        default=TrainConfig.lr_decay_factor,
        help="learning-rate multiplier applied when test accuracy does not improve",
    )
    _add_seed_flag(p)
    p.add_argument("--out", required=True, help="output model file (RDM1)")

    p = sub.add_parser("attack", help="run the attack suite and write a report", formatter_class=fmt)
    _add_attack_flags(p)
    p.add_argument("--report", required=True, help="report path; .csv writes the summary table, else JSON")

    p = sub.add_parser(
        "angles",
        help="angle statistics between RDA directions and gradients",
        formatter_class=fmt,
        description="Reads a JSON report, or runs FGSM and RDA inline when --model is given.",
    )
    p.add_argument("--from-report", default=None, help="JSON report produced by 'attack'")
    p.add_argument("--mode", choices=("white", "black"), default="white")
    p.add_argument(
        "--filter",
        choices=("only_rda_success_where_fgsm_fails", "all"),
        default=DEFAULT_ANGLE_FILTER,
        help="population the statistics are computed over",
    )
    p.add_argument("--histogram", default=None, help="write a bin_start_deg,count CSV here")
    _add_attack_flags(p, required=False, with_methods=False)

    p = sub.add_parser("report", help="print or convert a JSON report", formatter_class=fmt)
    p.add_argument("--input", required=True, help="JSON report")
    p.add_argument("--csv", default=None, help="also write the summary table to this CSV file")
    return parser


def _add_attack_flags(p, required=True, with_methods=True):
    p.add_argument("--model", required=required, default=None, help="target model (RDM1)")
    p.add_argument(
        "--substitute",
        default=None,
        help="substitute model for black-box runs (gradients for every method; RDA still queries the target)",
    )
    p.add_argument("--data-format", choices=("idx", "csv"), default="idx", help="dataset file format")
    p.add_argument(
        "--test",
        nargs="+",
        required=required,
        default=None,
        metavar="PATH",
        help="evaluation data: one csv file, or an idx images file and an idx labels file",
    )
    if with_methods:
        p.add_argument("--method", default=",".join(METHODS), help="attacks to run, comma separated")
    p.add_argument("--eps", default=DEFAULT_EPS, help="L-inf budgets, comma separated")
    p.add_argument("--alpha", type=float, default=None, help="iterative step; default eps/10")
    p.add_argument("--iterations", type=int, default=AttackConfig.iterations, help="iterations T for BIM, L.L.Class, MI-FGSM")
    p.add_argument("--momentum-decay", type=float, default=AttackConfig.momentum_decay, help="MI-FGSM decay")
    p.add_argument("--mi-literal", action="store_true", help="MI-FGSM steps by eps instead of eps/T")
    p.add_argument("--theta", type=int, default=AttackConfig.theta, help="RDA angle range [-theta, theta] in degrees")
    p.add_argument("--l", type=int, default=AttackConfig.l, help="RDA coordinates rotated per candidate (even)")
    p.add_argument("--max-search-iters", type=int, default=AttackConfig.max_search_iters, help="RDA step cap")
    p.add_argument("--no-clip", action="store_true", help="do not clamp adversarial samples to [0, 1]")
    p.add_argument("--samples", type=int, default=1000, help="attack at most this many correctly classified samples")
    p.add_argument("--workers", type=int, default=1, help="worker processes; results do not depend on it")
    p.add_argument("--bin-width", type=int, default=10, help="angle histogram bin width in degrees")
    p.add_argument(
        "--random-init-blackbox",
        action="store_true",
        help="black-box RDA without a substitute, starting from a random direction",
    )
    _add_seed_flag(p)


def _attack_config(args, seed):
    try:
        eps = _csv_list(args.eps, float, "eps")
        cfg = AttackConfig(
            epsilon=eps[0],
            alpha=args.alpha,
            iterations=args.iterations,
            momentum_decay=args.momentum_decay,
            theta=args.theta,
            l=args.l,
            clip_box=not args.no_clip,
            max_search_iters=args.max_search_iters,
            seed=seed,
            mi_literal=args.mi_literal,
        )
        for e in eps:
            AttackConfig(epsilon=e, alpha=args.alpha)
    except ValueError as exc:
        raise FlagError(str(exc)) from None
    if args.samples < 1:
        raise FlagError("--samples must be >= 1")
    if args.workers < 1:
        raise FlagError("--workers must be >= 1")
    if args.bin_width <= 0 or 180 % args.bin_width:
        raise FlagError("--bin-width must be a positive divisor of 180")
    return cfg, eps


def _run_suite(args, methods):
    seed = _seed(args)
    cfg, eps = _attack_config(args, seed)
    target = load_model(args.model)
    substitute = load_model(args.substitute) if args.substitute else None
    ds = _load_data(args.data_format, args.test, "test")
    if target.input_dim != ds.m:
        raise ShapeError(f"model expects {target.input_dim} features, test data has {ds.m}")
    if substitute is not None and substitute.input_dim != ds.m:
        raise ShapeError(f"substitute expects {substitute.input_dim} features, test data has {ds.m}")
    if "rda" in methods and cfg.l > ds.m:
        raise FlagError(f"--l {cfg.l} exceeds the input dimension {ds.m}")
    modes = None
    if args.random_init_blackbox and substitute is None:
        modes = ["white", "black"]
    kept = select_correctly_classified(target, ds).head(args.samples)
    log.info("attacking %d of %d samples", len(kept), len(ds))
    if len(kept) == 0:
        raise EmptyResult("no correctly classified samples to attack")
    return run_attack_suite(
        target,
        substitute,
        kept,
        methods,
        eps,
        cfg,
        modes=modes,
        workers=args.workers,
        bin_width=args.bin_width,
        random_init_blackbox=args.random_init_blackbox,
    )


def cmd_train(args):
    seed = _seed(args)
    hidden = _csv_list(args.layers, int, "layers")
    if any(h <= 0 for h in hidden):
        raise FlagError("--layers: widths must be positive")
    try:
        cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.lr_decay, seed)
    except ValueError as exc:
        raise FlagError(str(exc)) from None
    train_ds = _load_data(args.data_format, args.train, "train")
    test_ds = _load_data(args.data_format, args.test, "test")
    if test_ds.m != train_ds.m:
        raise ShapeError(f"train data has {train_ds.m} features, test data {test_ds.m}")
    classes = max(train_ds.class_count, test_ds.class_count)
    net = init_network([train_ds.m, *hidden, classes], seed=seed)
    net = train(net, train_ds, cfg, test=test_ds)
    save_model(net, args.out)
    print(f"test accuracy {accuracy(net, test_ds):.4f}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_attack(args):
    methods = _csv_list(args.method, str.strip, "method")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise FlagError(f"--method: unknown {', '.join(bad)}; choose from {', '.join(METHODS)}")
    if args.substitute is None and args.random_init_blackbox and set(methods) - {"rda"}:
        raise FlagError("--random-init-blackbox without --substitute only supports --method rda")
    report = _run_suite(args, methods)
    export_report(report, args.report)
    for key in sorted(report.cells):
        cell = report.cells[key]
        print(f"{cell.mode:5s} {cell.method:8s} eps={cell.epsilon:g} success_rate={cell.success_rate:.4f}")
    print(f"report written to {args.report}")
    return EXIT_OK


def cmd_angles(args):
    if args.from_report:
        report = load_report(args.from_report)
    else:
        if args.model is None or args.test is None:
            raise FlagError("angles needs --from-report, or --model and --test to run RDA inline")
        report = _run_suite(args, ["fgsm", "rda"])
    wanted = None
    if args.from_report and args.eps != DEFAULT_EPS:
        wanted = set(_csv_list(args.eps, float, "eps"))
    cells = [
        c
        for k, c in sorted(report.cells.items())
        if c.method == "rda" and c.mode == args.mode and (wanted is None or c.epsilon in wanted)
    ]
    if not cells:
        raise EmptyResult("no qualifying samples: the report holds no matching RDA results")
    pooled = []
    for cell in cells:
        stats = angle_statistics(cell.records, args.filter)
        if stats is None:
            print(f"eps={cell.epsilon:g}: no qualifying samples")
            continue
        print(
            f"eps={cell.epsilon:g}: n={stats['count']} min={stats['min']:.2f} "
            f"max={stats['max']:.2f} mean={stats['mean']:.2f}"
        )
        pop = cell.records if args.filter == "all" else [r for r in cell.records if r.success and not r.initial_success]
        pooled.extend(r.angle_deg for r in pop)
    bin_width = args.bin_width
    counts = angle_histogram(pooled, bin_width)
    if args.histogram:
        with open(args.histogram, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("bin_start_deg", "count"))
            for k, c in enumerate(counts):
                writer.writerow((k * bin_width, c))
    if not pooled:
        raise EmptyResult("no qualifying samples")
    return EXIT_OK


def cmd_report(args):
    report = load_report(args.input)
    text = report_to_csv(report)
    sys.stdout.write(text)
    if args.csv:
        export_report(report, args.csv, format="csv")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "angles": cmd_angles, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on unknown or malformed flags
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except FlagError as exc:
        parser.print_usage(sys.stderr)
        print(f"rdattack: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (DataFormatError, ModelFormatError, ShapeError) as exc:
        print(f"rdattack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"rdattack: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EmptyResult as exc:
        print(f"rdattack: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
