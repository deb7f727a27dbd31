"""``maxlogit-kd`` command line.

Exit codes: 0 success, 1 a verification property failed, 2 usage, config or
input error. Set ``MAXLOGIT_KD_LOG`` (DEBUG, INFO, WARNING, ...) for log output.
"""

import argparse
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__, experiments, verify
from .config import load_config
from .errors import KDError
from .temperature import MAX_LOGIT, STATIC

log = logging.getLogger("maxlogit_kd")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config (INI); default: bundled reference config")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", type=Path, help="override run.out_dir")

    parser = _Parser(prog="maxlogit-kd", description="Max-logit temperature distillation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-teacher", parents=[common], help="train and save the teacher")
    p.add_argument("--epochs", type=_positive_int, help="override run.teacher_epochs")

    p = sub.add_parser("distill", parents=[common], help="distill a student and compare with CE-only")
    p.add_argument("--policy", choices=(MAX_LOGIT, STATIC), help="override temperature.kind")
    p.add_argument("--tau", type=float, help="override temperature.static_tau")
    p.add_argument("--teacher", type=Path, help="teacher checkpoint (default: <out>/teacher.ckpt)")
    p.add_argument("--precompute", action="store_true", help="cache teacher logits once")
    p.add_argument("--epochs", type=_positive_int, help="override run.epochs")

    p = sub.add_parser("verify", help="run the randomized property suite")
    p.add_argument("--samples", type=_positive_int, default=1000, help="instances per property")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("ablate", parents=[common], help="sweep lambda_kd")
    p.add_argument("--lambda-kd", type=_float_list,
                   default=list(experiments.DEFAULT_LAMBDAS), help="comma-separated values")
    p.add_argument("--lambda-ce", type=float, default=1.0)
    p.add_argument("--teacher", type=Path)
    p.add_argument("--epochs", type=_positive_int, help="override run.epochs")
    p.add_argument("--jobs", type=_positive_int, default=1,
                   help="parallel runs; more than 1 drops the wall-clock column")

    p = sub.add_parser("bench", parents=[common], help="time the temperature computation")
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--epochs", type=_positive_int, help="override run.bench_epochs")
    p.add_argument("--teacher", type=Path)
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_out_dir(args.out)
    base = args.config.parent if args.config else Path.cwd()
    return cfg, cfg.dataset.build(base), Path(cfg.run.out_dir)


def cmd_train_teacher(args):
    cfg, dataset, out = _load(args)
    if args.epochs:
        cfg = replace(cfg, run=replace(cfg.run, teacher_epochs=args.epochs))
    result = experiments.train_reference_teacher(cfg, dataset)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = experiments.save_checkpoint(result.model, out / experiments.TEACHER_FILE)
    csv_path = experiments.write_metrics(out / "teacher_metrics.csv", result)
    print(f"teacher val_top1 {result.final.val_top1:.4f}")
    print(f"wrote {ckpt}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_distill(args):
    cfg, dataset, out = _load(args)
    temp = cfg.temperature
    if args.policy:
        temp = replace(temp, kind=args.policy)
    if args.tau is not None:
        temp = replace(temp, static_tau=args.tau)
    cfg = replace(cfg, temperature=temp)
    if args.precompute:
        cfg = replace(cfg, run=replace(cfg.run, precompute_teacher=True))

    teacher, _ = experiments.resolve_teacher(cfg, dataset, args.teacher)
    cache = None
    if cfg.run.precompute_teacher:
        cache = experiments.resolve_logits_cache(teacher, dataset, out / experiments.LOGITS_FILE)
    comparison = experiments.run_comparison(cfg, dataset, teacher, args.epochs, cache)

    out.mkdir(parents=True, exist_ok=True)
    paths = [
        experiments.write_metrics(out / "distill_metrics.csv", comparison.kd),
        experiments.write_metrics(out / "baseline_metrics.csv", comparison.baseline),
    ]
    report = out / "report.md"
    report.write_text(experiments.render_report(cfg, comparison), encoding="utf-8")
    paths.append(report)
    print(f"distilled val_top1 {comparison.kd.final.val_top1:.4f}, "
          f"CE-only {comparison.baseline.final.val_top1:.4f}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_verify(args):
    results = verify.run_all(args.samples, args.seed, fault=args.inject_fault)
    print(verify.format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)} of {len(results)} properties passed")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


def cmd_ablate(args):
    cfg, dataset, out = _load(args)
    teacher, _ = experiments.resolve_teacher(cfg, dataset, args.teacher)
    rows, columns = experiments.run_ablation(cfg, dataset, teacher, args.lambda_kd,
                                             args.lambda_ce, args.epochs, args.jobs)
    path = experiments.write_rows(out / "ablation.csv", columns, rows)
    for row in rows:
        print(f"lambda_kd {row['lambda_kd']:>6g}  val_top1 {row['final_val_top1']:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args):
    cfg, dataset, out = _load(args)
    teacher, _ = experiments.resolve_teacher(cfg, dataset, args.teacher)
    epochs = args.epochs or cfg.run.bench_epochs
    rows, summaries, gap = experiments.run_bench(cfg, dataset, teacher, args.repeats, epochs)
    csv_path = experiments.write_rows(out / "bench.csv", experiments.BENCH_COLUMNS, rows)
    text = experiments.render_bench(summaries, gap, epochs)
    md_path = out / "bench.md"
    md_path.write_text(text, encoding="utf-8")
    print(text)
    print(f"wrote {csv_path}")
    print(f"wrote {md_path}")
    return EXIT_OK


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "verify": cmd_verify,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


def _setup_logging():
    level = os.environ.get("MAXLOGIT_KD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except (KDError, OSError, ValueError) as exc:
        print(f"maxlogit-kd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
