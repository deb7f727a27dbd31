"""Experiment recipes shared by the command line and the acceptance tests."""

import csv
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import check_compatible, load_checkpoint, load_logits, save_checkpoint, save_logits
from .errors import IncompatibleCheckpoint
from .kd_losses import LossWeights
from .temperature import MAX_LOGIT, STATIC
from .training import CSV_COLUMNS, TIMING_COLUMNS, accuracy, distill, teacher_logits, train_teacher

log = logging.getLogger(__name__)

TEACHER_FILE = "teacher.ckpt"
LOGITS_FILE = "teacher_logits.bin"
DEFAULT_LAMBDAS = (0.9, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0)
STATIC_REFERENCE = (2.0, 4.0)
ABLATION_COLUMNS = ("lambda_kd", "lambda_ce", "final_val_top1", "final_total", "final_ce",
                    "final_kd", "final_mean_tau", "final_mean_correlation", "wall_s")
BENCH_COLUMNS = ("mode", "repeat", "epoch", "epoch_wall_ms", "temp_compute_ms", "ratio")


def write_rows(path, columns, rows):
    """CSV with a header; floats are written with ``repr`` so reruns compare byte for byte."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in (row[c] for c in columns)])
    return path


def write_metrics(path, result, timing=True):
    columns = CSV_COLUMNS if timing else tuple(c for c in CSV_COLUMNS if c not in TIMING_COLUMNS)
    return write_rows(path, columns, [m.row() for m in result.metrics])


def train_reference_teacher(cfg, dataset):
    spec = cfg.teacher.spec(dataset.n_features, dataset.n_classes, cfg.teacher_seed)
    return train_teacher(dataset, spec, cfg.optimizer, cfg.run.teacher_epochs)


def resolve_teacher(cfg, dataset, path=None):
    """Load the teacher at ``path`` (default ``<out>/teacher.ckpt``), training and saving it if absent.

    An explicitly given path must exist. Returns ``(model, path)``.
    """
    explicit = path is not None
    path = Path(path) if explicit else Path(cfg.run.out_dir) / TEACHER_FILE
    if path.exists():
        teacher = load_checkpoint(path)
        check_compatible(teacher, dataset.n_features, dataset.n_classes)
        return teacher, path
    if explicit:
        raise FileNotFoundError(f"teacher checkpoint not found: {path}")
    log.info("no teacher at %s; training one", path)
    teacher = train_reference_teacher(cfg, dataset).model
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(teacher, path)
    return teacher, path


def resolve_logits_cache(teacher, dataset, path):
    """Cached teacher logits for the training split, rebuilt when stale or foreign."""
    path = Path(path)
    x_train, y_train = dataset.train
    checksum = teacher.checksum()
    if path.exists():
        try:
            logits, _ = load_logits(path, expected_checksum=checksum)
            if logits.shape == (len(y_train), dataset.n_classes):
                return logits
            log.warning("%s has shape %s; rebuilding", path, logits.shape)
        except IncompatibleCheckpoint as exc:
            log.warning("%s; rebuilding", exc)
    logits = teacher_logits(teacher, x_train)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_logits(logits, checksum, path)
    return logits


def student_spec(cfg, dataset):
    return cfg.student.spec(dataset.n_features, dataset.n_classes, cfg.student_seed)


def run_student(cfg, dataset, teacher, epochs=None, weights=None, cached_logits=None):
    """One distillation run as configured; the CE-only baseline shares the student seed."""
    return distill(
        dataset, teacher, student_spec(cfg, dataset), cfg.optimizer,
        weights=cfg.loss if weights is None else weights,
        policy=cfg.temperature,
        epochs=cfg.run.epochs if epochs is None else epochs,
        precompute_teacher=cfg.run.precompute_teacher or cached_logits is not None,
        cached_logits=cached_logits,
    )


def run_baseline(cfg, dataset, epochs=None):
    return train_teacher(dataset, student_spec(cfg, dataset), cfg.optimizer,
                         cfg.run.epochs if epochs is None else epochs)


@dataclass
class Comparison:
    kd: object
    baseline: object
    teacher_val: float


def median_ratio(result):
    ratios = [m.temp_compute_ms / m.epoch_wall_ms for m in result.metrics if m.epoch_wall_ms > 0]
    return float(np.median(ratios)) if ratios else float("nan")


def _fmt(x, digits=4):
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{digits}f}"


def render_report(cfg, comparison):
    kd, base = comparison.kd, comparison.baseline
    first, last = kd.metrics[0], kd.final
    policy = cfg.temperature
    tau_note = (f"static tau = {policy.static_tau:g}" if policy.kind == STATIC
                else f"max-logit, order a = {policy.order_a}, floor = {policy.floor:g}"
                + (", |z| peaks" if policy.strict_abs_max else ""))
    delta = last.val_top1 - base.final.val_top1
    lines = [
        "# Distillation report",
        "",
        f"- config: `{cfg.source}`",
        f"- seed: {cfg.run.seed} (teacher {cfg.teacher_seed}, student {cfg.student_seed})",
        f"- epochs: {len(kd.metrics)}",
        f"- temperature: {tau_note}",
        f"- loss weights: lambda_ce = {cfg.loss.lambda_ce:g}, lambda_kd = {cfg.loss.lambda_kd:g}",
        "",
        "## Validation top-1",
        "",
        "| model | val_top1 |",
        "|---|---|",
        f"| teacher | {_fmt(comparison.teacher_val)} |",
        f"| student, CE only | {_fmt(base.final.val_top1)} |",
        f"| student, distilled | {_fmt(last.val_top1)} |",
        "",
        f"Distilled minus CE-only: {delta:+.4f}.",
        "",
        "## Temperatures",
        "",
        f"- mean tau, final epoch: {_fmt(last.mean_tau, 3)}",
        f"- tau range over the run: [{_fmt(kd.tau_min, 3)}, {_fmt(kd.tau_max, 3)}]",
        f"- batches with non-constant tau: {kd.batches_with_varying_tau} of {kd.batches}",
    ]
    for ref in STATIC_REFERENCE:
        lines.append(f"- mean tau relative to static tau = {ref:g}: {last.mean_tau / ref:.3f}x")
    lines += [
        "",
        "## Teacher-student correlation",
        "",
        f"- epoch 1: {_fmt(first.mean_correlation)}",
        f"- final epoch: {_fmt(last.mean_correlation)}",
        f"- change: {last.mean_correlation - first.mean_correlation:+.4f}",
        "",
        "## Housekeeping",
        "",
        f"- skipped constant-logit samples: {sum(m.skipped_samples for m in kd.metrics)}",
        f"- median temp_compute_ms / epoch_wall_ms: {median_ratio(kd):.4f}",
        "",
    ]
    return "\n".join(lines)


def run_comparison(cfg, dataset, teacher, epochs=None, cached_logits=None):
    kd = run_student(cfg, dataset, teacher, epochs, cached_logits=cached_logits)
    base = run_baseline(cfg, dataset, epochs)
    x_val, y_val = dataset.val
    return Comparison(kd, base, accuracy(teacher, x_val.astype(teacher.dtype), y_val))


def dedupe_lambdas(values):
    seen = []
    for v in values:
        if v in seen:
            warnings.warn(f"duplicate lambda_kd {v:g} dropped", stacklevel=2)
        else:
            seen.append(v)
    return seen


def _ablation_row(args):
    cfg, dataset, teacher, lam, lambda_ce, epochs = args
    t0 = time.perf_counter()
    result = run_student(cfg, dataset, teacher, epochs, weights=replace(
        cfg.loss, lambda_ce=lambda_ce, lambda_kd=lam))
    last = result.final
    return {
        "lambda_kd": float(lam), "lambda_ce": float(lambda_ce),
        "final_val_top1": last.val_top1, "final_total": last.train_total,
        "final_ce": last.train_ce, "final_kd": last.train_kd,
        "final_mean_tau": last.mean_tau, "final_mean_correlation": last.mean_correlation,
        "wall_s": time.perf_counter() - t0,
    }


def run_ablation(cfg, dataset, teacher, lambdas=DEFAULT_LAMBDAS, lambda_ce=1.0, epochs=None, jobs=1):
    """One run per lambda_kd with the student seed held fixed.

    Returns ``(rows, columns)``. With ``jobs > 1`` runs go to a process pool and
    the wall-clock column is dropped, since concurrent timings are not comparable.
    """
    lambdas = dedupe_lambdas([float(v) for v in lambdas])
    if not lambdas:
        raise ValueError("need at least one lambda_kd value")
    for lam in lambdas:
        LossWeights(lambda_ce, lam)  # validate before any run starts
    tasks = [(cfg, dataset, teacher, lam, lambda_ce, epochs) for lam in lambdas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_ablation_row, tasks))
        return rows, tuple(c for c in ABLATION_COLUMNS if c != "wall_s")
    return [_ablation_row(t) for t in tasks], ABLATION_COLUMNS


@dataclass
class BenchSummary:
    mode: str
    repeats: int
    median_epoch_wall_ms: float
    median_temp_compute_ms: float
    median_ratio: float


BENCH_MODES = (
    ("max_logit", {"kind": MAX_LOGIT}, False),
    ("max_logit_precompute", {"kind": MAX_LOGIT}, True),
    ("teacher_only", {"kind": MAX_LOGIT, "teacher_only": True}, False),
    ("teacher_only_precompute", {"kind": MAX_LOGIT, "teacher_only": True}, True),
    ("static", {"kind": STATIC}, False),
)
PRECOMPUTE_PAIRS = (("max_logit", "max_logit_precompute"), ("teacher_only", "teacher_only_precompute"))


def run_bench(cfg, dataset, teacher, repeats=3, epochs=None):
    """Time the temperature step under each policy, live and with cached teacher logits.

    Returns ``(rows, summaries, trajectory_gap)`` where the gap is the largest
    per-batch loss difference between a live run and its precomputed twin.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    epochs = cfg.run.bench_epochs if epochs is None else epochs
    cache = teacher_logits(teacher, dataset.train[0])
    rows, summaries, traces = [], {}, {}
    for name, overrides, precompute in BENCH_MODES:
        run_cfg = replace(cfg, temperature=replace(cfg.temperature, **overrides))
        walls, temps, ratios = [], [], []
        for r in range(repeats):
            result = run_student(run_cfg, dataset, teacher, epochs,
                                 cached_logits=cache if precompute else None)
            traces.setdefault(name, result.loss_trace)
            for m in result.metrics:
                ratio = m.temp_compute_ms / m.epoch_wall_ms
                rows.append({"mode": name, "repeat": r + 1, "epoch": m.epoch,
                             "epoch_wall_ms": m.epoch_wall_ms,
                             "temp_compute_ms": m.temp_compute_ms, "ratio": ratio})
                walls.append(m.epoch_wall_ms)
                temps.append(m.temp_compute_ms)
                ratios.append(ratio)
        summaries[name] = BenchSummary(name, repeats, float(np.median(walls)),
                                       float(np.median(temps)), float(np.median(ratios)))
    gap = max(float(np.max(np.abs(np.subtract(traces[a], traces[b])))) for a, b in PRECOMPUTE_PAIRS)
    return rows, summaries, gap


def render_bench(summaries, gap, epochs):
    repeats = next(iter(summaries.values())).repeats
    lines = [
        "# Temperature overhead benchmark",
        "",
        f"Medians over {repeats} repeat(s) of {epochs} epoch(s) each."
        + (" A single repeat gives noisy medians." if repeats == 1 else ""),
        "",
        "| mode | epoch_wall_ms | temp_compute_ms | temp / wall |",
        "|---|---|---|---|",
    ]
    for s in summaries.values():
        lines.append(f"| {s.mode} | {s.median_epoch_wall_ms:.2f} | {s.median_temp_compute_ms:.3f} "
                     f"| {s.median_ratio:.4f} |")
    lines += [
        "",
        "`teacher_only` takes each temperature from the teacher's peak alone, so with cached",
        "logits the whole temperature is loaded before training. The other max-logit modes",
        "still fold in the student's peak every batch.",
        "",
        f"Largest per-batch loss gap, live vs precomputed teacher logits: {gap:.3e}",
        "",
    ]
    return "\n".join(lines)
