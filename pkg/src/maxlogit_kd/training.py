"""Teacher training and the per-sample-temperature distillation loop.

Models train in float32; losses, z-scores and temperatures are computed in
float64. Each epoch shuffles the training split with ``default_rng([seed, epoch])``.
"""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kd_losses, logit_core
from .checkpoint import check_compatible
from .kd_losses import LossWeights
from .mlp import Sgd, init_mlp, predict
from .temperature import TemperaturePolicy, complete_taus, teacher_taus, taus_from_zscores

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "epoch", "total", "ce", "kd", "mean_tau", "mean_correlation",
    "val_top1", "epoch_wall_ms", "temp_compute_ms", "skipped_samples",
)
TIMING_COLUMNS = ("epoch_wall_ms", "temp_compute_ms")


@dataclass
class EpochMetrics:
    epoch: int
    train_total: float
    train_ce: float
    train_kd: float
    mean_tau: float
    mean_correlation: float
    val_top1: float
    epoch_wall_ms: float
    temp_compute_ms: float
    skipped_samples: int = 0

    def row(self):
        d = asdict(self)
        return {
            "epoch": d["epoch"],
            "total": d["train_total"],
            "ce": d["train_ce"],
            "kd": d["train_kd"],
            "mean_tau": d["mean_tau"],
            "mean_correlation": d["mean_correlation"],
            "val_top1": d["val_top1"],
            "epoch_wall_ms": d["epoch_wall_ms"],
            "temp_compute_ms": d["temp_compute_ms"],
            "skipped_samples": d["skipped_samples"],
        }


@dataclass
class TrainResult:
    model: object
    metrics: list
    tau_min: float = float("nan")
    tau_max: float = float("nan")
    batches: int = 0
    batches_with_varying_tau: int = 0
    loss_trace: list = field(default_factory=list)

    @property
    def final(self):
        return self.metrics[-1] if self.metrics else None


def accuracy(model, features, labels):
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict(model, features) == labels))


def epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_teacher(dataset, spec, opt, epochs, seed=None, dtype=np.float32):
    """Cross-entropy training from ``init_mlp(spec)``. ``seed`` drives shuffling (default: spec.seed)."""
    if spec.n_inputs != dataset.n_features or spec.n_outputs != dataset.n_classes:
        raise ValueError(f"spec {spec.layer_widths} does not fit a {dataset.n_features}-feature, "
                         f"{dataset.n_classes}-class dataset")
    seed = spec.seed if seed is None else seed
    model = init_mlp(spec, dtype)
    sgd = Sgd(opt)
    x_train, y_train = dataset.train
    x_train = x_train.astype(dtype)
    x_val, y_val = dataset.val
    x_val = x_val.astype(dtype)
    result = TrainResult(model, [])

    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = epoch_order(seed, epoch, len(y_train))
        total = 0.0
        for start in range(0, len(order), opt.batch_size):
            idx = order[start:start + opt.batch_size]
            logits = model.forward(x_train[idx], keep=True)
            loss, grad = kd_losses.ce_only(logits, y_train[idx])
            model_grads = model.backward(grad.astype(dtype))
            sgd.step(model, model_grads, epoch, epochs)
            total += loss * len(idx)
            result.loss_trace.append(loss)
        mean_loss = total / max(len(order), 1)
        val = accuracy(model, x_val, y_val)
        result.metrics.append(EpochMetrics(
            epoch=epoch + 1, train_total=mean_loss, train_ce=mean_loss, train_kd=0.0,
            mean_tau=float("nan"), mean_correlation=float("nan"), val_top1=val,
            epoch_wall_ms=(time.perf_counter() - t0) * 1e3, temp_compute_ms=0.0,
        ))
        log.debug("teacher epoch %d loss %.4f val %.4f", epoch + 1, mean_loss, val)
    return result


def teacher_logits(teacher, features, chunk=4096):
    """Teacher logits as float32, evaluated in float64 so batching does not change the bits."""
    t64 = teacher.astype(np.float64)
    x = np.asarray(features, dtype=np.float64)
    out = [t64.forward(x[i:i + chunk]) for i in range(0, len(x), chunk)]
    if not out:
        return np.empty((0, teacher.spec.n_outputs), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


def distill(dataset, teacher, student_spec, opt, weights=LossWeights(), policy=TemperaturePolicy(),
            epochs=60, precompute_teacher=False, seed=None, cached_logits=None, dtype=np.float32):
    """Train a student against a frozen teacher with per-sample temperatures.

    Per batch: teacher logits (live, or from the per-sample cache when
    ``precompute_teacher``), row-wise z-scores, per-sample temperatures, then the
    combined CE + tau^2 KD objective and an SGD step. Samples whose teacher or
    student logits are constant are skipped and counted.

    ``cached_logits`` may supply the cache (rows aligned with the training
    split); otherwise it is built here when ``precompute_teacher`` is set.
    ``temp_compute_ms`` times only the temperature evaluation itself.
    """
    n_classes = dataset.n_classes
    check_compatible(teacher, dataset.n_features, n_classes)
    if student_spec.n_inputs != dataset.n_features or student_spec.n_outputs != n_classes:
        raise ValueError(f"student spec {student_spec.layer_widths} does not fit the dataset")
    seed = student_spec.seed if seed is None else seed
    teacher_sum = teacher.checksum()
    teacher64 = teacher.astype(np.float64)

    student = init_mlp(student_spec, dtype)
    sgd = Sgd(opt)
    x_train, y_train = dataset.train
    x_val, y_val = dataset.val
    x_train32 = x_train.astype(dtype)
    x_val32 = x_val.astype(dtype)

    cache_z = cache_bad = cache_tau = None
    if precompute_teacher:
        if cached_logits is None:
            cached_logits = teacher_logits(teacher, x_train)
        if cached_logits.shape != (len(y_train), n_classes):
            raise ValueError(f"cached logits {cached_logits.shape} do not match the training split")
        cache_z, _, cache_bad = logit_core.zscore_rows(cached_logits.astype(np.float64))
        # the teacher's half of every temperature is fixed, so load it once
        cache_tau = teacher_taus(cache_z, policy)

    result = TrainResult(student, [])
    tau_lo, tau_hi = np.inf, -np.inf

    for epoch in range(epochs):
        t0 = time.perf_counter()
        temp_s = 0.0
        order = epoch_order(seed, epoch, len(y_train))
        sums = np.zeros(3)
        n_used = 0
        skipped = 0
        tau_sum = 0.0
        corr_sum = 0.0
        for start in range(0, len(order), opt.batch_size):
            idx = order[start:start + opt.batch_size]
            s_logits = student.forward(x_train32[idx], keep=True)
            zs, sigma_s, bad_s = logit_core.zscore_rows(s_logits.astype(np.float64))
            if precompute_teacher:
                zt, bad_t = cache_z[idx], cache_bad[idx]
            else:
                t_live = teacher64.forward(x_train[idx]).astype(np.float32)
                zt, _, bad_t = logit_core.zscore_rows(t_live.astype(np.float64))
            bad = bad_t | bad_s
            ok = ~bad
            n_ok = int(ok.sum())
            skipped += len(idx) - n_ok
            if n_ok == 0:
                continue
            if n_ok < len(idx):
                log.warning("skipping %d constant-logit samples", len(idx) - n_ok)

            if n_ok < len(idx):
                idx_ok = idx[ok]
                s_ok, zt, zs, sigma_s = s_logits[ok], zt[ok], zs[ok], sigma_s[ok]
            else:
                idx_ok, s_ok = idx, s_logits

            if precompute_teacher:
                t_part = cache_tau[idx_ok]
                t1 = time.perf_counter()
                taus = complete_taus(t_part, zs, policy)
            else:
                t1 = time.perf_counter()
                taus = taus_from_zscores(zt, zs, policy)
            temp_s += time.perf_counter() - t1

            breakdown, grad_ok = kd_losses.objective(
                s_ok, y_train[idx_ok], zt, zs, sigma_s, taus, weights)
            if n_ok < len(idx):
                grad = np.zeros(s_logits.shape, dtype=np.float64)
                grad[ok] = grad_ok
            else:
                grad = grad_ok
            sgd.step(student, student.backward(grad.astype(dtype)), epoch, epochs)

            sums += np.array([breakdown.total, breakdown.ce, breakdown.kd]) * n_ok
            n_used += n_ok
            tau_sum += float(taus.sum())
            corr_sum += float(breakdown.per_sample_correlation.sum())
            tau_lo = min(tau_lo, float(taus.min()))
            tau_hi = max(tau_hi, float(taus.max()))
            result.batches += 1
            if n_ok > 1 and taus.max() > taus.min():
                result.batches_with_varying_tau += 1
            result.loss_trace.append(breakdown.total)

        denom = max(n_used, 1)
        val = accuracy(student, x_val32, y_val)
        result.metrics.append(EpochMetrics(
            epoch=epoch + 1,
            train_total=sums[0] / denom,
            train_ce=sums[1] / denom,
            train_kd=sums[2] / denom,
            mean_tau=tau_sum / denom if n_used else float("nan"),
            mean_correlation=corr_sum / denom if n_used else float("nan"),
            val_top1=val,
            epoch_wall_ms=(time.perf_counter() - t0) * 1e3,
            temp_compute_ms=temp_s * 1e3,
            skipped_samples=skipped,
        ))
        log.debug("student epoch %d total %.4f tau %.3f corr %.4f val %.4f", epoch + 1,
                  sums[0] / denom, tau_sum / denom, corr_sum / denom, val)

    if teacher.checksum() != teacher_sum:
        raise RuntimeError("teacher parameters changed during distillation")
    result.tau_min, result.tau_max = (tau_lo, tau_hi) if result.batches else (float("nan"),) * 2
    return result
