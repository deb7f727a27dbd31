"""Training objectives for z-score distillation and their gradients w.r.t. student logits.

The KD term for one sample is ``tau^2 * KL(softmax(zt / tau) || softmax(zs / tau))``
with ``zt``, ``zs`` the z-scored teacher and student logits. Cross-entropy is taken on
the raw student logits at unit temperature. Both terms are averaged over the batch
and temperatures are held constant when differentiating.
"""

from dataclasses import dataclass

import numpy as np

from . import logit_core
from .errors import DegenerateLogits, LabelOutOfRange, LengthMismatch
from .temperature import TemperaturePolicy, taus_from_zscores


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 0.1
    lambda_kd: float = 9.0
    kl_per_class: bool = False  # divide the KL sum by the class count

    def __post_init__(self):
        if self.lambda_ce < 0 or self.lambda_kd < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_ce == 0 and self.lambda_kd == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossBreakdown:
    total: float
    ce: float
    kd: float
    per_sample_tau: np.ndarray
    per_sample_correlation: np.ndarray


def ce_loss(student_logits, label):
    logits = np.asarray(student_logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise LabelOutOfRange(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-logit_core.log_softmax_t(logits, 1.0)[label])


def kd_loss(teacher_logits, student_logits, tau, kl_per_class=False):
    """tau^2 * KL(teacher || student) on z-scored, temperature-compressed logits."""
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise LengthMismatch(f"shapes differ: {t.shape} vs {s.shape}")
    zt = logit_core.zscore(t)
    zs = logit_core.zscore(s)
    p = logit_core.softmax_t(zt, tau)
    q = logit_core.softmax_t(zs, tau)
    return float(tau**2 * logit_core.kl_divergence(p, q, mean_normalized=kl_per_class))


def _prepare(teacher_logits, student_logits, labels):
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if t.shape != s.shape:
        raise LengthMismatch(f"teacher {t.shape} vs student {s.shape}")
    if y.shape != (s.shape[0],):
        raise LengthMismatch(f"{y.shape[0]} labels for {s.shape[0]} samples")
    if s.shape[0] == 0:
        raise ValueError("empty batch")
    if np.any(y < 0) or np.any(y >= s.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {s.shape[1]})")
    return t, s, y.astype(np.int64)


def loss_and_gradient(teacher_logits, student_logits, labels, weights, policy, taus=None):
    """Combined loss and its gradient w.r.t. the ``(B, K)`` student logits.

    ``taus`` overrides the policy with fixed per-sample temperatures, which is
    what a finite-difference check needs.

    Returns:
        ``(LossBreakdown, grad)`` with ``grad`` shaped like ``student_logits``.
    """
    t, s, y = _prepare(teacher_logits, student_logits, labels)
    zt, _, bad_t = logit_core.zscore_rows(t)
    zs, sigma_s, bad_s = logit_core.zscore_rows(s)
    bad = bad_t | bad_s
    if np.any(bad):
        raise DegenerateLogits(index=int(np.flatnonzero(bad)[0]))
    if taus is None:
        taus = taus_from_zscores(zt, zs, policy)
    return objective(s, y, zt, zs, sigma_s, taus, weights)


def objective(student_logits, labels, zt, zs, sigma_s, taus, weights):
    """Loss and gradient from pre-standardized logits.

    ``zs`` and ``sigma_s`` must come from ``zscore_rows(student_logits)``; the
    gradient is taken w.r.t. the raw student logits.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    batch, n_classes = s.shape
    rows = np.arange(batch)
    taus = np.broadcast_to(np.asarray(taus, dtype=np.float64), (batch,))

    log_p1 = logit_core.log_softmax_t(s, 1.0)
    ce_each = -log_p1[rows, labels]
    grad_ce = np.exp(log_p1)
    grad_ce[rows, labels] -= 1.0

    kl_scale = 1.0 / n_classes if weights.kl_per_class else 1.0
    log_pt = logit_core.log_softmax_t(zt, taus)
    log_qs = logit_core.log_softmax_t(zs, taus)
    pt = np.exp(log_pt)
    kl_each = np.sum(pt * (log_pt - log_qs), axis=1) * kl_scale
    kd_each = taus**2 * kl_each

    # d(tau^2 KL)/dzs = tau (q - p); then through the z-score Jacobian
    # (I - 11^T/K - z z^T/K) / sigma, which is symmetric
    g_z = (taus * kl_scale)[:, None] * (np.exp(log_qs) - pt)
    g_mean = g_z.mean(axis=1, keepdims=True)
    g_proj = np.mean(zs * g_z, axis=1, keepdims=True)
    grad_kd = (g_z - g_mean - zs * g_proj) / sigma_s[:, None]

    ce = float(np.mean(ce_each))
    kd = float(np.mean(kd_each))
    grad = (weights.lambda_ce * grad_ce + weights.lambda_kd * grad_kd) / batch
    breakdown = LossBreakdown(
        total=weights.lambda_ce * ce + weights.lambda_kd * kd,
        ce=ce,
        kd=kd,
        per_sample_tau=np.array(taus),
        per_sample_correlation=logit_core.correlation(zt, zs),
    )
    return breakdown, grad


def combined_loss(teacher_logits, student_logits, labels, weights=LossWeights(),
                  policy=TemperaturePolicy(), taus=None):
    return loss_and_gradient(teacher_logits, student_logits, labels, weights, policy, taus)[0]


def loss_gradient(teacher_logits, student_logits, labels, weights=LossWeights(),
                  policy=TemperaturePolicy(), taus=None):
    return loss_and_gradient(teacher_logits, student_logits, labels, weights, policy, taus)[1]


def ce_only(student_logits, labels):
    """Mean cross-entropy and its gradient; the teacher-free path used for plain training."""
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    rows = np.arange(s.shape[0])
    log_p = logit_core.log_softmax_t(s, 1.0)
    grad = np.exp(log_p)
    grad[rows, y] -= 1.0
    return float(np.mean(-log_p[rows, y])), grad / s.shape[0]
