"""Taylor-polynomial stand-ins for exp/softmax/log and the approximate KL they induce.

The approximate KL applies the order-``n`` exp polynomial to ``t = z / tau`` and
expands every logarithm as a truncated ``log(1 + x)`` series. On z-scored inputs
with ``n = m = 1`` it reduces exactly to ``(1 - rho) / (N tau^2)``, ``rho`` being the
teacher/student correlation.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import logit_core
from .errors import InvalidOrder, LengthMismatch, NonPositiveExpansion, OutOfRadius


@dataclass(frozen=True)
class ApproxConfig:
    """Orders of the two expansions.

    ``n`` is the degree of the exp polynomial and ``m`` the degree of the log
    polynomial (``m = 1`` keeps only the linear term ``log(1 + x) ~ x``).
    """

    n: int = 2
    m: int = 2

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidOrder(f"orders must be >= 1, got n={self.n}, m={self.m}")

    @property
    def positivity_safe(self):
        # even-degree exp polynomials have no real roots
        return self.n % 2 == 0


@dataclass(frozen=True)
class ApproxKLReport:
    tau: float
    approx_value: float
    exact_value: float
    correlation_limit: float
    abs_gap_to_limit: float
    n_classes: int

    @property
    def scaled_gap(self):
        """Gap on the ``N tau^2`` scale, where the limit is ``1 - rho``."""
        return self.n_classes * self.tau**2 * self.abs_gap_to_limit


def taylor_exp(z, n):
    """sum_{i=0}^{n} z^i / i!, accumulated Horner style. Works elementwise on arrays."""
    if n < 0:
        raise InvalidOrder(f"order must be >= 0, got {n}")
    z = np.asarray(z, dtype=np.float64)
    acc = np.ones_like(z)
    for i in range(n, 0, -1):
        acc = 1.0 + z / i * acc
    return acc if acc.ndim else float(acc)


def taylor_softmax(z, n):
    """Softmax with exp replaced by its order-``n`` polynomial."""
    if n < 1:
        raise InvalidOrder(f"order must be >= 1, got {n}")
    f = np.asarray(taylor_exp(z, n))
    if np.any(f <= 0):
        raise NonPositiveExpansion(
            f"order-{n} exp polynomial is non-positive at z={np.asarray(z)[f <= 0].min():.6g}"
        )
    return f / f.sum(axis=-1, keepdims=True)


def taylor_log(x_minus_1, m):
    """sum_{i=0}^{m} (-1)^i x^{i+1} / (i+1), the series of log(1 + x).

    Note the sum has ``m + 1`` terms, so ``m = 0`` is the linear approximation.

    Raises:
        OutOfRadius: if any ``|x| >= 1``.
    """
    if m < 0:
        raise InvalidOrder(f"order must be >= 0, got {m}")
    x = np.asarray(x_minus_1, dtype=np.float64)
    if np.any(np.abs(x) >= 1.0):
        raise OutOfRadius(f"log series needs |x| < 1, got max |x| = {np.abs(x).max():.6g}")
    acc = np.zeros_like(x)
    power = x.copy()
    for i in range(m + 1):
        acc = acc + (-1) ** i * power / (i + 1)
        power = power * x
    return acc if acc.ndim else float(acc)


def _check_pair(zp, zq):
    zp = np.asarray(zp, dtype=np.float64)
    zq = np.asarray(zq, dtype=np.float64)
    if zp.shape != zq.shape:
        raise LengthMismatch(f"shapes differ: {zp.shape} vs {zq.shape}")
    return zp, zq


def approx_kl(zp, zq, tau, cfg=ApproxConfig()):
    """Series approximation of the mean-normalized KL between tempered softmaxes.

    Per class the numerator log-ratio is ``L(f(tp_i) - 1) - L(f(tq_i) - 1)``; the
    normalizer ratio ``sum f(tp) / sum f(tq)`` is expanded around the class count,
    ``L(mean f(tp) - 1) - L(mean f(tq) - 1)``, since ``log N`` cancels between the
    two sums. ``f`` is the degree-``cfg.n`` exp polynomial and ``L`` the
    degree-``cfg.m`` log polynomial.

    The caller is responsible for ``tau`` being above the radius bound; otherwise
    ``OutOfRadius`` or ``NonPositiveExpansion`` propagates.
    """
    zp, zq = _check_pair(zp, zq)
    n_classes = zp.shape[-1]
    tp = zp / tau
    tq = zq / tau
    fp = np.asarray(taylor_exp(tp, cfg.n))
    fq = np.asarray(taylor_exp(tq, cfg.n))
    weights = taylor_softmax(tp, cfg.n)
    if np.any(fq <= 0):
        raise NonPositiveExpansion(f"order-{cfg.n} exp polynomial is non-positive on the student side")
    log_deg = cfg.m - 1
    numer = np.asarray(taylor_log(fp - 1.0, log_deg)) - np.asarray(taylor_log(fq - 1.0, log_deg))
    denom = (np.asarray(taylor_log(fp.mean(axis=-1) - 1.0, log_deg))
             - np.asarray(taylor_log(fq.mean(axis=-1) - 1.0, log_deg)))
    out = np.sum(weights * (numer - np.asarray(denom)[..., None]), axis=-1) / n_classes
    return out if np.ndim(out) else float(out)


def first_order_terms(zp, zq, tau):
    """Brute-force sum of (1 + tp_i)(tp_i - tq_i) / N^2, the n = m = 1 expansion term by term."""
    zp, zq = _check_pair(zp, zq)
    n_classes = zp.shape[-1]
    tp, tq = zp / tau, zq / tau
    total = 0.0
    for a, b in zip(tp.tolist(), tq.tolist()):
        total += (1.0 + a) * (a - b) / n_classes**2
    return total


def first_order_kl_closed_form(zp, zq, tau):
    """(1 - rho) / (N tau^2) for z-scored ``zp``, ``zq``."""
    zp, zq = _check_pair(zp, zq)
    rho = logit_core.correlation(zp, zq)
    out = (1.0 - rho) / (zp.shape[-1] * np.asarray(tau, dtype=np.float64) ** 2)
    return out if np.ndim(out) else float(out)


def exp_remainder_bound(z, n):
    """Lagrange bound e^|z| |z|^(n+1) / (n+1)! on |e^z - taylor_exp(z, n)|."""
    if n < 0:
        raise InvalidOrder(f"order must be >= 0, got {n}")
    a = np.abs(np.asarray(z, dtype=np.float64))
    out = np.exp(a) * a ** (n + 1) / math.factorial(n + 1)
    return out if out.ndim else float(out)


def convergence_sweep(zp, zq, cfg, tau_grid, strict_abs_max=False):
    """Evaluate approx KL, exact KL and the correlation limit for each temperature.

    Every ``tau`` must be at or above the radius bound for ``cfg.n`` computed from
    the larger maximum logit of the pair.
    """
    from .temperature import radius_bound

    zp, zq = _check_pair(zp, zq)
    if strict_abs_max:
        peak = max(np.abs(zp).max(), np.abs(zq).max())
    else:
        peak = max(zp.max(), zq.max())
    bound = radius_bound(float(peak), cfg.n)
    reports = []
    for tau in tau_grid:
        if tau < bound:
            raise ValueError(f"tau={tau} is below the order-{cfg.n} radius bound {bound:.6g}")
        approx = approx_kl(zp, zq, tau, cfg)
        exact = float(logit_core.kl_divergence(
            logit_core.softmax_t(zp, tau), logit_core.softmax_t(zq, tau), mean_normalized=True))
        limit = first_order_kl_closed_form(zp, zq, tau)
        reports.append(ApproxKLReport(
            tau=float(tau),
            approx_value=approx,
            exact_value=exact,
            correlation_limit=limit,
            abs_gap_to_limit=abs(approx - limit),
            n_classes=zp.shape[-1],
        ))
    return reports
