"""Temperature policies: static, and the per-sample maximum-logit temperature.

The maximum-logit temperature is the smallest ``tau`` keeping the order-``a``
exp polynomial of ``max_z / tau`` inside the unit radius of the log series,
``sum_{i=1}^{a} (max_z / tau)^i / i! < 1``. For ``a = 1`` that is ``tau = max_z``
and for ``a = 2`` it is ``tau = max_z (1 + sqrt 3) / 2``. Every bound is linear
in ``max_z``, so it factors as ``max_z * unit_radius(a)``.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateLogits, InvalidOrder, LengthMismatch
from .logit_core import zscore_rows

SQRT3 = math.sqrt(3.0)

STATIC = "static"
MAX_LOGIT = "max_logit"


def _excess(s, n):
    """f^n(1/s) - 2 for the unit problem; negative inside the radius."""
    x = 1.0 / s
    term, total = 1.0, 0.0
    for i in range(1, n + 1):
        term *= x / i
        total += term
    return total - 1.0


def bisect_unit_radius(n, lo=0.1, hi=None):
    """Bisection for the unit-logit bound, run until the bracket stops shrinking."""
    if n < 1:
        raise InvalidOrder(f"order must be >= 1, got {n}")
    if hi is None:
        hi = 10.0 * n
    if not (_excess(lo, n) > 0 > _excess(hi, n)):
        raise RuntimeError(f"bracket [{lo}, {hi}] does not straddle the order-{n} bound")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _excess(mid, n) >= 0:
            lo = mid
        else:
            hi = mid
    return hi


@lru_cache(maxsize=None)
def unit_radius(n):
    if n < 1:
        raise InvalidOrder(f"order must be >= 1, got {n}")
    if n == 1:
        return 1.0
    if n == 2:
        return (1.0 + SQRT3) / 2.0
    return bisect_unit_radius(n)


def radius_bound(max_z, n):
    """Lower temperature bound for a positive maximum logit at expansion order ``n``.

    Orders 1 and 2 use the closed forms; higher orders solve the radius condition
    by bisection over ``[max_z / 10, 10 n max_z]`` to full double precision.
    """
    if n < 1:
        raise InvalidOrder(f"order must be >= 1, got {n}")
    if max_z <= 0:
        raise ValueError(f"max logit must be positive, got {max_z}")
    return max_z * unit_radius(n)


def radius_bound_bisect(max_z, n):
    """Same bound as ``radius_bound`` but always via bisection, for self-consistency checks."""
    if max_z <= 0:
        raise ValueError(f"max logit must be positive, got {max_z}")
    return max_z * bisect_unit_radius(n)


@dataclass(frozen=True)
class TemperaturePolicy:
    kind: str = MAX_LOGIT
    static_tau: float = 4.0
    order_a: int = 2
    floor: float = 1.0
    strict_abs_max: bool = False
    teacher_only: bool = False  # ignore the student's peak, so tau can be precomputed

    def __post_init__(self):
        if self.kind not in (STATIC, MAX_LOGIT):
            raise ValueError(f"unknown temperature kind {self.kind!r}")
        if not self.static_tau > 0:
            raise ValueError("static_tau must be positive")
        if self.order_a < 1:
            raise InvalidOrder(f"order_a must be >= 1, got {self.order_a}")
        if not self.floor >= 1:
            raise ValueError("floor must be >= 1")

    def upper_bound(self, n_classes):
        """Largest temperature this policy can emit for ``n_classes`` z-scored logits."""
        if self.kind == STATIC:
            return self.static_tau
        return max(radius_bound(math.sqrt(n_classes - 1), self.order_a), self.floor)


def _peak(z, strict_abs_max):
    return np.abs(z).max(axis=-1) if strict_abs_max else z.max(axis=-1)


def mlt_temperature(zt, zs, policy):
    """Maximum-logit temperature for one z-scored teacher/student pair."""
    if policy.kind != MAX_LOGIT:
        raise ValueError("mlt_temperature needs a max_logit policy")
    zt = np.asarray(zt, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    if zt.shape != zs.shape:
        raise LengthMismatch(f"shapes differ: {zt.shape} vs {zs.shape}")
    m_tau = float(_peak(zt, policy.strict_abs_max))
    if not policy.teacher_only:
        m_tau = max(m_tau, float(_peak(zs, policy.strict_abs_max)))
    return max(radius_bound(m_tau, policy.order_a), policy.floor)


def taus_from_peaks(teacher_peak, student_peak, policy):
    """Vectorized tail of ``mlt_temperature`` given per-sample peaks."""
    m_tau = np.array(teacher_peak, dtype=np.float64) if policy.teacher_only \
        else np.maximum(teacher_peak, student_peak)
    m_tau *= unit_radius(policy.order_a)
    return np.maximum(m_tau, policy.floor, out=m_tau)


def taus_from_zscores(zt, zs, policy):
    """Per-row temperatures for already standardized ``(B, K)`` arrays."""
    if policy.kind == STATIC:
        return np.full(zt.shape[0], policy.static_tau, dtype=np.float64)
    if policy.teacher_only:
        m_tau = _peak(zt, policy.strict_abs_max)
    elif policy.strict_abs_max:
        m_tau = np.maximum(np.abs(zt).max(axis=-1), np.abs(zs).max(axis=-1))
    else:
        # max over both rows at once equals max(max(zt), max(zs))
        m_tau = np.maximum(zt, zs).max(axis=-1)
    m_tau *= unit_radius(policy.order_a)
    return np.maximum(m_tau, policy.floor, out=m_tau)


def teacher_taus(zt, policy):
    """The teacher's share of the temperature, ``max(c * peak(zt), floor)``.

    Since ``c * max(a, b) == max(c * a, c * b)`` exactly in floating point,
    ``complete_taus`` on this value reproduces ``taus_from_zscores`` bit for bit.
    """
    if policy.kind == STATIC:
        return np.full(np.shape(zt)[0], policy.static_tau, dtype=np.float64)
    m_tau = _peak(np.asarray(zt, dtype=np.float64), policy.strict_abs_max)
    m_tau *= unit_radius(policy.order_a)
    return np.maximum(m_tau, policy.floor, out=m_tau)


def complete_taus(teacher_part, zs, policy):
    """Fold the student's peak into precomputed ``teacher_taus``."""
    if policy.kind == STATIC or policy.teacher_only:
        return teacher_part.copy()
    m_tau = _peak(zs, policy.strict_abs_max)
    m_tau *= unit_radius(policy.order_a)
    return np.maximum(m_tau, teacher_part, out=m_tau)


def batch_temperatures(teacher_logits, student_logits, policy):
    """One temperature per sample; each row is z-scored first.

    Raises:
        DegenerateLogits: carrying the index of the first constant row.
    """
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    if t.shape != s.shape:
        raise LengthMismatch(f"shapes differ: {t.shape} vs {s.shape}")
    if t.shape[0] < 1:
        raise ValueError("empty batch")
    zt, _, bad_t = zscore_rows(t)
    zs, _, bad_s = zscore_rows(s)
    bad = bad_t | bad_s
    if np.any(bad):
        raise DegenerateLogits(index=int(np.flatnonzero(bad)[0]))
    return taus_from_zscores(zt, zs, policy)


