"""Exact logit math: z-score standardization, tempered softmax, KL, correlation, entropy.

Everything here works on float64 and accepts either a single vector of shape
``(K,)`` or a batch of row vectors ``(B, K)``; reductions run over the last axis.
"""

import numpy as np

from .errors import DegenerateLogits, LengthMismatch

STD_EPS = 1e-8


def _as_float(v):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise ValueError("need at least two classes")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits must be finite")
    return arr


def population_std(v):
    v = np.asarray(v, dtype=np.float64)
    centered = v - v.mean(axis=-1, keepdims=True)
    return np.sqrt(np.mean(centered * centered, axis=-1))


def zscore_rows(v, eps=STD_EPS):
    """Standardize rows without raising.

    Returns ``(z, sigma, degenerate)`` where ``degenerate`` flags rows whose
    population std is ``<= eps``. Those rows of ``z`` are zero-filled so callers
    can mask them out.
    """
    v = _as_float(v)
    centered = v - v.mean(axis=-1, keepdims=True)
    sigma = np.sqrt(np.mean(centered * centered, axis=-1))
    degenerate = sigma <= eps
    safe = np.where(degenerate, 1.0, sigma)
    z = centered / safe[..., None]
    if np.any(degenerate):
        z = np.where(degenerate[..., None], 0.0, z)
    return z, sigma, degenerate


def zscore(v, eps=STD_EPS):
    """Return ``(v - mean(v)) / std(v)`` using the population std (divisor K).

    Raises:
        DegenerateLogits: if the std is ``<= eps``. For a batch the error
            carries the index of the first offending row.
    """
    z, _, degenerate = zscore_rows(v, eps)
    if np.any(degenerate):
        if degenerate.ndim == 0:
            raise DegenerateLogits()
        raise DegenerateLogits(index=int(np.flatnonzero(degenerate)[0]))
    return z


def _scaled(z, tau):
    z = np.asarray(z, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise ValueError("temperature must be positive")
    # per-row temperatures broadcast along the class axis
    return z / tau[..., None] if tau.ndim else z / tau


def softmax_t(z, tau=1.0):
    """Temperature-scaled softmax, stabilized by subtracting the row max."""
    t = _scaled(z, tau)
    t = t - t.max(axis=-1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_t(z, tau=1.0):
    t = _scaled(z, tau)
    t = t - t.max(axis=-1, keepdims=True)
    return t - np.log(np.exp(t).sum(axis=-1, keepdims=True))


def kl_divergence(p, q, mean_normalized=False):
    """KL(p || q) = sum p log(p / q) over the last axis.

    With ``mean_normalized`` the sum is divided by the class count, the
    ``1/N`` form used by the approximation analysis.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"shapes differ: {p.shape} vs {q.shape}")
    # 0 * log 0 contributes nothing
    terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    out = terms.sum(axis=-1)
    if mean_normalized:
        out = out / p.shape[-1]
    return out


def correlation(a, b):
    """(1/K) sum a_i b_i for z-scored inputs, i.e. Pearson correlation == cosine similarity."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return np.mean(a * b, axis=-1)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)
