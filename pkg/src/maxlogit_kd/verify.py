"""Randomized property checks over the numerical core.

Each check draws its own instances from a shared generator, compares the
implementation against an independent route (brute force, extended precision,
finite differences, grid scans) and reports the worst error seen.
"""

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from . import kd_losses, logit_core, taylor_approx, temperature
from .kd_losses import LossWeights
from .taylor_approx import ApproxConfig
from .temperature import TemperaturePolicy

CLASS_COUNTS = (5, 10, 100)
ENTROPY_TAUS = (1.0, 2.0, 4.0, 8.0, 16.0)
GRADIENT_BATCHES = 100
FD_STEP = 1e-5
LIMIT_TAU = 64.0
REMAINDER_GRID = 401
SCAN_STEP = 1e-6


@dataclass
class PropertyResult:
    name: str
    module: str
    instances: int
    failures: int
    worst: float
    tolerance: float

    @property
    def passed(self):
        return self.failures == 0 and self.instances > 0


def random_logits(rng, k=None, scale=None):
    k = int(rng.choice(CLASS_COUNTS)) if k is None else k
    scale = float(np.exp(rng.uniform(-1.0, 1.5))) if scale is None else scale
    return rng.normal(0.0, 1.0, size=k) * scale + rng.normal(0.0, 3.0)


def random_pair(rng, k=None):
    k = int(rng.choice(CLASS_COUNTS)) if k is None else k
    return logit_core.zscore(rng.normal(size=k)), logit_core.zscore(rng.normal(size=k))


def pearson_two_pass(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.sum() / len(a)
    db = b - b.sum() / len(b)
    return float(np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db)))


def exp_remainder_mp(z, n, dps=30):
    """|e^z - sum_{i<=n} z^i/i!| in extended precision.

    Sums the tail series directly, so tiny remainders near z = 0 do not drown
    in cancellation against e^z.
    """
    with mpmath.workdps(dps):
        x = mpmath.mpf(z)
        term = x ** (n + 1) / mpmath.factorial(n + 1)
        total = mpmath.mpf(0)
        i = n + 1
        while term != 0 and (i <= abs(z) + 1 or abs(term) > abs(total) * mpmath.mpf(10) ** (5 - dps)):
            total += term
            i += 1
            term = term * x / i
        return abs(total)


def grid_scan_bound(max_z, n, fine=1e-6):
    """Smallest grid temperature satisfying the radius condition.

    Scans ``[max_z / 10, 10 n max_z]`` on a 1e-3 grid to find the crossing cell,
    then rescans that cell on a ``fine`` grid. The condition is monotone in tau,
    so this equals a full scan at the fine step.
    """
    def inside(tau):
        x = max_z / tau
        total = np.zeros_like(tau)
        term = np.ones_like(tau)
        for i in range(1, n + 1):
            term = term * x / i
            total = total + term
        return total < 1.0

    coarse = np.arange(max_z / 10.0, 10.0 * n * max_z + 1e-3, 1e-3)
    first = int(np.argmax(inside(coarse)))
    lo = coarse[max(first - 1, 0)]
    grid = lo + fine * np.arange(int(round(1e-3 / fine)) + 2)
    return float(grid[np.argmax(inside(grid))])


def relative_error(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_difference_gradient(fn, x, h=FD_STEP):
    """Central differences of scalar ``fn`` w.r.t. every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn(x)
        flat[i] = old - h
        down = fn(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def _zscore_ext(v):
    centered = v - v.mean(axis=-1, keepdims=True)
    return centered / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True))


def _log_softmax_ext(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def reference_sample_losses(teacher, student, labels, taus, weights):
    """Per-sample combined loss written out independently in ``np.longdouble``."""
    ext = np.longdouble
    t = np.asarray(teacher, dtype=ext)
    s = np.asarray(student, dtype=ext)
    tau = np.asarray(taus, dtype=ext)[..., None]
    ce = -np.take_along_axis(_log_softmax_ext(s), np.asarray(labels)[..., None], axis=-1)[..., 0]
    log_p = _log_softmax_ext(_zscore_ext(t) / tau)
    log_q = _log_softmax_ext(_zscore_ext(s) / tau)
    kl = np.sum(np.exp(log_p) * (log_p - log_q), axis=-1)
    if weights.kl_per_class:
        kl = kl / s.shape[-1]
    return ext(weights.lambda_ce) * ce + ext(weights.lambda_kd) * tau[..., 0] ** 2 * kl


def reference_gradient(teacher, student, labels, taus, weights, h=FD_STEP):
    """Central-difference gradient of the batch-mean reference loss.

    Sample terms are independent, so column ``k`` of every row is perturbed at
    once and all ``2K`` perturbed batches are evaluated in one stacked call.
    """
    s = np.asarray(student, dtype=np.longdouble)
    batch, k = s.shape
    step = np.eye(k, dtype=np.longdouble)[:, None, :] * np.longdouble(h)
    stacked = np.concatenate([s[None] + step, s[None] - step])
    tile = (2 * k, 1, 1)
    losses = reference_sample_losses(
        np.tile(np.asarray(teacher, dtype=np.longdouble), tile), stacked,
        np.tile(np.asarray(labels), (2 * k, 1)), np.tile(np.asarray(taus), (2 * k, 1)), weights)
    diff = (losses[:k] - losses[k:]) / (2 * np.longdouble(h) * batch)
    return np.asarray(diff.T, dtype=np.float64)


def random_batch(rng, batch=None, k=None):
    batch = int(rng.choice((1, 8))) if batch is None else batch
    k = int(rng.choice(CLASS_COUNTS)) if k is None else k
    teacher = rng.normal(size=(batch, k)) * rng.uniform(0.5, 4.0)
    student = rng.normal(size=(batch, k)) * rng.uniform(0.5, 4.0)
    labels = rng.integers(0, k, size=batch)
    return teacher, student, labels


def gradient_check(rng, weights=LossWeights(), policy=TemperaturePolicy(), batch=None, k=None):
    """Max relative error between the analytic gradient of one random batch and the oracle.

    Temperatures are frozen at the unperturbed point, matching the stop-gradient
    treatment in training.
    """
    teacher, student, labels = random_batch(rng, batch, k)
    taus = kd_losses.combined_loss(teacher, student, labels, weights, policy).per_sample_tau
    analytic = kd_losses.loss_gradient(teacher, student, labels, weights, policy, taus=taus)
    numeric = reference_gradient(teacher, student, labels, taus, weights)
    return relative_error(analytic, numeric)


class _Tally:
    def __init__(self, name, module, tolerance):
        self.result = PropertyResult(name, module, 0, 0, 0.0, tolerance)

    def add(self, error, ok=None):
        r = self.result
        r.instances += 1
        if error is not None and np.isfinite(error):
            r.worst = max(r.worst, float(error))
        if ok is None:
            ok = error is not None and error <= r.tolerance
        if not ok:
            r.failures += 1


# -- logit_core -----------------------------------------------------------

def check_zscore_moments(rng, count, fault=False):
    t = _Tally("zscore_moments", "logit_core", 1e-9)
    for _ in range(count):
        z = logit_core.zscore(random_logits(rng))
        t.add(max(abs(z.mean()), abs(np.mean(z * z) - 1.0)))
    return t.result


def check_zscore_affine(rng, count, fault=False):
    t = _Tally("zscore_affine_invariance", "logit_core", 1e-7)
    for _ in range(count):
        v = random_logits(rng)
        a = float(np.exp(rng.uniform(-2, 2)))
        b = float(rng.normal(0, 10))
        t.add(float(np.max(np.abs(logit_core.zscore(a * v + b) - logit_core.zscore(v)))))
    return t.result


def check_softmax_scaling(rng, count, fault=False):
    t = _Tally("softmax_temperature_scaling", "logit_core", 1e-12)
    for _ in range(count):
        z = random_logits(rng)
        tau = float(np.exp(rng.uniform(-2, 3)))
        t.add(float(np.max(np.abs(logit_core.softmax_t(z, tau) - logit_core.softmax_t(z / tau, 1.0)))))
    return t.result


def check_softmax_argmax(rng, count, fault=False):
    t = _Tally("softmax_argmax_preserved", "logit_core", 0.0)
    for _ in range(count):
        z = random_logits(rng)
        tau = float(np.exp(rng.uniform(-2, 4)))
        same = int(np.argmax(logit_core.softmax_t(z, tau))) == int(np.argmax(z))
        t.add(0.0 if same else 1.0)
    return t.result


def check_entropy_monotone(rng, count, fault=False):
    t = _Tally("entropy_increasing_in_tau", "logit_core", 0.0)
    for _ in range(count):
        z = random_logits(rng)
        h = [float(logit_core.entropy(logit_core.softmax_t(z, tau))) for tau in ENTROPY_TAUS]
        steps = np.diff(h)
        # error is the size of the worst non-increase
        t.add(max(0.0, -float(steps.min())), ok=bool(np.all(steps > 0)))
    return t.result


def check_kl_gibbs(rng, count, fault=False):
    t = _Tally("kl_gibbs_inequality", "logit_core", 1e-9)
    for _ in range(count):
        k = int(rng.choice(CLASS_COUNTS))
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        d_pq = float(logit_core.kl_divergence(p, q))
        d_pp = float(logit_core.kl_divergence(p, p))
        t.add(abs(d_pp), ok=d_pq > 0 and abs(d_pp) <= 1e-9)
    return t.result


def check_correlation_pearson(rng, count, fault=False):
    t = _Tally("correlation_matches_pearson", "logit_core", 1e-9)
    for _ in range(count):
        k = int(rng.choice(CLASS_COUNTS))
        a, b = random_logits(rng, k), random_logits(rng, k)
        rho = float(logit_core.correlation(logit_core.zscore(a), logit_core.zscore(b)))
        t.add(abs(rho - pearson_two_pass(a, b)))
    return t.result


# -- taylor_approx ----------------------------------------------------------

def check_remainder_dominance(rng, count, fault=False):
    t = _Tally("exp_remainder_dominance", "taylor_approx", 0.0)
    zs = np.concatenate([np.linspace(-4.0, 4.0, min(max(count, 2), REMAINDER_GRID)), [1 + math.sqrt(3), -1 - math.sqrt(3)]])
    for z in zs:
        for n in range(13):
            actual = exp_remainder_mp(float(z), n)
            bound = taylor_approx.exp_remainder_bound(float(z), n)
            excess = float(actual - mpmath.mpf(bound))
            t.add(max(excess, 0.0), ok=excess <= 0)
    return t.result


def check_taylor_softmax_limit(rng, count, fault=False):
    t = _Tally("taylor_softmax_converges_n20", "taylor_approx", 1e-6)
    for _ in range(count):
        z = rng.uniform(-2.0, 2.0, size=int(rng.choice(CLASS_COUNTS)))
        t.add(float(np.max(np.abs(taylor_approx.taylor_softmax(z, 20) - logit_core.softmax_t(z, 1.0)))))
    return t.result


def check_taylor_softmax_normalized(rng, count, fault=False):
    t = _Tally("taylor_softmax_sums_to_one", "taylor_approx", 1e-12)
    for _ in range(count):
        z = random_logits(rng)
        n = int(rng.choice((2, 4, 6, 8)))
        t.add(abs(float(taylor_approx.taylor_softmax(z, n).sum()) - 1.0))
    return t.result


def first_order_tau(rng, zp, zq):
    # |t| < 1 on both vectors keeps the linear log expansion and 1 + t inside their domains
    peak = max(np.abs(zp).max(), np.abs(zq).max())
    return float(peak * rng.uniform(1.05, 4.0))


def check_first_order_collapse(rng, count, fault=False):
    t = _Tally("first_order_collapse", "taylor_approx", 1e-9)
    cfg = ApproxConfig(1, 1)
    for _ in range(count):
        zp, zq = random_pair(rng)
        tau = first_order_tau(rng, zp, zq)
        approx = taylor_approx.approx_kl(zp, zq, tau, cfg)
        closed = taylor_approx.first_order_kl_closed_form(zp, zq, tau)
        brute = taylor_approx.first_order_terms(zp, zq, tau)
        if fault:
            closed *= 1.0 + 1e-6
        t.add(max(abs(approx - closed) / abs(closed), abs(brute - closed) / abs(closed)))
    return t.result


def correlation_limit_gap(zp, zq, tau=LIMIT_TAU, orders=range(1, 5)):
    """Worst |N tau^2 approx_kl - (1 - rho)| over every (n, m) pair of ``orders``."""
    n_classes = len(zp)
    target = 1.0 - float(logit_core.correlation(zp, zq))
    worst = 0.0
    for n in orders:
        for m in orders:
            value = taylor_approx.approx_kl(zp, zq, tau, ApproxConfig(n, m))
            worst = max(worst, abs(n_classes * tau**2 * value - target))
    return worst


def check_correlation_limit(rng, count, fault=False):
    t = _Tally("correlation_limit_at_tau64", "taylor_approx", 1e-3)
    for _ in range(count):
        zp, zq = random_pair(rng)
        t.add(correlation_limit_gap(zp, zq))
    return t.result


def check_closed_form_decreasing(rng, count, fault=False):
    t = _Tally("first_order_decreasing_in_tau", "taylor_approx", 0.0)
    for _ in range(count):
        zp, zq = random_pair(rng)
        taus = np.sort(np.exp(rng.uniform(-1, 4, size=6)))
        vals = np.array([taylor_approx.first_order_kl_closed_form(zp, zq, tau) for tau in taus])
        steps = np.diff(vals)
        t.add(max(0.0, float(steps.max())), ok=bool(np.all(steps < 0)))
    return t.result


# -- temperature -------------------------------------------------------------

def check_radius_closed_forms(rng, count, fault=False):
    t = _Tally("radius_closed_forms", "temperature", 1e-9)
    ratio = (1.0 + math.sqrt(3.0)) / 2.0
    for _ in range(count):
        m = float(np.exp(rng.uniform(-5, 5)))
        r1 = temperature.radius_bound(m, 1)
        r2 = temperature.radius_bound(m, 2)
        t.add(max(abs(r1 - m) / m, abs(r2 - m * ratio) / m, abs(r2 / r1 - ratio)))
    return t.result


def check_radius_homogeneous(rng, count, fault=False):
    t = _Tally("radius_homogeneous_increasing", "temperature", 1e-9)
    for _ in range(count):
        n = int(rng.integers(1, 7))
        m = float(np.exp(rng.uniform(-3, 3)))
        c = float(np.exp(rng.uniform(-3, 3)))
        scaled = temperature.radius_bound(c * m, n)
        expected = c * temperature.radius_bound(m, n)
        bigger = temperature.radius_bound(m * (1 + rng.uniform(1e-3, 1.0)), n)
        t.add(abs(scaled - expected) / expected, ok=abs(scaled - expected) <= 1e-9 * expected
              and bigger > temperature.radius_bound(m, n))
    return t.result


def check_radius_bisection(rng, count, fault=False):
    t = _Tally("radius_bisection_matches_closed_forms", "temperature", 1e-8)
    for _ in range(count):
        m = float(np.exp(rng.uniform(-3, 3)))
        err = max(abs(temperature.radius_bound_bisect(m, 1) - m),
                  abs(temperature.radius_bound_bisect(m, 2) - m * (1 + math.sqrt(3)) / 2))
        t.add(err)
    return t.result


def check_radius_grid_scan(rng, count, fault=False):
    # the first passing grid point lies within one step above the true bound
    t = _Tally("radius_order3_grid_scan", "temperature", SCAN_STEP * 1.001)
    for _ in range(min(count, 25)):
        m = float(rng.uniform(0.2, 5.0))
        t.add(abs(temperature.radius_bound(m, 3) - grid_scan_bound(m, 3, SCAN_STEP)))
    return t.result


def check_mlt_upper_bound(rng, count, fault=False):
    t = _Tally("mlt_within_sqrt_k_bound", "temperature", 0.0)
    for _ in range(count):
        zp, zq = random_pair(rng)
        k = len(zp)
        a = int(rng.integers(1, 5))
        policy = TemperaturePolicy(order_a=a)
        tau = temperature.mlt_temperature(zp, zq, policy)
        cap = temperature.radius_bound(math.sqrt(k - 1), a)
        over = tau - cap * (1 + 1e-12)
        t.add(max(over, 0.0), ok=over <= 0 and tau >= policy.floor
              and max(zp.max(), zq.max()) <= math.sqrt(k - 1) + 1e-12)
    return t.result


def check_mlt_maxima_only(rng, count, fault=False):
    t = _Tally("mlt_depends_on_maxima_only", "temperature", 0.0)
    policy = TemperaturePolicy()
    for _ in range(count):
        zt, zs = random_pair(rng)
        base = temperature.mlt_temperature(zt, zs, policy)
        zt2, zs2 = zt.copy(), zs.copy()
        for z in (zt2, zs2):
            top = int(np.argmax(z))
            rest = np.arange(len(z)) != top
            z[rest] = z[top] - rng.uniform(1e-3, 5.0, size=rest.sum())
        t.add(abs(temperature.mlt_temperature(zt2, zs2, policy) - base))
    return t.result


# -- kd_losses ----------------------------------------------------------------

def check_kd_nonnegative(rng, count, fault=False):
    t = _Tally("kd_nonnegative_zero_iff_equal", "kd_losses", 1e-9)
    for _ in range(count):
        k = int(rng.choice(CLASS_COUNTS))
        v, w = random_logits(rng, k), random_logits(rng, k)
        tau = float(rng.uniform(1.0, 8.0))
        same = kd_losses.kd_loss(v, 3.0 * v - 2.0, tau)
        diff = kd_losses.kd_loss(v, w, tau)
        t.add(abs(same), ok=abs(same) <= 1e-9 and diff > 0)
    return t.result


def check_combined_affine(rng, count, fault=False):
    t = _Tally("combined_loss_teacher_affine_invariance", "kd_losses", 1e-6)
    weights = LossWeights()
    policy = TemperaturePolicy()
    for _ in range(count):
        teacher, student, labels = random_batch(rng)
        a = float(np.exp(rng.uniform(-2, 2)))
        b = float(rng.normal(0, 5))
        base = kd_losses.combined_loss(teacher, student, labels, weights, policy).total
        moved = kd_losses.combined_loss(a * teacher + b, student, labels, weights, policy).total
        t.add(abs(moved - base) / abs(base))
    return t.result


def check_gradient(rng, count, fault=False):
    t = _Tally("gradient_finite_differences", "kd_losses", 1e-4)
    for _ in range(min(count, GRADIENT_BATCHES)):
        t.add(gradient_check(rng))
    return t.result


def check_tau_adaptivity(rng, count, fault=False):
    t = _Tally("per_sample_tau_varies", "kd_losses", 0.0)
    policy = TemperaturePolicy()
    for _ in range(count):
        teacher, student, labels = random_batch(rng, batch=8)
        taus = kd_losses.combined_loss(teacher, student, labels, LossWeights(), policy).per_sample_tau
        t.add(0.0, ok=bool(taus.max() > taus.min()))
    return t.result


def check_kd_decreasing(rng, count, fault=False):
    t = _Tally("kd_over_tau2_decreasing", "kd_losses", 0.0)
    for _ in range(count):
        k = int(rng.choice(CLASS_COUNTS))
        v, w = random_logits(rng, k), random_logits(rng, k)
        bound = temperature.mlt_temperature(logit_core.zscore(v), logit_core.zscore(w), TemperaturePolicy())
        taus = bound * np.array([1.0, 1.5, 2.0, 4.0, 8.0])
        vals = np.array([kd_losses.kd_loss(v, w, tau) / tau**2 for tau in taus])
        steps = np.diff(vals)
        t.add(max(0.0, float(steps.max())), ok=bool(np.all(steps < 0)))
    return t.result


CHECKS = (
    check_zscore_moments,
    check_zscore_affine,
    check_softmax_scaling,
    check_softmax_argmax,
    check_entropy_monotone,
    check_kl_gibbs,
    check_correlation_pearson,
    check_remainder_dominance,
    check_taylor_softmax_limit,
    check_taylor_softmax_normalized,
    check_first_order_collapse,
    check_correlation_limit,
    check_closed_form_decreasing,
    check_radius_closed_forms,
    check_radius_homogeneous,
    check_radius_bisection,
    check_radius_grid_scan,
    check_mlt_upper_bound,
    check_mlt_maxima_only,
    check_kd_nonnegative,
    check_combined_affine,
    check_gradient,
    check_tau_adaptivity,
    check_kd_decreasing,
)


def run_all(samples=1000, seed=0, fault=False):
    """Run every check on ``samples`` instances; each check gets its own child seed."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(len(CHECKS))
    return [check(np.random.default_rng(s), samples, fault) for check, s in zip(CHECKS, seeds)]


def format_table(results):
    header = f"{'module':<14} {'property':<42} {'n':>6} {'fail':>5} {'worst':>11} {'tol':>9}  status"
    lines = [header, "-" * len(header)]
    for r in results:
        lines.append(f"{r.module:<14} {r.name:<42} {r.instances:>6} {r.failures:>5} "
                     f"{r.worst:>11.3e} {r.tolerance:>9.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
