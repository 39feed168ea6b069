"""Monte Carlo oracle for the rate-control schemes.

Each trial is one WET -> WIT round: draw h and gbar, apply the scheme's rate
rule, then score a block error -- by a Bernoulli draw with the
normal-approximation probability (finite blocklength) or by the outage
indicator (asymptotic).  Thresholds are solved once, before any trial runs.

Randomness is organised in fixed-size blocks of trials.  Block ``b`` uses its
own PCG64 stream seeded from ``SeedSequence(seed, spawn_key=(b,))``, and block
sums are reduced in block order, so serial and parallel runs give identical
reports.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import interpolate, stats

from . import schemes
from .channel import (
    product_cdf,
    product_cdf_by_conditioning,
    sample_gbar,
    sample_h,
)
from .exceptions import InfeasibleError
from .fbl import awgn_error

__all__ = [
    "SCHEMES",
    "FORMS",
    "SimConfig",
    "SimReport",
    "RatePlan",
    "plan_scheme",
    "simulate",
    "KSResult",
    "ks_validate_product",
    "grid_oracle_inverse",
]

SCHEMES = ("FTR", "KSC", "fCSI")
FORMS = ("asymptotic", "fbl")
BLOCK = 1 << 16
Z99 = stats.norm.ppf(0.995)
MIN_EPS_FOR_ERROR_VALIDATION = 1e-5


@dataclass(frozen=True)
class SimConfig:
    trials: int = 1_000_000
    seed: int = 0
    scheme: str = "FTR"
    form: str = "asymptotic"
    inverse: str = "closed_form"  # FTR only: source of F_W^{-1}(eps_th)
    jobs: int = 1

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class SimReport:
    trials: int
    error_rate: float
    error_se: float
    error_ci99: float  # half-width of the 99% normal-approximation interval
    kbar_hat: float
    kbar_se: float
    p_k0_hat: float
    p_k0_se: float
    wall_time: float
    error_validated: bool = True  # False when eps_th is too small for direct checks

    def error_within(self, target, n_sigma=3.0):
        """Whether ``target`` is within ``n_sigma`` binomial standard errors
        (computed at ``target``) of the empirical error rate."""
        sigma = math.sqrt(target * (1.0 - target) / self.trials)
        return abs(self.error_rate - target) <= n_sigma * sigma


class RatePlan:
    """Frozen rate rule of one scheme plus its error model.

    Holds only plain data (no closures) so it can be shipped to worker
    processes.
    """

    def __init__(self, sp, rt, scheme, form, outcome, rule=None):
        self.sp = sp
        self.rt = rt
        self.scheme = scheme
        self.form = form
        self.outcome = outcome
        self.rule = rule  # KSCRateRule for the finite-blocklength KSC scheme
        self.fbl = form == "fbl"

    def k(self, h, g):
        sp, rt, out = self.sp, self.rt, self.outcome
        if self.scheme == "FTR":
            return np.full(np.shape(h), float(out.k_bits))
        if self.scheme == "KSC":
            if self.fbl:
                return self.rule.k(h)
            return schemes.ksc_k(h, out.threshold.threshold, rt, sp.n)
        if self.fbl:
            return schemes.fcsi_k(h * g, out.threshold, sp, rt)
        return schemes.fcsi_k_asymptotic(h * g, sp, rt)

    def error_prob(self, h, g, k):
        gamma = self.sp.snr_scale * h * g
        if self.fbl:
            return awgn_error(gamma, k, self.sp.n)
        # outage indicator; the relative slack absorbs rounding where the rate
        # sits exactly at capacity (full-CSI asymptotic rule)
        need = np.expm1(k * (math.log(2.0) / self.sp.n))
        return (gamma < need * (1.0 - 1e-12)).astype(float)


def plan_scheme(sp, rt, scheme, form, inverse="closed_form"):
    """Solve the scheme once and return its :class:`RatePlan`.

    Raises :class:`InfeasibleError` for infeasible configurations.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    fbl = form == "fbl"
    rule = None
    if scheme == "FTR":
        out = (schemes.ftr_k_fbl(sp, rt, inverse) if fbl
               else schemes.ftr_k_asymptotic(sp, rt, inverse))
    elif scheme == "KSC":
        if fbl:
            if schemes.avg_error_fading(sp, rt.k0) > rt.eps_th:
                raise InfeasibleError("KSC infeasible for this configuration")
            ts, rule = schemes.ksc_fbl(sp, rt)
            kbar = rule.kbar()
            out = schemes.SchemeOutcome(True, kbar, kbar, rule.p_k0(), ts,
                                        error=rule.average_error())
        else:
            out = schemes.ksc_asymptotic(sp, rt)
    else:
        out = schemes.fcsi_fbl(sp, rt) if fbl else schemes.fcsi_asymptotic(sp, rt)
    if not out.feasible:
        raise InfeasibleError(f"{scheme} infeasible for this configuration")
    return RatePlan(sp, rt, scheme, form, out, rule)


def _block_rng(seed, block):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _run_block(plan, seed, block, size):
    rng = _block_rng(seed, block)
    fp = plan.sp.fading
    h = sample_h(fp, rng, size)
    g = sample_gbar(fp, rng, size)
    k = plan.k(h, g)
    p_err = plan.error_prob(h, g, k)
    if plan.fbl:
        errors = rng.random(size) < p_err
    else:
        errors = p_err > 0.5
    at_k0 = k <= plan.rt.k0
    return (int(np.count_nonzero(errors)), float(np.sum(k)), float(np.sum(k * k)),
            int(np.count_nonzero(at_k0)))


def _block_sizes(trials):
    full, rest = divmod(trials, BLOCK)
    return [BLOCK] * full + ([rest] if rest else [])


def _run_blocks(args):
    plan, seed, blocks = args
    return [_run_block(plan, seed, b, size) for b, size in blocks]


def simulate(sp, rt, cfg, plan=None):
    """Run ``cfg.trials`` rounds of ``cfg.scheme`` and aggregate the estimates.

    A pre-built ``plan`` (from :func:`plan_scheme`) may be passed to reuse the
    solved thresholds across runs.
    """
    start = time.perf_counter()
    if plan is None:
        plan = plan_scheme(sp, rt, cfg.scheme, cfg.form, cfg.inverse)
    blocks = list(enumerate(_block_sizes(cfg.trials)))
    if cfg.jobs > 1 and len(blocks) > 1:
        chunks = [blocks[i::cfg.jobs] for i in range(cfg.jobs)]
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            parts = list(pool.map(_run_blocks, [(plan, cfg.seed, c) for c in chunks]))
        by_block = {}
        for chunk, res in zip(chunks, parts):
            for (b, _), r in zip(chunk, res):
                by_block[b] = r
        results = [by_block[b] for b, _ in blocks]
    else:
        results = _run_blocks((plan, cfg.seed, blocks))

    n = cfg.trials
    n_err = n_k0 = 0
    s1 = s2 = 0.0
    for e, k1, k2, c0 in results:  # block order: deterministic reduction
        n_err += e
        s1 += k1
        s2 += k2
        n_k0 += c0
    p_err = n_err / n
    kbar = s1 / n
    var_k = max(s2 / n - kbar * kbar, 0.0) * n / max(n - 1, 1)
    p_k0 = n_k0 / n
    err_se = math.sqrt(p_err * (1.0 - p_err) / n)
    return SimReport(
        trials=n,
        error_rate=p_err,
        error_se=err_se,
        error_ci99=Z99 * err_se,
        kbar_hat=kbar,
        kbar_se=math.sqrt(var_k / n),
        p_k0_hat=p_k0,
        p_k0_se=math.sqrt(p_k0 * (1.0 - p_k0) / n),
        wall_time=time.perf_counter() - start,
        error_validated=rt.eps_th >= MIN_EPS_FOR_ERROR_VALIDATION,
    )


# -- distribution checks ----------------------------------------------------------

@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    critical_1pct: float
    trials: int

    @property
    def passed(self):
        return self.statistic <= self.critical_1pct


def _tabulated_product_cdf(fp, w_max, points=2000):
    """Monotone interpolant of product_cdf on a log grid, exact at the nodes."""
    grid = np.geomspace(1e-8, w_max, points)
    values = np.array([product_cdf(fp, w) for w in grid])
    spline = interpolate.PchipInterpolator(np.log(grid), values, extrapolate=False)

    def cdf(w):
        w = np.asarray(w, dtype=float)
        out = np.empty_like(w)
        low, high = w <= grid[0], w >= grid[-1]
        mid = ~(low | high)
        out[low] = 0.0 if grid[0] == 0 else values[0] * np.clip(w[low] / grid[0], 0, 1)
        out[high] = 1.0
        out[mid] = spline(np.log(w[mid]))
        return np.clip(out, 0.0, 1.0)

    return cdf


def ks_validate_product(fp, trials=1_000_000, seed=0):
    """Two-sided KS test of sampled h*gbar against the closed-form CDF."""
    if trials < 10_000:
        raise ValueError("trials must be >= 1e4")
    parts = []
    for b, size in enumerate(_block_sizes(trials)):
        rng = _block_rng(seed, b)
        parts.append(sample_h(fp, rng, size) * sample_gbar(fp, rng, size))
    w = np.concatenate(parts)
    cdf = _tabulated_product_cdf(fp, max(float(w.max()) * 1.01, 10.0))
    res = stats.kstest(w, cdf)
    return KSResult(float(res.statistic), float(res.pvalue), 1.63 / math.sqrt(trials), trials)


def grid_oracle_inverse(fp, eps, *, points_per_decade=200, rel_tol=1e-12):
    """Brute-force F_W^{-1}(eps): a log-grid scan of the conditioning-route CDF
    followed by bisection inside the bracketing cell.

    Shares no code with the Newton inverse or with the Bessel-form CDF.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    lo_w, hi_w = 1e-6, 1e3
    while product_cdf_by_conditioning(fp, lo_w) >= eps:
        lo_w *= 1e-2
    grid = np.geomspace(lo_w, hi_w, int(points_per_decade * math.log10(hi_w / lo_w)) + 1)
    # coarse scan: find the first grid point with F >= eps by bisection over the
    # grid index (F is monotone), then refine within the cell
    i_lo, i_hi = 0, len(grid) - 1
    while i_hi - i_lo > 1:
        mid = (i_lo + i_hi) // 2
        if product_cdf_by_conditioning(fp, grid[mid]) >= eps:
            i_hi = mid
        else:
            i_lo = mid
    a, b = grid[i_lo], grid[i_hi]
    while b - a > rel_tol * b:
        mid = 0.5 * (a + b)
        if product_cdf_by_conditioning(fp, mid) >= eps:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)

