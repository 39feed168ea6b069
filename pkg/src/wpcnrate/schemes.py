"""Rate-control schemes.

* FTR  -- one fixed message size for every round.
* KSC  -- the size follows the battery charge, i.e. the WET gain h.
* fCSI -- the size follows the full channel product w = h * gbar (benchmark).

Each scheme has an asymptotic (outage) form and a finite-blocklength form.
Asymptotic message sizes are real-valued; finite-blocklength ones for FTR and
KSC are integers.
"""

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sc

from . import specfun
from ._quad import integrate_finite, integrate_to_inf
from ._roots import brent, expand_bracket
from .channel import (
    gamma_cdf,
    gamma_pdf,
    gamma_sf,
    product_cdf,
    product_cdf_inv_approx,
    product_cdf_inv_numeric,
    product_pdf,
)
from .exceptions import (
    ConvergenceError,
    InfeasibleApproximationError,
    InfeasibleError,
    UnsupportedConfigurationError,
)
from .fbl import (
    _awgn_error_scalar,
    asymptotic_outage,
    avg_error_fading,
    capacity,
    conditional_error,
    conditional_outage,
    dispersion,
    hermite_snr_nodes,
    HERMITE_WEIGHTS,
)

__all__ = [
    "ReliabilityTarget",
    "ThresholdSolution",
    "SchemeOutcome",
    "ftr_chi",
    "ftr_k_asymptotic",
    "ftr_optimal_fraction",
    "ftr_optimal_blocklengths",
    "ftr_k_fbl",
    "ksc_kappa",
    "ksc_initial_guess",
    "ksc_z",
    "ksc_z_derivative",
    "ksc_threshold_asymptotic",
    "ksc_threshold_bisection",
    "ksc_k",
    "ksc_kbar_asymptotic",
    "ksc_asymptotic",
    "KSCRateRule",
    "ksc_fbl_lhs",
    "ksc_fbl",
    "ksc_fbl_outcome",
    "fcsi_lhs",
    "fcsi_threshold",
    "fcsi_k",
    "fcsi_kbar",
    "fcsi_fbl",
    "fcsi_asymptotic",
    "fcsi_k_asymptotic",
]

_LN2 = math.log(2.0)
_LOG2E = 1.0 / _LN2


@dataclass(frozen=True)
class ReliabilityTarget:
    """Error ceiling eps_th and minimum message size k0 (bits)."""

    eps_th: float = 1e-2
    k0: int = 16

    def __post_init__(self):
        if not 0.0 < self.eps_th <= 0.1:
            raise ValueError(f"eps_th must lie in (0, 0.1], got {self.eps_th}")
        if int(self.k0) != self.k0 or self.k0 < 1:
            raise ValueError(f"k0 must be a positive integer, got {self.k0}")
        object.__setattr__(self, "k0", int(self.k0))


@dataclass(frozen=True)
class ThresholdSolution:
    """Channel threshold (h0 for KSC, w0 for fCSI) and the compensated per-round
    target ``eps_star`` used above it."""

    threshold: float
    eps_star: float
    iterations: int = 0
    residual: float = 0.0
    trace: tuple = field(default=(), repr=False, compare=False)


@dataclass(frozen=True)
class SchemeOutcome:
    feasible: bool
    k_bits: float
    kbar: float
    p_k0: float
    threshold: ThresholdSolution = None
    error: float = math.nan

    @classmethod
    def infeasible(cls):
        return cls(False, 0, math.nan, math.nan)


# -- FTR ----------------------------------------------------------------------

def ftr_chi(sp, rt, inverse="closed_form"):
    """Equivalent SNR chi = M psi F_W^{-1}(eps_th).

    ``inverse="closed_form"`` uses the Lambert-W closed form and falls back to the
    numerical inverse where that form does not exist.
    """
    fp = sp.fading
    if inverse == "closed_form":
        try:
            w_eps = product_cdf_inv_approx(fp, rt.eps_th)
        except (UnsupportedConfigurationError, InfeasibleApproximationError):
            w_eps = product_cdf_inv_numeric(fp, rt.eps_th)
    elif inverse == "numeric":
        w_eps = product_cdf_inv_numeric(fp, rt.eps_th)
    else:
        raise ValueError(f"unknown inverse {inverse!r}")
    return fp.M * sp.psi * w_eps


def _ftr_k(n, v, chi):
    return n * math.log2(1.0 + v / n * chi)


def ftr_k_asymptotic(sp, rt, inverse="closed_form"):
    chi = ftr_chi(sp, rt, inverse)
    k = _ftr_k(sp.n, sp.v, chi)
    if k < rt.k0:
        return SchemeOutcome.infeasible()
    return SchemeOutcome(True, k, k, 1.0 if k == rt.k0 else 0.0,
                         error=asymptotic_outage(sp, k))


def ftr_optimal_fraction(chi):
    """Unrounded n*/delta maximising the asymptotic FTR message size.

    At chi = 1 the closed form is 0/0; its limit 1/e is used there and a
    first-order expansion covers the neighbourhood.
    """
    if not chi > 0:
        raise ValueError("chi must be positive")
    d = chi - 1.0
    if abs(d) < 1e-7:
        y = math.e + d  # (chi-1)/W((chi-1)/e) -> e + (chi - 1) + O(d^2)
    else:
        y = d / specfun.lambert_w0(d / math.e)
    return chi / (y + chi - 1.0)


def ftr_optimal_blocklengths(delta, chi):
    """Closed-form optimum (n*, v*) for a delay budget of ``delta`` channel uses."""
    if delta < 2:
        raise ValueError("delta must be >= 2")
    n_star = int(round(ftr_optimal_fraction(chi) * delta))
    n_star = min(max(n_star, 1), delta - 1)
    return n_star, delta - n_star


def _largest_feasible_int(pred, start, k_min, k_max=None):
    """Largest integer k >= k_min with pred(k) true, assuming pred is monotone
    (true below some cutoff).  Returns None if pred(k_min) is false."""
    cache = {}

    def ok(k):
        if k not in cache:
            cache[k] = pred(k)
        return cache[k]

    start = max(int(start), k_min)
    if ok(start):
        lo, step = start, 1
        hi = None
        while hi is None:
            cand = lo + step
            if k_max is not None and cand > k_max:
                if ok(k_max):
                    return k_max
                hi = k_max
            elif ok(cand):
                lo, step = cand, step * 2
            else:
                hi = cand
    else:
        hi = start
        if not ok(k_min):
            return None
        lo = k_min
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def ftr_k_fbl(sp, rt, inverse="closed_form", *, epsrel=1e-9):
    """Largest integer k >= k0 whose fading-averaged error stays below eps_th.

    Starts from the asymptotic size; returns the infeasible outcome when that
    size is already below k0.
    """
    asym = ftr_k_asymptotic(sp, rt, inverse)
    if not asym.feasible:
        return SchemeOutcome.infeasible()
    errors = {}

    def ok(k):
        errors[k] = avg_error_fading(sp, k, epsrel=epsrel)
        return errors[k] <= rt.eps_th

    k = _largest_feasible_int(ok, math.floor(asym.k_bits), rt.k0)
    if k is None:
        return SchemeOutcome.infeasible()
    return SchemeOutcome(True, k, float(k), 1.0 if k == rt.k0 else 0.0, error=errors[k])


# -- KSC, asymptotic ----------------------------------------------------------

def ksc_kappa(sp, k0):
    """kappa = (2^(k0/n) - 1) n / (psi v)."""
    return math.expm1(k0 / sp.n * _LN2) * sp.n / (sp.psi * sp.v)


def ksc_initial_guess(sp, rt):
    """Starting point for the h0 iteration."""
    kappa = ksc_kappa(sp, rt.k0)
    fp = sp.fading
    a = fp.shape_g
    if fp.m1 > 1.0:
        return kappa * fp.m2 / (1.0 + a)
    half = 0.5 * (a + 1.0)
    return math.sqrt(half * half + kappa * fp.m2) - half


def _geometric_points(start, stop, factor=4.0):
    """Breakpoints start, start*factor, ... below ``stop``; keeps QUADPACK from
    stepping over a narrow feature near ``start`` on a long interval."""
    pts = []
    x = start
    while x < stop and len(pts) < 60:
        pts.append(x)
        x *= factor
    return pts


def _ksc_z1(sp, rt, h0):
    m1 = sp.fading.m1
    k0 = rt.k0

    def integrand(h):
        return conditional_outage(sp, k0, h) * gamma_pdf(m1, h) if h > 0 else 0.0

    # the outage falls from 1 to 0 around h ~ w_t (unit-mean secondary gain)
    points = _geometric_points(0.25 * sp.outage_w(k0), h0)
    return integrate_finite(integrand, 0.0, h0, epsrel=1e-13, epsabs=1e-300, points=points,
                            what="z1")


def ksc_z(sp, rt, h0):
    """Average outage when rounds with h <= h0 send k0 bits and the rest run at
    the compensated target eps_bar(k0, n, h0)."""
    if h0 <= 0.0:
        return 1.0
    eps_star = conditional_outage(sp, rt.k0, h0)
    return _ksc_z1(sp, rt, h0) + eps_star * gamma_sf(sp.fading.m1, h0)


def ksc_z_derivative(sp, rt, h0):
    """Analytic dz/dh0 (always negative)."""
    fp = sp.fading
    a = fp.shape_g
    kappa = ksc_kappa(sp, rt.k0)
    q = gamma_sf(fp.m1, h0)
    if q == 0.0 or h0 <= 0.0:
        return 0.0
    log_mag = (math.log(q) - math.lgamma(a) + a * math.log(kappa * fp.m2)
               - (a + 1.0) * math.log(h0) - kappa * fp.m2 / h0)
    return -math.exp(log_mag)


def _feasible_asymptotic(sp, rt):
    return asymptotic_outage(sp, rt.k0) <= rt.eps_th


def ksc_threshold_asymptotic(sp, rt, *, step_tol_percent=1e-6, residual_tol=1e-11,
                             max_iter=200):
    """Solve z(h0) = eps_th by Newton steps with a bisection safeguard.

    Iterates start at the closed-form guess.  While consecutive iterates sit on
    the same side of the root Newton is used; once they straddle it, the
    convergence factor mu = |z~ z~'' / z~'| (second derivative by central
    differences of the analytic first derivative) decides between Newton and
    halving.  Newton steps that would leave the known bracket are replaced by
    halving as well.
    """
    if not _feasible_asymptotic(sp, rt):
        raise InfeasibleError(
            f"eps_bar(k0, n) = {asymptotic_outage(sp, rt.k0):.3g} > eps_th = {rt.eps_th}")
    eps = rt.eps_th

    def zt(h):
        return ksc_z(sp, rt, h) - eps

    def dz(h):
        return ksc_z_derivative(sp, rt, h)

    lo, hi = 0.0, math.inf  # zt(lo) > 0 > zt(hi)
    h_prev, z_prev = 0.0, 1.0 - eps
    h_cur = ksc_initial_guess(sp, rt)
    z_cur = zt(h_cur)
    trace = [(0, h_prev, z_prev, "init"), (1, h_cur, z_cur, "guess")]
    for t in range(1, max_iter + 1):
        if z_cur > 0:
            lo = max(lo, h_cur)
        elif z_cur < 0:
            hi = min(hi, h_cur)
        rel_step = abs(h_cur - h_prev) / h_prev * 100.0 if h_prev > 0 else math.inf
        if z_cur == 0.0 or (rel_step <= step_tol_percent and abs(z_cur) <= residual_tol):
            return ThresholdSolution(h_cur, conditional_outage(sp, rt.k0, h_cur), t,
                                     z_cur, tuple(trace))
        if math.isfinite(hi) and hi - lo <= 4e-16 * hi:
            break

        d1 = dz(h_cur)
        if (z_cur > 0) == (z_prev > 0):
            rule = "newton"
        else:
            step = 1e-6 * h_cur
            d2 = (dz(h_cur + step) - dz(h_cur - step)) / (2.0 * step)
            mu = abs(z_cur * d2 / d1) if d1 != 0.0 else math.inf
            rule = "newton" if mu < 1.0 else "bisect"
        if rule == "newton":
            h_next = h_cur - z_cur / d1 if d1 != 0.0 else math.inf
            if not (lo <= h_next <= hi):
                if math.isinf(hi):
                    h_next = 2.0 * max(h_cur, lo) if not lo < h_next else h_next
                    h_next = min(h_next, max(h_cur, lo) * 100.0)
                    rule = "expand"
                else:
                    h_next = 0.5 * (lo + hi)
                    rule = "bisect(guard)"
        else:
            h_next = 0.5 * (h_cur + h_prev)
            if not (lo <= h_next <= hi):
                h_next = 0.5 * (lo + hi)
        h_prev, z_prev = h_cur, z_cur
        h_cur = h_next
        z_cur = zt(h_cur)
        trace.append((t + 1, h_cur, z_cur, rule))
    if abs(z_cur) <= residual_tol:
        return ThresholdSolution(h_cur, conditional_outage(sp, rt.k0, h_cur), len(trace),
                                 z_cur, tuple(trace))
    raise ConvergenceError("h0 iteration did not converge", trace=trace)


def ksc_threshold_bisection(sp, rt, lo=1e-12, hi=1e2, *, rel_tol=1e-14, max_iter=400):
    """Plain bisection on z(h0) = eps_th.  Slow; kept as a reference solver."""
    eps = rt.eps_th
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if ksc_z(sp, rt, mid) > eps:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            break
    return 0.5 * (lo + hi)


def ksc_k(h, h0, rt, n):
    """Message size for WET gain ``h`` (scalar or array)."""
    c = math.expm1(rt.k0 / n * _LN2)
    h = np.asarray(h, dtype=float)
    k = np.where(h <= h0, float(rt.k0), n * np.log2(1.0 + c * np.maximum(h, h0) / h0))
    return float(k) if k.ndim == 0 else k


def _ksc_kbar_rayleigh(sp, rt, h0):
    n, k0 = sp.n, rt.k0
    c = math.expm1(k0 / n * _LN2)
    x = (c + 1.0) * h0 / c
    # exp(h0/c) E1(x) with x - h0/c = h0
    tail = math.exp(-h0) * specfun.exp_integral_e1_scaled(x)
    return k0 * (1.0 - math.exp(-h0)) + n * (tail * _LOG2E + math.exp(-h0) * k0 / n)


def _ksc_kbar_integral(sp, rt, h0):
    n, k0 = sp.n, rt.k0
    m1 = sp.fading.m1
    c = math.expm1(k0 / n * _LN2)
    rate = m1 * h0 / c
    log_pref = (m1 * math.log(m1) + math.log(n) - m1 * h0 + m1 * math.log(h0)
                - math.log(_LN2) - m1 * math.log(c) - math.lgamma(m1))

    def integrand(x):
        return math.exp(log_pref + math.log(math.log(1.0 + c + x))
                        + (m1 - 1.0) * math.log(x + c) - rate * x)

    body = integrate_to_inf(integrand, 0.0, max(m1 - 1.0, 1.0) / rate, epsrel=1e-12,
                            what="ksc_kbar")
    return k0 * (1.0 - gamma_sf(m1, h0)) + body


def ksc_kbar_asymptotic(sp, rt, h0, method="auto"):
    """Average KSC message size for threshold h0.

    ``method`` is ``"integral"`` (general m1), ``"rayleigh"`` (exponential-
    integral closed form, m1 = 1 only) or ``"auto"``.
    """
    if method == "auto":
        method = "rayleigh" if sp.fading.m1 == 1.0 else "integral"
    if method == "rayleigh":
        if sp.fading.m1 != 1.0:
            raise UnsupportedConfigurationError("Rayleigh closed form needs m1 = 1")
        return _ksc_kbar_rayleigh(sp, rt, h0)
    if method == "integral":
        return _ksc_kbar_integral(sp, rt, h0)
    raise ValueError(f"unknown method {method!r}")


def ksc_asymptotic(sp, rt):
    if not _feasible_asymptotic(sp, rt):
        return SchemeOutcome.infeasible()
    ts = ksc_threshold_asymptotic(sp, rt)
    kbar = ksc_kbar_asymptotic(sp, rt, ts.threshold)
    return SchemeOutcome(True, kbar, kbar, gamma_cdf(sp.fading.m1, ts.threshold), ts,
                         error=rt.eps_th + ts.residual)


# -- KSC, finite blocklength --------------------------------------------------

_GL16 = np.polynomial.legendre.leggauss(16)


def _k0_error_mass(sp, k0, h_top, method, epsrel):
    """Integral of conditional_error(k0, h) f_H(h) over 0 < h < h_top."""
    m1 = sp.fading.m1
    if method != "hermite":
        def integrand(h):
            if h <= 0:
                return 0.0
            return conditional_error(sp, k0, h, method=method, epsrel=epsrel) * gamma_pdf(m1, h)

        return integrate_finite(integrand, 0.0, h_top, epsrel=1e-11, epsabs=1e-300,
                                what="ksc_k0_error_mass")
    # The conditional error is at most 1, so the mass below h_lo is at most
    # F_H(h_lo).  Integrate the smooth integrand h f_H(h) cerr(h) over unit
    # panels in log h, adding panels below until that bound is negligible
    # relative to the accumulated mass.
    x, wts = _GL16
    log_top = math.log(h_top)
    total = 0.0
    upper = log_top
    while True:
        edges = upper - np.arange(9.0)  # 8 unit panels, descending
        mid = 0.5 * (edges[:-1] + edges[1:])
        h = np.exp(mid[:, None] - 0.5 * x).ravel()
        log_pdf = m1 * math.log(m1) + (m1 - 1.0) * np.log(h) - m1 * h - math.lgamma(m1)
        vals = conditional_error(sp, k0, h) * np.exp(log_pdf) * h
        total += 0.5 * float(np.sum(vals.reshape(8, -1) @ wts))
        upper = edges[-1]
        left = gamma_cdf(m1, math.exp(upper))
        if left <= 1e-15 * total or left == 0.0 or upper < log_top - 700.0:
            return total


def ksc_fbl_lhs(sp, rt, h0, *, method="hermite", epsrel=1e-9):
    """Finite-blocklength average error for threshold h0: rounds below h0 send k0
    bits, rounds above run at the error level of h0."""
    if h0 <= 0.0:
        return 1.0
    inner = _k0_error_mass(sp, rt.k0, h0, method, epsrel)
    cerr = conditional_error(sp, rt.k0, h0, method=method, epsrel=epsrel)
    return inner + cerr * gamma_sf(sp.fading.m1, h0)


class KSCRateRule:
    """Finite-blocklength KSC rate rule.

    For h above the threshold the size is the largest integer k with
    conditional_error(k, h) <= eps_star.  Because that error falls with h and
    rises with k, the rule is a staircase: k(h) = k0 + #{j > k0 : H_j <= h}
    where H_j solves conditional_error(j, H_j) = eps_star.  Breakpoints are
    computed lazily and cached.
    """

    def __init__(self, sp, rt, solution, *, method="hermite", epsrel=1e-9):
        self.sp = sp
        self.rt = rt
        self.solution = solution
        self.method = method
        self.epsrel = epsrel
        self._breaks = []  # H_{k0+1}, H_{k0+2}, ...
        self._node_rows = []  # per-batch SNR nodes, aligned with _breaks

    _BATCH = 128

    @property
    def h0(self):
        return self.solution.threshold

    def _next_break(self):
        if self.method == "hermite":
            n_before = len(self._breaks)
            self._extend_batch(self._BATCH)
            return self._breaks[n_before]
        return self._next_break_scalar()

    def _extend_batch(self, count):
        """Append the next ``count`` breakpoints at once: bracket each root by
        doubling from the last known breakpoint, then refine all of them
        together by the Illinois method in log(h)."""
        sp, rt = self.sp, self.rt
        target = self.solution.eps_star
        first = rt.k0 + len(self._breaks) + 1
        ks = np.arange(first, first + count, dtype=float)
        nodes = hermite_snr_nodes(sp, ks)
        self._node_rows.append(nodes)
        a = sp.fading.shape_g
        scaled = a * nodes / sp.snr_scale

        def excess(h, rows=slice(None)):
            return np.clip(_sc.gammainc(a, scaled[rows] / h[:, None]) @ HERMITE_WEIGHTS,
                           0.0, 1.0) - target

        start = self._breaks[-1] if self._breaks else self.h0
        lo = np.full(count, start)
        f0 = excess(lo)
        at_start = f0 <= 0.0  # already meets the target at the last breakpoint
        hi = lo * 2.0
        f1 = excess(hi)
        for _ in range(200):
            above = f1 > 0.0
            if not above.any():
                break
            lo, f0 = np.where(above, hi, lo), np.where(above, f1, f0)
            hi = np.where(above, hi * 2.0, hi)
            f1[above] = excess(hi[above], above)
        else:
            raise ConvergenceError("KSC breakpoint bracket expansion failed")
        x0, x1 = np.log(lo), np.log(hi)
        side = np.zeros(count, dtype=int)  # +1: x0 moved last, -1: x1 moved last
        active = np.flatnonzero(~at_start)
        for _ in range(200):
            if not active.size:
                break
            a0, a1, b0, b1 = x0[active], x1[active], f0[active], f1[active]
            denom = np.where(b0 - b1 > 0, b0 - b1, 1.0)
            xm = np.clip(a0 + b0 * (a1 - a0) / denom, a0, a1)
            fm = excess(np.exp(xm), active)
            pos = fm > 0.0
            step = np.where(pos, xm - a0, a1 - xm)
            sd = side[active]
            # halve the value kept at an end that survived twice in a row
            b1 = np.where(pos & (sd == 1), 0.5 * b1, b1)
            b0 = np.where(~pos & (sd == -1), 0.5 * b0, b0)
            x0[active], f0[active] = np.where(pos, xm, a0), np.where(pos, fm, b0)
            x1[active], f1[active] = np.where(pos, a1, xm), np.where(pos, b1, fm)
            side[active] = np.where(pos, 1, -1)
            keep = (step > 1e-14) & (x1[active] - x0[active] > 1e-13) & (fm != 0.0)
            active = active[keep]
        else:
            raise ConvergenceError("KSC breakpoint iteration did not converge")
        root_log = np.where(np.abs(f0) < np.abs(f1), x0, x1)
        roots = np.where(at_start, start, np.exp(root_log))
        # roots are nondecreasing in k; remove iteration-level jitter
        roots = np.maximum.accumulate(np.maximum(roots, start))
        self._breaks.extend(roots.tolist())

    def _snr_nodes(self, count):
        """Gauss-Hermite SNR nodes for sizes k0+1 .. k0+count."""
        if self._node_rows:
            cached = np.concatenate(self._node_rows)
            if len(cached) >= count:
                return cached[:count]
        return hermite_snr_nodes(self.sp, self.rt.k0 + 1 + np.arange(count))

    def _next_break_scalar(self):
        sp, rt = self.sp, self.rt
        breaks = self._breaks
        j = rt.k0 + len(breaks) + 1
        target = self.solution.eps_star
        prev = breaks[-1] if breaks else self.h0

        def f(h):
            return conditional_error(sp, j, h, method=self.method, epsrel=self.epsrel) - target

        # predict H_j by geometric extrapolation of the previous spacing (or the
        # asymptotic staircase for the first steps) and bracket around it
        if len(breaks) >= 2 and breaks[-1] > breaks[-2]:
            ratio = breaks[-1] / breaks[-2]
        else:
            ratio = math.expm1(j / sp.n * _LN2) / math.expm1((j - 1) / sp.n * _LN2)
        guess = prev * ratio
        width = 0.25 * (guess - prev)
        fg = f(guess)
        if fg == 0.0:
            root = guess
        elif fg > 0.0:
            lo, hi = guess, guess + width
            while f(hi) > 0.0:
                lo, width = hi, width * 4.0
                hi = lo + width
            root = brent(f, lo, hi, rtol=1e-11)
        else:
            hi, lo = guess, guess - width
            while lo > prev and f(lo) <= 0.0:
                hi, width = lo, width * 4.0
                lo = max(hi - width, prev)
            if lo <= prev:
                lo = prev
                if f(lo) <= 0.0:
                    # j bits already meet the target at the previous breakpoint
                    breaks.append(lo)
                    return lo
            root = brent(f, lo, hi, rtol=1e-11)
        breaks.append(root)
        return root

    def breakpoints_up_to(self, h_max):
        while not self._breaks or self._breaks[-1] <= h_max:
            self._next_break()
        return self._breaks

    def k(self, h):
        """Integer message size for WET gain(s) ``h``."""
        h = np.asarray(h, dtype=float)
        if h.size:
            self.breakpoints_up_to(float(np.max(h)))
        breaks = np.asarray(self._breaks)
        counts = np.searchsorted(breaks, h, side="right")
        k = np.where(h <= self.h0, self.rt.k0, self.rt.k0 + counts).astype(float)
        return float(k) if k.ndim == 0 else k

    def kbar(self, tail_tol=1e-12):
        """E[k] = k0 + sum_j P[h >= H_j], truncated once the tail is negligible."""
        m1 = self.sp.fading.m1
        total = float(self.rt.k0)
        i = 0
        while True:
            if i >= len(self._breaks):
                self._next_break()
            p = gamma_sf(m1, self._breaks[i])
            total += p
            i += 1
            if p < tail_tol:
                return total

    def average_error(self, tail_tol=1e-12, nodes=4):
        """Average error of the integer rule: the integral of
        conditional_error(k(h), h) f_H(h).

        Flooring to integers leaves every round at or below eps_star, so this
        sits slightly under eps_th.  Each step of the staircase is integrated
        with a fixed Gauss-Legendre rule (the integrand is smooth within a
        step; 4 and 32 nodes agree to rounding).  Steps beyond P[h >= H] <
        tail_tol are dropped; they carry at most eps_star * tail_tol.
        """
        sp, rt = self.sp, self.rt
        m1 = sp.fading.m1
        if not self._breaks:
            self._next_break()

        def cerr(k, h):
            return conditional_error(sp, k, h, method=self.method, epsrel=self.epsrel)

        total = _k0_error_mass(sp, rt.k0, self._breaks[0], self.method, self.epsrel)
        x, wts = np.polynomial.legendre.leggauss(nodes)
        while gamma_sf(m1, self._breaks[-1]) >= tail_tol:
            self._next_break()
        breaks = np.asarray(self._breaks)
        last = max(int(np.argmax(_sc.gammaincc(m1, m1 * breaks) < tail_tol)), 1)
        lo, hi = breaks[:last], breaks[1:last + 1]
        ks = rt.k0 + 1 + np.arange(last)
        keep = hi > lo
        lo, hi, ks = lo[keep], hi[keep], ks[keep]
        h = 0.5 * (hi - lo)[:, None] * x + 0.5 * (hi + lo)[:, None]  # (steps, nodes)
        log_pdf = m1 * math.log(m1) + (m1 - 1.0) * np.log(h) - m1 * h - math.lgamma(m1)
        if self.method == "hermite":
            a = sp.fading.shape_g
            g = self._snr_nodes(last)[keep]  # (steps, hermite nodes)
            arg = a * g[:, None, :] / (sp.snr_scale * h[:, :, None])
            cond = np.clip(_sc.gammainc(a, arg) @ HERMITE_WEIGHTS, 0.0, 1.0)
        else:
            cond = np.array([[cerr(k, hv) for hv in row] for k, row in zip(ks, h)])
        total += float(np.sum(0.5 * (hi - lo) * ((cond * np.exp(log_pdf)) @ wts)))
        return total

    def p_k0(self):
        """P[k = k0] = P[h < H_{k0+1}]."""
        if not self._breaks:
            self._next_break()
        return gamma_cdf(self.sp.fading.m1, self._breaks[0])


def ksc_fbl(sp, rt, *, method="hermite", epsrel=1e-9, residual_tol=1e-9, start=None):
    """Threshold and rate rule of the finite-blocklength KSC scheme.

    The asymptotic h0 seeds the bracket; the finite-blocklength threshold is
    found by Brent's method on :func:`ksc_fbl_lhs`.  ``method`` selects the
    conditional-error route (see :func:`wpcnrate.fbl.conditional_error`).
    """
    floor_err = avg_error_fading(sp, rt.k0, epsrel=epsrel)
    if floor_err > rt.eps_th:
        raise InfeasibleError(f"eps_bar(k0, n) = {floor_err:.3g} > eps_th = {rt.eps_th}")
    if start is None:
        try:
            start = ksc_threshold_asymptotic(sp, rt).threshold
        except (InfeasibleError, ConvergenceError):
            start = ksc_initial_guess(sp, rt)
    evals = []

    def f(h):
        value = ksc_fbl_lhs(sp, rt, h, method=method, epsrel=epsrel) - rt.eps_th
        evals.append((h, value))
        return value

    lo, hi, flo, fhi = expand_bracket(f, start, start * 1.2, factor=1.5)
    h0 = brent(f, lo, hi, rtol=1e-12) if flo != 0.0 and fhi != 0.0 else (lo if flo == 0 else hi)
    residual = f(h0)
    if abs(residual) > residual_tol:
        raise ConvergenceError(f"finite-blocklength h0 residual {residual:.3g}", trace=evals)
    eps_star = conditional_error(sp, rt.k0, h0, method=method, epsrel=epsrel)
    ts = ThresholdSolution(h0, eps_star, len(evals), residual, tuple(evals))
    return ts, KSCRateRule(sp, rt, ts, method=method, epsrel=epsrel)


def ksc_fbl_outcome(sp, rt, **kwargs):
    try:
        ts, rule = ksc_fbl(sp, rt, **kwargs)
    except InfeasibleError:
        return SchemeOutcome.infeasible()
    kbar = rule.kbar()
    return SchemeOutcome(True, kbar, kbar, rule.p_k0(), ts, error=rule.average_error())


# -- fCSI ----------------------------------------------------------------------

def _fcsi_below(sp, k0, w0, epsrel):
    fp = sp.fading
    scale = sp.snr_scale
    n = sp.n

    def integrand(w):
        return _awgn_error_scalar(scale * w, k0, n) * product_pdf(fp, w) if w > 0 else 0.0

    w_t = sp.outage_w(k0)
    if w0 <= w_t:
        return integrate_finite(integrand, 0.0, w0, epsrel=epsrel, epsabs=1e-300,
                                what="fcsi_lhs")
    # the integrand collapses within a few multiples of 1/sqrt(n) above w_t
    points = [w_t * (1.0 + d) for d in (0.05, 0.15, 0.4)] + _geometric_points(2.0 * w_t, w0)
    return (integrate_finite(integrand, 0.0, w_t, epsrel=epsrel, epsabs=1e-300, what="fcsi_lhs")
            + integrate_finite(integrand, w_t, w0, epsrel=epsrel, epsabs=1e-300, points=points,
                               what="fcsi_lhs"))


def fcsi_lhs(sp, rt, w0, *, epsrel=1e-11):
    """Average error of the fCSI rule with threshold w0."""
    if w0 <= 0.0:
        return 1.0
    eps_star = _awgn_error_scalar(sp.snr_scale * w0, rt.k0, sp.n)
    return _fcsi_below(sp, rt.k0, w0, epsrel) + eps_star * (1.0 - product_cdf(sp.fading, w0))


def fcsi_threshold(sp, rt, *, residual_tol=1e-9, epsrel=1e-11):
    """Solve for the fCSI threshold w0 with a bracketing root finder."""
    floor_err = avg_error_fading(sp, rt.k0)
    if floor_err > rt.eps_th:
        raise InfeasibleError(f"eps_bar(k0, n) = {floor_err:.3g} > eps_th = {rt.eps_th}")
    evals = []

    def f(w):
        value = fcsi_lhs(sp, rt, w, epsrel=epsrel) - rt.eps_th
        evals.append((w, value))
        return value

    w_t = sp.outage_w(rt.k0)
    lo, hi, flo, fhi = expand_bracket(f, w_t, 2.0 * w_t, factor=2.0)
    if flo == 0.0 or fhi == 0.0:
        w0 = lo if flo == 0.0 else hi
    else:
        w0 = brent(f, lo, hi, rtol=1e-14)
    residual = f(w0)
    if abs(residual) > residual_tol:
        raise ConvergenceError(f"w0 residual {residual:.3g}", trace=evals)
    eps_star = _awgn_error_scalar(sp.snr_scale * w0, rt.k0, sp.n)
    return ThresholdSolution(w0, eps_star, len(evals), residual, tuple(evals))


def fcsi_k(w, ts, sp, rt):
    """fCSI message size (bits, real-valued) for product gain(s) ``w``."""
    w = np.asarray(w, dtype=float)
    gamma = sp.snr_scale * np.maximum(w, ts.threshold)
    q_inv = specfun.gauss_q_inv(ts.eps_star)
    k = sp.n * capacity(gamma) - np.sqrt(sp.n * dispersion(gamma)) * q_inv * _LOG2E
    k = np.where(w <= ts.threshold, float(rt.k0), k)
    return float(k) if k.ndim == 0 else k


def fcsi_kbar(sp, rt, ts):
    """k0 F_W(w0) + integral of the adapted size above w0."""
    fp = sp.fading
    w0 = ts.threshold

    def integrand(w):
        return fcsi_k(w, ts, sp, rt) * product_pdf(fp, w)

    above = integrate_to_inf(integrand, w0, max(w0, 0.5), epsrel=1e-11, what="fcsi_kbar")
    return rt.k0 * product_cdf(fp, w0) + above


def fcsi_fbl(sp, rt):
    try:
        ts = fcsi_threshold(sp, rt)
    except InfeasibleError:
        return SchemeOutcome.infeasible()
    kbar = fcsi_kbar(sp, rt, ts)
    return SchemeOutcome(True, kbar, kbar, product_cdf(sp.fading, ts.threshold), ts,
                         error=rt.eps_th + ts.residual)


def fcsi_k_asymptotic(w, sp, rt):
    """Outage-model fCSI size: n C(gamma(w)), never below k0."""
    w = np.asarray(w, dtype=float)
    k = np.maximum(sp.n * capacity(sp.snr_scale * w), float(rt.k0))
    return float(k) if k.ndim == 0 else k


def fcsi_asymptotic(sp, rt):
    """Outage-model fCSI: with the SNR known, any rate below capacity is error
    free, so the threshold is the outage point of k0 and eps_star is 0."""
    if not _feasible_asymptotic(sp, rt):
        return SchemeOutcome.infeasible()
    fp = sp.fading
    w0 = sp.outage_w(rt.k0)
    n = sp.n
    scale = sp.snr_scale

    def integrand(w):
        return n * math.log1p(scale * w) * _LOG2E * product_pdf(fp, w)

    p0 = product_cdf(fp, w0)
    kbar = rt.k0 * p0 + integrate_to_inf(integrand, w0, max(w0, 0.5), epsrel=1e-11,
                                         what="fcsi_kbar")
    ts = ThresholdSolution(w0, 0.0)
    return SchemeOutcome(True, kbar, kbar, p0, ts, error=p0)
