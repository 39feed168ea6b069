"""Fading and link-budget model.

The WET gain is ``h ~ Gamma(m1, 1/m1)``, the MRC-averaged WIT gain is
``gbar ~ Gamma(m2*M, 1/(m2*M))`` and the end-to-end SNR only depends on
their product ``w = h * gbar``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sc

from . import specfun
from ._quad import integrate_finite, integrate_to_inf
from ._roots import newton_bisect
from .exceptions import (
    ConvergenceError,
    DomainError,
    InfeasibleApproximationError,
    UnsupportedConfigurationError,
)

__all__ = [
    "FadingParams",
    "LinkBudget",
    "SystemParams",
    "psi_from_link_budget",
    "harvested_energy",
    "transmit_power",
    "snr_from_w",
    "gamma_pdf",
    "gamma_cdf",
    "gamma_sf",
    "product_pdf",
    "product_cdf",
    "product_cdf_rayleigh",
    "product_cdf_tail_approx",
    "product_cdf_inv_approx",
    "product_cdf_inv_numeric",
    "sample_h",
    "sample_gbar",
    "sample_w",
    "product_cdf_by_conditioning",
]


@dataclass(frozen=True)
class FadingParams:
    """Nakagami shapes of the WET (m1) and WIT (m2) links and the antenna count M."""

    m1: float = 5.0
    m2: float = 2.0
    M: int = 1

    def __post_init__(self):
        if not self.m1 >= 0.5:
            raise ValueError(f"m1 must be >= 0.5, got {self.m1}")
        if not self.m2 >= 0.5:
            raise ValueError(f"m2 must be >= 0.5, got {self.m2}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        object.__setattr__(self, "M", int(self.M))

    @property
    def shape_g(self):
        """Shape of the combined WIT gain, m2*M."""
        return self.m2 * self.M

    @property
    def is_rayleigh(self):
        return self.m1 == 1.0 and self.m2 == 1.0


@dataclass(frozen=True)
class LinkBudget:
    eta: float = 0.3
    p_t: float = 10.0
    lambda_ts: float = 1e6
    lambda_sd: float = 1e3 * 14.0 ** 3
    sigma2_d: float = 1e-12
    t_c: float = 3e-6

    def __post_init__(self):
        for name in ("eta", "p_t", "lambda_ts", "lambda_sd", "sigma2_d", "t_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.eta < 1:
            raise ValueError("eta must be < 1")


@dataclass(frozen=True)
class SystemParams:
    """Everything the rate formulas need: fading, normalised SNR psi (linear) and
    the WET/WIT blocklengths v and n."""

    fading: FadingParams = field(default_factory=FadingParams)
    psi: float = 1.0
    v: int = 1000
    n: int = 200

    def __post_init__(self):
        if not self.psi > 0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        for name in ("v", "n"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def delta(self):
        return self.v + self.n

    @property
    def snr_scale(self):
        """gamma / w = (v/n) M psi."""
        return self.v / self.n * self.fading.M * self.psi

    def outage_w(self, k):
        """Value of w below which a k-bit message is in outage."""
        return math.expm1(k / self.n * math.log(2.0)) / self.snr_scale


def psi_from_link_budget(lb):
    return lb.eta * lb.p_t / (lb.lambda_ts * lb.lambda_sd * lb.sigma2_d)


def harvested_energy(lb, h, v):
    """Energy collected during v WET channel uses (joules)."""
    if h < 0:
        raise DomainError("h must be >= 0")
    return lb.eta * lb.p_t * h / lb.lambda_ts * v * lb.t_c


def transmit_power(lb, h, v, n):
    """Power spent when the harvested energy is spread over n WIT uses (watts)."""
    if h < 0:
        raise DomainError("h must be >= 0")
    return v / n * lb.eta * lb.p_t * h / lb.lambda_ts


def snr_from_w(sp, w):
    """Post-MRC SNR for product gain ``w`` (scalar or array)."""
    return sp.snr_scale * w


# -- normalised gamma marginals ---------------------------------------------

def gamma_pdf(m, x):
    """Density of Gamma(m, 1/m) at scalar x."""
    if x <= 0.0:
        if x == 0.0 and m == 1.0:
            return 1.0
        return 0.0 if (x < 0.0 or m > 1.0) else math.inf
    return math.exp(m * math.log(m) + (m - 1.0) * math.log(x) - m * x - math.lgamma(m))


def gamma_cdf(m, x):
    return float(_sc.gammainc(m, m * x)) if x > 0 else 0.0


def gamma_sf(m, x):
    return float(_sc.gammaincc(m, m * x)) if x > 0 else 1.0


# -- product W = h * gbar -----------------------------------------------------

def _log_prefactor(fp):
    a = fp.shape_g
    return math.lgamma(a) + math.lgamma(fp.m1)


def product_pdf(fp, w):
    """Density of w = h * gbar (Bessel-K closed form, evaluated in log space)."""
    w = float(w)
    if not w > 0:
        raise DomainError(f"product_pdf needs w > 0, got {w!r}")
    a, m1 = fp.shape_g, fp.m1
    s = a + m1
    z = 2.0 * math.sqrt(m1 * a * w)
    log_f = (math.log(2.0) + 0.5 * s * math.log(m1 * a) + (0.5 * s - 1.0) * math.log(w)
             - _log_prefactor(fp) + specfun.log_bessel_k(a - m1, z))
    return math.exp(log_f)


def product_cdf_rayleigh(M, w):
    """Closed-form CDF for m1 = m2 = 1."""
    w = float(w)
    if w <= 0.0:
        return 0.0
    z = 2.0 * math.sqrt(M * w)
    tail = math.exp(math.log(2.0) + 0.5 * M * math.log(M * w)
                    + specfun.log_bessel_k(M, z) - math.lgamma(M))
    return min(1.0, max(0.0, 1.0 - tail))


def _product_integrand(fp, w):
    """x -> integrand of the single-integral CDF form.  Over x in [0, 1] it
    integrates to F_W(w) and over [0, inf) to one (t = w x^2 maps it onto the
    density), so [1, inf) gives the survival function."""
    a, m1 = fp.shape_g, fp.m1
    s = a + m1
    nu = a - m1
    z = 2.0 * math.sqrt(m1 * a * w)
    log_c = math.log(4.0) + 0.5 * s * math.log(m1 * a * w) - _log_prefactor(fp)

    def integrand(x):
        if x <= 0.0:
            # x^(s-1) K_nu(zx) ~ x^(2 min(a, m1) - 1) at the origin
            if 2.0 * min(a, m1) - 1.0 > 0.0:
                return 0.0
            x = 1e-300
        return math.exp(log_c + (s - 1.0) * math.log(x) + specfun.log_bessel_k(nu, z * x))

    return integrand, s, z


def _product_cdf_quad(fp, w):
    integrand, s, z = _product_integrand(fp, w)
    # the integrand peaks near x ~ s / z; give QUADPACK a hint
    peak = min(0.5, s / z) if z > 0 else 0.5
    return integrate_finite(integrand, 0.0, 1.0, epsrel=1e-12, points=[peak],
                            what="product_cdf")


def _product_sf_quad(fp, w):
    integrand, s, z = _product_integrand(fp, w)
    return integrate_to_inf(integrand, 1.0, max(s, 1.0) / z, epsrel=1e-12,
                            what="product_sf")


def product_cdf(fp, w):
    """CDF of w = h * gbar.

    Uses the single-integral representation over x in [0, 1]; above the
    median the complementary integral over [1, inf) is used instead, so that
    values near one are exact to rounding and stay monotone.  For Rayleigh
    fading the Bessel closed form replaces it whenever its cancellation error
    is harmless (CDF values above 1e-4).
    """
    w = float(w)
    if w <= 0.0:
        return 0.0
    if fp.is_rayleigh:
        closed = product_cdf_rayleigh(fp.M, w)
        if closed >= 1e-4:
            return closed
    lower = _product_cdf_quad(fp, w)
    if lower > 0.5:
        lower = 1.0 - _product_sf_quad(fp, w)
    return min(1.0, max(0.0, lower))


def _tail_log_terms(fp):
    a, m1 = fp.shape_g, fp.m1
    if a == m1:
        raise UnsupportedConfigurationError(
            "no tail approximation when m2*M == m1; use product_cdf_inv_numeric")
    phi = min(a, m1)
    log_theta = (math.lgamma(abs(a - m1)) + phi * math.log(m1 * a)
                 - math.log(phi) - _log_prefactor(fp))
    return phi, log_theta


def product_cdf_tail_approx(fp, w, exponential=True):
    """Left-tail approximation of the product CDF.

    With ``exponential=False`` this is the pure power law obtained from the
    small-argument Bessel expansion; the default multiplies it by
    ``exp(-min(m2*M, m1) * w)``.
    """
    w = float(w)
    if not w > 0:
        raise DomainError(f"product_cdf_tail_approx needs w > 0, got {w!r}")
    phi, log_theta = _tail_log_terms(fp)
    log_f = log_theta + phi * math.log(w)
    if exponential:
        log_f -= phi * w
    return math.exp(log_f)


def product_cdf_inv_approx(fp, eps):
    """Closed-form (Lambert W) inverse of the exponential tail approximation."""
    eps = float(eps)
    if not 0.0 < eps <= 0.1:
        raise DomainError(f"eps must lie in (0, 0.1], got {eps!r}")
    phi, log_theta = _tail_log_terms(fp)
    arg = -math.exp((math.log(eps) - log_theta) / phi)
    if arg < -math.exp(-1.0):
        raise InfeasibleApproximationError(
            f"Lambert argument {arg:.4g} < -1/e: eps={eps} is outside the tail regime")
    return -specfun.lambert_w0(arg)


def product_cdf_inv_numeric(fp, eps, *, ftol=1e-10, xtol_rel=1e-13):
    """Numerical inverse of :func:`product_cdf` (bracketing + safeguarded Newton).

    Newton runs in u = ln w, where dF/du = w * f_W(w).
    """
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps!r}")
    lo_lim, hi_lim = 1e-30, 1e6

    def g(u):
        return product_cdf(fp, math.exp(u)) - eps

    def dg(u):
        w = math.exp(u)
        return w * product_pdf(fp, w)

    # start at the closed-form guess when one exists, otherwise at the median-ish point
    try:
        guess = product_cdf_inv_approx(fp, min(eps, 0.1))
    except (UnsupportedConfigurationError, InfeasibleApproximationError):
        guess = 1.0
    lo = hi = min(max(guess, lo_lim), hi_lim)
    while g(math.log(lo)) > 0.0:
        if lo <= lo_lim:
            raise ConvergenceError(f"no lower bracket for eps={eps} above {lo_lim}")
        lo = max(lo / 4.0, lo_lim)
    while g(math.log(hi)) < 0.0:
        if hi >= hi_lim:
            raise ConvergenceError(f"no upper bracket for eps={eps} below {hi_lim}")
        hi = min(hi * 4.0, hi_lim)
    if lo == hi:
        return lo
    u, _, _ = newton_bisect(g, dg, math.log(lo), math.log(hi), math.log(guess),
                            xtol_rel=xtol_rel * 1e-2)
    w = math.exp(u)
    if abs(g(u)) > ftol and abs(g(u)) > 1e-8 * eps:
        raise ConvergenceError(f"inverse residual {g(u):.3g} too large at eps={eps}")
    return w


# -- sampling -----------------------------------------------------------------

def sample_h(fp, rng, size=None):
    """Draw normalised WET gains; ``rng`` is a :class:`numpy.random.Generator`."""
    return rng.gamma(fp.m1, 1.0 / fp.m1, size)


def sample_gbar(fp, rng, size=None):
    a = fp.shape_g
    return rng.gamma(a, 1.0 / a, size)


def sample_w(fp, rng, size=None):
    return sample_h(fp, rng, size) * sample_gbar(fp, rng, size)


def product_cdf_by_conditioning(fp, w):
    """CDF of w via E_gbar[F_H(w / gbar)]; independent of the Bessel route.

    Used as a cross-check and by the brute-force inverse oracle.  Below
    gbar = 1e-6 w the conditional CDF is 1 to double precision, so that piece
    is F_G(1e-6 w); the rest is integrated in log(gbar), which keeps the
    feature near gbar ~ w resolved however small w is.
    """
    w = float(w)
    if w <= 0.0:
        return 0.0
    a, m1 = fp.shape_g, fp.m1
    g_min = 1e-6 * w
    mode = max((a - 1.0) / a, 1e-3, 10.0 * w)

    def integrand_log(u):
        g = math.exp(u)
        return float(_sc.gammainc(m1, m1 * w / g)) * gamma_pdf(a, g) * g

    def integrand(g):
        if g <= 0.0:
            return 0.0
        return float(_sc.gammainc(m1, m1 * w / g)) * gamma_pdf(a, g)

    lo, hi = math.log(g_min), math.log(mode)
    points = [u for u in (math.log(w) + d for d in (-4.0, -2.0, 0.0, 2.0)) if lo < u < hi]
    return (gamma_cdf(a, g_min)
            + integrate_finite(integrand_log, lo, hi, epsrel=1e-12, points=points or None)
            + integrate_to_inf(integrand, mode, 1.0 / math.sqrt(a), epsrel=1e-12))
