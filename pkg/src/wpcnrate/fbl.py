"""Finite-blocklength error model.

``awgn_error`` is the normal approximation of the block error probability of
a k-bit message over n channel uses at SNR gamma; ``avg_error_fading`` averages
it over the product fading and ``asymptotic_outage`` is its infinite-blocklength
(outage) counterpart.
"""

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special as _sc

from ._quad import integrate_finite, integrate_to_inf
from .channel import gamma_pdf, gamma_cdf, product_cdf, product_pdf

__all__ = [
    "RatePoint",
    "ApproximationRegimeWarning",
    "capacity",
    "dispersion",
    "awgn_error",
    "avg_error_fading",
    "asymptotic_outage",
    "conditional_outage",
    "conditional_error",
]

_LN2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)


class ApproximationRegimeWarning(UserWarning):
    """Blocklength below the range where the normal approximation is trusted."""


@dataclass(frozen=True)
class RatePoint:
    k: float
    n: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.n < 100:
            warnings.warn(f"n={self.n} < 100: normal approximation may be inaccurate",
                          ApproximationRegimeWarning, stacklevel=3)

    @property
    def rate(self):
        return self.k / self.n


def capacity(gamma):
    """Shannon capacity log2(1 + gamma) in bits per channel use."""
    return np.log1p(gamma) / _LN2 if np.ndim(gamma) else math.log1p(gamma) / _LN2


def dispersion(gamma):
    """Channel dispersion 1 - 1/(1+gamma)^2, written to avoid cancellation."""
    return gamma * (2.0 + gamma) / (1.0 + gamma) ** 2


def _awgn_error_scalar(gamma, k, n):
    if gamma <= 0.0:
        return 1.0 if k > 0 else 0.5
    v = gamma * (2.0 + gamma) / (1.0 + gamma) ** 2
    arg = (math.log1p(gamma) - k * _LN2 / n) * math.sqrt(n / v)
    return 0.5 * math.erfc(arg / _SQRT2)


def awgn_error(gamma, k, n):
    """Normal-approximation block error probability.

    At gamma = 0 the dispersion vanishes; the limit is 1 for k > 0 and 0.5
    for k = 0.  ``gamma`` and ``k`` may be arrays (broadcast together).
    """
    if np.ndim(gamma) == 0 and np.ndim(k) == 0:
        return _awgn_error_scalar(float(gamma), float(k), n)
    gamma, k = np.broadcast_arrays(np.asarray(gamma, dtype=float), np.asarray(k, dtype=float))
    out = np.where(k > 0, 1.0, 0.5)
    pos = gamma > 0
    g = gamma[pos]
    v = g * (2.0 + g) / (1.0 + g) ** 2
    arg = (np.log1p(g) - k[pos] * _LN2 / n) * np.sqrt(n / v)
    out[pos] = 0.5 * _sc.erfc(arg / _SQRT2)
    return out


def avg_error_fading(sp, k, *, w=None, epsrel=1e-9, epsabs=0.0):
    """Fading-averaged error E_w[awgn_error(gamma(w), k, n)].

    Passing a fixed ``w`` replaces the fading by a deterministic product gain.
    The integral is split at the outage point of k bits, below which the
    integrand is close to the density itself.
    """
    RatePoint(k, sp.n)
    scale = sp.snr_scale
    n = sp.n
    if w is not None:
        return _awgn_error_scalar(scale * w, k, n)
    fp = sp.fading

    def integrand(x):
        if x <= 0.0:
            return 0.0
        return _awgn_error_scalar(scale * x, k, n) * product_pdf(fp, x)

    w_t = sp.outage_w(k) if k > 0 else 1.0 / scale
    lower = integrate_finite(integrand, 0.0, w_t, epsrel=epsrel, epsabs=epsabs,
                             what="avg_error_fading")
    upper = integrate_to_inf(integrand, w_t, w_t, epsrel=epsrel, epsabs=epsabs,
                             what="avg_error_fading")
    return min(1.0, lower + upper)


def asymptotic_outage(sp, k):
    """Infinite-blocklength error P[gamma < 2^(k/n) - 1]."""
    if k <= 0:
        return 0.0
    return product_cdf(sp.fading, sp.outage_w(k))


def conditional_outage(sp, k, h):
    """Outage probability given the WET gain h (only gbar is random)."""
    if h <= 0.0:
        return 1.0 if k > 0 else 0.0
    a = sp.fading.shape_g
    return gamma_cdf(a, sp.outage_w(k) / h)


_HERMITE_ORDER = 48
_HZ, _HW = np.polynomial.hermite_e.hermegauss(_HERMITE_ORDER)
_HW = _HW / math.sqrt(2.0 * math.pi)


def _solve_normal_quantiles(r, n):
    """t = ln(1+gamma) solving (t - r) sqrt(n) / sqrt(1 - e^{-2t}) = z at every
    Gauss-Hermite node z, for each rate r = k ln2/n (an array of shape (J,)).

    The left side is increasing in t; it is solved by vectorised Newton steps
    kept inside a bisection bracket.  Returns an array of shape (J, nodes).
    """
    z = _HZ[None, :]
    r = np.asarray(r, dtype=float)[:, None]
    sn = math.sqrt(n)
    # z >= 0: r <= t <= r + z/sqrt(n);  z < 0: max(0, r + z/sqrt(n)) <= t <= r
    lo = np.where(z < 0, np.maximum(r + z / sn, 0.0), r)
    hi = np.where(z < 0, r, r + z / sn)
    t = np.where(z < 0, np.maximum(r + z / sn, 0.5 * r), hi)
    t = np.clip(t, lo + 1e-3 * (hi - lo), hi)
    for _ in range(200):
        em = -np.expm1(-2.0 * t)
        f = (t - r) * sn / np.sqrt(em) - z
        hi = np.where(f > 0, t, hi)
        lo = np.where(f <= 0, t, lo)
        d = sn * (em - (t - r) * (1.0 - em)) / em ** 1.5
        t_new = t - f / d
        t_new = np.where((t_new >= lo) & (t_new <= hi), t_new, 0.5 * (lo + hi))
        done = np.all(np.abs(t_new - t) <= 1e-13 * t_new)
        t = t_new
        if done:
            break
    return t


@functools.lru_cache(maxsize=4096)
def _snr_at_normal_quantiles(k, n):
    """SNRs gamma_i with (ln(1+gamma_i) - k ln2/n) sqrt(n/V(gamma_i)) = z_i at the
    Gauss-Hermite nodes z_i."""
    g = np.expm1(_solve_normal_quantiles([k * _LN2 / n], n)[0])
    g.flags.writeable = False
    return g


def hermite_snr_nodes(sp, ks):
    """Per-size SNR nodes of the Gauss-Hermite conditional-error route: row j
    holds gamma_i(ks[j]).  With weights ``HERMITE_WEIGHTS``,
    conditional_error(k, h) = sum_i w_i F_G(gamma_i / (snr_scale h))."""
    ks = np.asarray(ks, dtype=float)
    return np.expm1(_solve_normal_quantiles(ks * _LN2 / sp.n, int(sp.n)))


HERMITE_WEIGHTS = _HW


def _conditional_error_hermite(sp, k, h):
    # E_gbar[Q(s(c gbar))] = P[Z > s(c gbar)] = E_Z[F_G(s^{-1}(Z) / c)]
    a = sp.fading.shape_g
    g = _snr_at_normal_quantiles(float(k), int(sp.n))
    h = np.asarray(h, dtype=float)
    x = a * g / (sp.snr_scale * h[..., None])
    return np.clip(_sc.gammainc(a, x) @ _HW, 0.0, 1.0)


def _conditional_error_adaptive(sp, k, h, epsrel):
    a = sp.fading.shape_g
    scale = sp.snr_scale * h
    n = sp.n

    def integrand(g):
        if g <= 0.0:
            return 0.0
        return _awgn_error_scalar(scale * g, k, n) * gamma_pdf(a, g)

    g_t = sp.outage_w(k) / h if k > 0 else 1.0
    lower = integrate_finite(integrand, 0.0, g_t, epsrel=epsrel, what="conditional_error")
    upper = integrate_to_inf(integrand, g_t, max(g_t, 1.0 / math.sqrt(a)), epsrel=epsrel,
                             what="conditional_error")
    return min(1.0, lower + upper)


def conditional_error(sp, k, h, *, method="hermite", epsrel=1e-9):
    """Finite-blocklength error given h: E_gbar[awgn_error(gamma(h, gbar), k, n)].

    ``method="hermite"`` exchanges the order of the two expectations (error
    event Z > s(gamma)) and integrates over the standard normal Z with a fixed
    Gauss-Hermite rule -- fast and accurate to near machine precision.
    ``method="adaptive"`` integrates over gbar by adaptive quadrature and is
    kept as an independent reference.  ``h`` may be an array for "hermite".
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if method == "adaptive":
        h = float(h)
        return 1.0 if h <= 0.0 else _conditional_error_adaptive(sp, k, h, epsrel)
    if method != "hermite":
        raise ValueError(f"unknown method {method!r}")
    h_arr = np.asarray(h, dtype=float)
    out = np.ones(h_arr.shape)
    pos = h_arr > 0
    if np.any(pos):
        out[pos] = _conditional_error_hermite(sp, k, h_arr[pos])
    return float(out) if out.ndim == 0 else out
