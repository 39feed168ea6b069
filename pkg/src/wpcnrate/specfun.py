"""Special functions used by the distribution and rate formulas.

Most kernels are thin, domain-checked wrappers over :mod:`scipy.special`;
the principal-branch Lambert W is solved here by Halley iteration so the
branch-point behaviour is under our control.  Functions accept scalars and
return Python floats unless noted.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sc

from .exceptions import DomainError, RangeError

__all__ = [
    "Precision",
    "DEFAULT_PRECISION",
    "bessel_k",
    "log_bessel_k",
    "lambert_w0",
    "gamma_upper",
    "gamma_upper_reg",
    "gamma_lower_reg",
    "gauss_q",
    "gauss_q_inv",
    "exp_integral_e1",
    "exp_integral_e1_scaled",
    "log_gamma",
]

_INV_E = math.exp(-1.0)


@dataclass(frozen=True)
class Precision:
    """Accuracy knobs for the iterative kernels."""

    rel_tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


DEFAULT_PRECISION = Precision()


def bessel_k(order, x):
    """Modified Bessel function of the second kind, K_order(x), for x > 0."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"bessel_k needs x > 0, got {x!r}")
    value = float(_sc.kv(abs(float(order)), x))
    if math.isinf(value) or math.isnan(value):
        raise RangeError(f"K_{order}({x}) overflows")
    return value


def log_bessel_k(order, x):
    """ln K_order(x) for x > 0, finite even where K itself overflows."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"log_bessel_k needs x > 0, got {x!r}")
    nu = abs(float(order))
    scaled = float(_sc.kve(nu, x))
    if 0.0 < scaled < math.inf:
        return math.log(scaled) - x
    if nu == 0.0:
        # K_0(x) ~ -ln(x/2) - euler_gamma
        return math.log(-math.log(0.5 * x) - np.euler_gamma)
    # small-argument leading term: K_nu(x) ~ Gamma(nu)/2 * (2/x)^nu
    return math.lgamma(nu) - math.log(2.0) + nu * math.log(2.0 / x)


def _lambert_seed(x):
    if x < -0.32:
        p = math.sqrt(2.0 * (math.e * x + 1.0))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    if x < 3.0:
        return 0.5 * math.log1p(x) if x > -0.25 else x / (1.0 + x)
    lx = math.log(x)
    return lx - math.log(lx)


def lambert_w0(x, precision=DEFAULT_PRECISION):
    """Principal branch W0 of the Lambert W function, x >= -1/e."""
    x = float(x)
    if math.isnan(x) or x < -_INV_E:
        raise DomainError(f"lambert_w0 needs x >= -1/e, got {x!r}")
    if x == 0.0:
        return 0.0
    if x == -_INV_E:
        return -1.0
    if math.isinf(x):
        return math.inf

    w = _lambert_seed(x)
    tol = precision.rel_tol
    for _ in range(precision.max_iter):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 <= 0.0:
            # seed landed past the branch point; pull back inside
            w = -1.0 + 1e-8
            continue
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w -= step
        if abs(step) <= tol * (1.0 + abs(w)):
            break
    return max(w, -1.0)


def gamma_upper_reg(a, x):
    """Regularised upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)."""
    a = float(a)
    x = float(x)
    if not a > 0:
        raise DomainError(f"gamma_upper_reg needs a > 0, got {a!r}")
    if x < 0:
        raise DomainError(f"gamma_upper_reg needs x >= 0, got {x!r}")
    return float(_sc.gammaincc(a, x))


def gamma_lower_reg(a, x):
    """Regularised lower incomplete gamma P(a, x) = 1 - Q(a, x)."""
    a = float(a)
    x = float(x)
    if not a > 0:
        raise DomainError(f"gamma_lower_reg needs a > 0, got {a!r}")
    if x < 0:
        raise DomainError(f"gamma_lower_reg needs x >= 0, got {x!r}")
    return float(_sc.gammainc(a, x))


def gamma_upper(a, x):
    """Upper incomplete gamma function Gamma(a, x) (not regularised)."""
    q = gamma_upper_reg(a, x)
    if q == 0.0:
        return 0.0
    log_value = math.log(q) + math.lgamma(float(a))
    if log_value > 709.7:
        raise RangeError(f"Gamma({a}, {x}) overflows")
    return math.exp(log_value)


def gauss_q(x):
    """Gaussian tail probability Q(x).  Works elementwise on arrays."""
    if np.ndim(x):
        return 0.5 * _sc.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return 0.5 * math.erfc(float(x) / math.sqrt(2.0))


def gauss_q_inv(p):
    """Inverse of :func:`gauss_q` on (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"gauss_q_inv needs 0 < p < 1, got {p!r}")
    return -float(_sc.ndtri(p))


def exp_integral_e1(x):
    """Exponential integral E1(x) for x > 0."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"exp_integral_e1 needs x > 0, got {x!r}")
    return float(_sc.exp1(x))


def exp_integral_e1_scaled(x):
    """exp(x) * E1(x) for x > 0, without overflow/underflow at large x."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"exp_integral_e1_scaled needs x > 0, got {x!r}")
    if x < 50.0:
        return math.exp(x) * float(_sc.exp1(x))
    # modified Lentz on the continued fraction 1/(x+1-1/(x+3-4/(x+5-...)))
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 200):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def log_gamma(a):
    """ln Gamma(a) for a > 0."""
    a = float(a)
    if not a > 0:
        raise DomainError(f"log_gamma needs a > 0, got {a!r}")
    return math.lgamma(a)
