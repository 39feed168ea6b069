"""Adaptive quadrature helpers (QUADPACK via scipy) with error policing.

Semi-infinite ranges are mapped onto a finite interval with
``x = a + scale * tan(t)``, ``t in [0, pi/2)``.
"""

import math
import warnings

from scipy import integrate

from .exceptions import ConvergenceError

_HALF_PI = 0.5 * math.pi


def _check(result, abserr, info_tol, what):
    if not math.isfinite(result):
        raise ConvergenceError(f"{what}: non-finite integral")
    if abserr > info_tol:
        raise ConvergenceError(
            f"{what}: error estimate {abserr:.3g} exceeds tolerance {info_tol:.3g}",
            trace=[{"result": result, "abserr": abserr}],
        )


def integrate_finite(f, a, b, *, epsabs=0.0, epsrel=1e-10, points=None, limit=200,
                     what="integral"):
    """Integral of scalar ``f`` over [a, b]."""
    if b <= a:
        return 0.0
    if points is not None:
        points = [p for p in points if a < p < b] or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        result, abserr = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel,
                                        points=points, limit=limit)
    # roundoff-limited answers are accepted within a generous multiple of the
    # requested tolerance; anything worse is a genuine failure
    _check(result, abserr, max(epsabs, epsrel * abs(result)) * 1e4 + 1e-300, what)
    return result


def integrate_to_inf(f, a=0.0, scale=1.0, *, epsabs=0.0, epsrel=1e-10, limit=200,
                     what="integral"):
    """Integral of scalar ``f`` over [a, inf) using the tangent substitution."""
    if not scale > 0:
        raise ValueError("scale must be positive")

    def mapped(t):
        ct = math.cos(t)
        if ct <= 0.0:
            return 0.0
        x = a + scale * math.tan(t)
        if math.isinf(x):
            return 0.0
        return f(x) * scale / (ct * ct)

    return integrate_finite(mapped, 0.0, _HALF_PI, epsabs=epsabs, epsrel=epsrel,
                            limit=limit, what=what)
