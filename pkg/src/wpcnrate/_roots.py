"""Bracketed scalar root finding."""

import math

from scipy import optimize

from .exceptions import ConvergenceError


def expand_bracket(f, lo, hi, *, factor=2.0, lo_limit=1e-300, hi_limit=1e300, max_iter=200):
    """Grow ``[lo, hi]`` geometrically until ``f`` changes sign.

    ``f`` is assumed monotone; the side that does not yet bracket is moved.
    Returns ``(lo, hi, f(lo), f(hi))``.
    """
    flo, fhi = f(lo), f(hi)
    for _ in range(max_iter):
        if flo == 0.0 or fhi == 0.0 or (flo > 0) != (fhi > 0):
            return lo, hi, flo, fhi
        # same sign on both ends: move the end farther from the root
        if abs(flo) < abs(fhi):
            if lo <= lo_limit:
                break
            hi, fhi = lo, flo
            lo = max(lo / factor, lo_limit)
            flo = f(lo)
        else:
            if hi >= hi_limit:
                break
            lo, flo = hi, fhi
            hi = min(hi * factor, hi_limit)
            fhi = f(hi)
    raise ConvergenceError(f"no sign change found in [{lo:.3g}, {hi:.3g}]")


def brent(f, lo, hi, *, xtol=1e-300, rtol=1e-13, max_iter=200):
    """Brent's method on a sign-changing bracket."""
    try:
        root, info = optimize.brentq(f, lo, hi, xtol=xtol, rtol=rtol, maxiter=max_iter,
                                     full_output=True, disp=False)
    except ValueError as exc:
        raise ConvergenceError(str(exc)) from exc
    if not info.converged:
        raise ConvergenceError(f"brentq did not converge: {info.flag}")
    return root


def newton_bisect(f, fprime, lo, hi, x0=None, *, xtol_rel=1e-14, ftol=0.0, max_iter=200):
    """Safeguarded Newton on ``[lo, hi]``; falls back to bisection when a
    Newton step leaves the bracket or fails to shrink it fast enough.

    ``f(lo)`` and ``f(hi)`` must differ in sign.  Returns ``(x, fx, iterations)``.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo, flo, 0
    if fhi == 0.0:
        return hi, fhi, 0
    if (flo > 0) == (fhi > 0):
        raise ConvergenceError(f"[{lo}, {hi}] does not bracket a root")
    increasing = fhi > 0
    x = 0.5 * (lo + hi) if x0 is None or not lo < x0 < hi else float(x0)
    step_old = hi - lo
    trace = []
    for it in range(1, max_iter + 1):
        fx = f(x)
        trace.append((x, fx))
        if fx == 0.0 or abs(fx) <= ftol:
            return x, fx, it
        if (fx > 0) == increasing:
            hi = x
        else:
            lo = x
        d = fprime(x)
        newton_ok = d != 0.0 and math.isfinite(d)
        if newton_ok:
            x_new = x - fx / d
            newton_ok = lo <= x_new <= hi and abs(x_new - x) < 0.5 * step_old
        if not newton_ok:
            x_new = 0.5 * (lo + hi)
        step_old = abs(x_new - x)
        if step_old <= xtol_rel * abs(x_new) or hi - lo <= xtol_rel * abs(hi):
            return x_new, f(x_new), it
        x = x_new
    raise ConvergenceError("safeguarded Newton did not converge", trace=trace)
