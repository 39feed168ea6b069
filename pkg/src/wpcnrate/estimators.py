"""scikit-learn style front end to the rate-control schemes.

``fit`` solves the scheme's thresholds for the configured system (the model is
analytic, so no training data is needed); ``predict`` maps per-round channel
draws ``X = [[h, gbar], ...]`` to message sizes in bits; ``transform`` returns
``[k, error probability]`` per round.

>>> ctl = ChargeAwareRateController(M=2, eps_th=1e-4).fit()
>>> round(ctl.kbar_, 1)
128.2
"""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import schemes
from .channel import FadingParams, SystemParams
from .exceptions import InfeasibleError
from .fbl import awgn_error

__all__ = [
    "FixedRateController",
    "ChargeAwareRateController",
    "FullCSIRateController",
]

_FORMS = ("asymptotic", "fbl")


class _RateController(BaseEstimator):
    def __init__(self, m1=5.0, m2=2.0, M=1, psi=1.0, v=1000, n=200, eps_th=1e-2,
                 k0=16, form="asymptotic"):
        self.m1 = m1
        self.m2 = m2
        self.M = M
        self.psi = psi
        self.v = v
        self.n = n
        self.eps_th = eps_th
        self.k0 = k0
        self.form = form

    def _build(self):
        if self.form not in _FORMS:
            raise ValueError(f"form must be one of {_FORMS}, got {self.form!r}")
        sp = SystemParams(FadingParams(self.m1, self.m2, self.M), self.psi, self.v, self.n)
        return sp, schemes.ReliabilityTarget(self.eps_th, self.k0)

    def _validate_rounds(self, X):
        X = check_array(X, dtype=float, ensure_min_samples=1)
        if X.shape[1] != 2:
            raise ValueError(f"X must have 2 columns [h, gbar], got {X.shape[1]}")
        if np.any(X < 0):
            raise ValueError("channel gains must be non-negative")
        return X

    def fit(self, X=None, y=None):
        """Solve the scheme for the configured system.  ``X`` and ``y`` are
        accepted for pipeline compatibility; ``X``, if given, is only
        validated."""
        if X is not None:
            self._validate_rounds(X)
        self.system_, self.target_ = self._build()
        out = self._solve(self.system_, self.target_)
        self.outcome_ = out
        self.feasible_ = bool(out.feasible)
        self.kbar_ = out.kbar
        self.p_k0_ = out.p_k0
        ts = out.threshold
        self.threshold_ = ts.threshold if ts is not None else math.nan
        self.eps_star_ = ts.eps_star if ts is not None else math.nan
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """Message size (bits) for each round ``[h, gbar]``; 0 when infeasible."""
        check_is_fitted(self, "outcome_")
        X = self._validate_rounds(X)
        if not self.feasible_:
            return np.zeros(len(X))
        return np.asarray(self._rate(X[:, 0], X[:, 1]), dtype=float).reshape(len(X))

    def error_probability(self, X):
        """Per-round error probability of the predicted message size: the
        normal approximation (``form="fbl"``) or the outage indicator."""
        k = self.predict(X)
        X = np.asarray(X, dtype=float)
        sp = self.system_
        gamma = sp.snr_scale * X[:, 0] * X[:, 1]
        if not self.feasible_:
            return np.ones(len(X))
        if self.form == "fbl":
            return awgn_error(gamma, k, sp.n)
        need = np.expm1(k * math.log(2.0) / sp.n)
        return (gamma < need * (1.0 - 1e-12)).astype(float)

    def transform(self, X):
        return np.column_stack([self.predict(X), self.error_probability(X)])

    def score(self, X, y=None):
        """Average message size over the rounds in ``X``."""
        return float(np.mean(self.predict(X)))


class FixedRateController(_RateController):
    """One message size for every round (needs no channel knowledge).

    ``inverse`` picks the source of F_W^{-1}(eps_th): the Lambert-W closed form
    ("closed_form", with numeric fallback) or the numerical inverse ("numeric").
    """

    def __init__(self, m1=5.0, m2=2.0, M=1, psi=1.0, v=1000, n=200, eps_th=1e-2,
                 k0=16, form="asymptotic", inverse="closed_form"):
        super().__init__(m1=m1, m2=m2, M=M, psi=psi, v=v, n=n, eps_th=eps_th, k0=k0,
                         form=form)
        self.inverse = inverse

    def _solve(self, sp, rt):
        if self.form == "fbl":
            out = schemes.ftr_k_fbl(sp, rt, self.inverse)
        else:
            out = schemes.ftr_k_asymptotic(sp, rt, self.inverse)
        self.k_ = out.k_bits
        return out

    def _rate(self, h, g):
        return np.full(np.shape(h), float(self.k_))


class ChargeAwareRateController(_RateController):
    """Message size chosen from the battery charge, i.e. the WET gain h."""

    def _solve(self, sp, rt):
        self.rule_ = None
        if self.form == "fbl":
            try:
                ts, rule = schemes.ksc_fbl(sp, rt)
            except InfeasibleError:
                return schemes.SchemeOutcome.infeasible()
            self.rule_ = rule
            kbar = rule.kbar()
            return schemes.SchemeOutcome(True, kbar, kbar, rule.p_k0(), ts,
                                         error=rule.average_error())
        return schemes.ksc_asymptotic(sp, rt)

    def _rate(self, h, g):
        if self.rule_ is not None:
            return self.rule_.k(h)
        return schemes.ksc_k(h, self.threshold_, self.target_, self.system_.n)


class FullCSIRateController(_RateController):
    """Message size chosen from the full channel product w = h * gbar."""

    def _solve(self, sp, rt):
        if self.form == "fbl":
            return schemes.fcsi_fbl(sp, rt)
        return schemes.fcsi_asymptotic(sp, rt)

    def _rate(self, h, g):
        w = h * g
        if self.form == "fbl":
            return schemes.fcsi_k(w, self.outcome_.threshold, self.system_, self.target_)
        return schemes.fcsi_k_asymptotic(w, self.system_, self.target_)
