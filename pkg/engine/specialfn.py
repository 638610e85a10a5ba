"""Student-t family special functions and the power formulas of the studentized tests.

The regularized incomplete beta uses the modified Lentz continued fraction
(Numerical Recipes, chapter 6). Series are summed in log space with
scipy's log-gamma / log-beta so that large degrees of freedom never
overflow.
"""
import logging
from dataclasses import dataclass
from math import exp, inf, isfinite, isinf, log, log1p, pi, sqrt
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import betaln, gammaln

from engine.errors import DomainError, SeriesConvergenceError

logger = logging.getLogger('specialfn')

SERIES_TOL = 1e-12
MAX_TERMS = 10000
QUANTILE_TOL = 1e-13

_FPMIN = 1e-300
_EPS = 1e-15
_LOG_SQRT_PI = 0.5 * log(pi)
_LN2 = log(2.0)


@dataclass(frozen=True)
class PowerSpec:
    """Inputs of the power formulas; v = n(n-3)/2 and c = phi / sqrt(1 - phi^2)."""
    n: int
    alpha: float = 0.05
    phi: Optional[float] = None
    phi0: Optional[float] = None
    series_tol: float = SERIES_TOL
    max_terms: int = MAX_TERMS

    def __post_init__(self):
        if self.n < 4:
            raise DomainError(f"n must be at least 4, got {self.n}")
        if not 0.0 < self.alpha < 0.5:
            raise DomainError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.phi is not None and not 0.0 <= self.phi < 1.0:
            raise DomainError(f"phi must lie in [0, 1), got {self.phi}")
        if self.phi0 is not None and not (self.phi0 >= 0.0 and isfinite(self.phi0)):
            raise DomainError(f"phi0 must be non-negative, got {self.phi0}")
        if not self.series_tol > 0.0:
            raise DomainError(f"series_tol must be positive, got {self.series_tol}")
        if self.max_terms < 1:
            raise DomainError(f"max_terms must be positive, got {self.max_terms}")

    @property
    def v(self) -> int:
        return self.n * (self.n - 3) // 2

    @property
    def c(self) -> Optional[float]:
        if self.phi is None:
            return None
        return self.phi / sqrt(1.0 - self.phi * self.phi)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "v": self.v,
            "alpha": self.alpha,
            "phi": self.phi,
            "phi0": self.phi0,
            "series_tol": self.series_tol,
            "max_terms": self.max_terms,
        }


def _beta_continued_fraction(a: float, b: float, z: float, max_terms: int) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * z / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    result = d
    for m in range(1, max_terms + 1):
        m2 = 2 * m
        aa = m * (b - m) * z / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        result *= d * c
        aa = -(a + m) * (qab + m) * z / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        result *= delta
        if abs(delta - 1.0) < _EPS:
            return result
    raise SeriesConvergenceError(
        f"incomplete beta continued fraction did not converge for a={a}, b={b}, z={z}",
        partial_sum=result,
        terms=max_terms,
        last_term=delta,
    )


def _beta_split(z: float, zc: float, a: float, b: float, max_terms: int = MAX_TERMS) -> Tuple[float, float]:
    """I_z(a, b) and its complement 1 - I_z(a, b) = I_{1-z}(b, a).

    zc is 1 - z supplied by the caller so that it keeps full precision when z
    is close to 1. Whichever of the pair is small is computed directly.
    """
    if z <= 0.0:
        return 0.0, 1.0
    if zc <= 0.0:
        return 1.0, 0.0
    log_front = a * log(z) + b * log(zc) - betaln(a, b)
    if z < (a + 1.0) / (a + b + 2.0):
        lower = exp(log_front) * _beta_continued_fraction(a, b, z, max_terms) / a
        return lower, 1.0 - lower
    upper = exp(log_front) * _beta_continued_fraction(b, a, zc, max_terms) / b
    return 1.0 - upper, upper


def reg_inc_beta(z: float, a: float, b: float, max_terms: int = MAX_TERMS) -> float:
    """Regularized incomplete beta I_z(a, b) for z in [0, 1], a, b > 0."""
    if not (a > 0.0 and b > 0.0):
        raise DomainError(f"incomplete beta needs positive shape parameters, got a={a}, b={b}")
    if not 0.0 <= z <= 1.0:
        raise DomainError(f"incomplete beta argument must lie in [0, 1], got {z}")
    value, _ = _beta_split(z, 1.0 - z, a, b, max_terms)
    return min(max(value, 0.0), 1.0)


def _check_nu(nu: float) -> None:
    if not nu > 0.0:
        raise DomainError(f"degrees of freedom must be positive, got {nu}")


def _t_tail(t: float, nu: float) -> float:
    """P(T > |t|) for central t with nu degrees of freedom."""
    if isinf(t):
        return 0.0
    t2 = t * t
    _, tail = _beta_split(t2 / (nu + t2), nu / (nu + t2), 0.5, 0.5 * nu)
    # I_{nu/(nu+t^2)}(nu/2, 1/2) == 1 - I_{t^2/(nu+t^2)}(1/2, nu/2)
    return 0.5 * tail


def student_t_cdf(t: float, nu: float) -> float:
    _check_nu(nu)
    tail = _t_tail(t, nu)
    return 1.0 - tail if t >= 0.0 else tail


def student_t_sf(t: float, nu: float) -> float:
    """Upper tail P(T > t), accurate far into the tail."""
    _check_nu(nu)
    tail = _t_tail(t, nu)
    return tail if t >= 0.0 else 1.0 - tail


def student_t_pdf(t, nu: float):
    _check_nu(nu)
    t = np.asarray(t, dtype=float)
    log_norm = gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * log(nu * pi)
    density = np.exp(log_norm - 0.5 * (nu + 1.0) * np.log1p(t * t / nu))
    return float(density) if density.ndim == 0 else density


def _bracket_root(fn, start: float = 1.0) -> Tuple[float, float]:
    lo, hi = -start, start
    while fn(lo) > 0.0:
        lo *= 2.0
        if lo < -1e300:
            raise DomainError("could not bracket the quantile from below")
    while fn(hi) < 0.0:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("could not bracket the quantile from above")
    return lo, hi


def t_quantile(prob: float, nu: float) -> float:
    """Lower quantile: the t with student_t_cdf(t, nu) == prob."""
    _check_nu(nu)
    if not 0.0 < prob < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {prob}")
    fn = lambda t: student_t_cdf(t, nu) - prob
    lo, hi = _bracket_root(fn)
    return brentq(fn, lo, hi, xtol=QUANTILE_TOL, rtol=4 * np.finfo(float).eps)


def t_critical(alpha: float, nu: float) -> float:
    """Upper alpha point t^(alpha) with P(T > t^(alpha)) == alpha."""
    _check_nu(nu)
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    fn = lambda t: alpha - student_t_sf(t, nu)
    lo, hi = _bracket_root(fn)
    return brentq(fn, lo, hi, xtol=QUANTILE_TOL, rtol=4 * np.finfo(float).eps)


def noncentral_t_cdf(
    t: float,
    nu: float,
    delta: float,
    series_tol: float = SERIES_TOL,
    max_terms: int = MAX_TERMS,
) -> float:
    """P(T <= t) for the noncentral t with nu degrees of freedom and noncentrality delta.

    For t >= 0 sums the series in powers of delta whose j-th term is
    exp(-delta^2/2) / (2 sqrt(pi)) * 2^(j/2) delta^j / j! * Gamma((j+1)/2)
    * ((-1)^j + I_z((j+1)/2, nu/2)), z = t^2 / (t^2 + nu).
    Negative t goes through P(T_{nu,delta} <= t) = 1 - P(T_{nu,-delta} <= -t).
    """
    _check_nu(nu)
    if t == inf:
        return 1.0
    if t == -inf:
        return 0.0
    if t < 0.0:
        return 1.0 - noncentral_t_cdf(-t, nu, -delta, series_tol, max_terms)
    if delta == 0.0:
        return student_t_cdf(t, nu)

    t2 = t * t
    z, zc = t2 / (t2 + nu), nu / (t2 + nu)
    log_abs_delta = log(abs(delta))
    sign = 1.0 if delta > 0.0 else -1.0
    log_base = -0.5 * delta * delta - _LN2 - _LOG_SQRT_PI
    mode = delta * delta

    total = 0.0
    term = 0.0
    for j in range(max_terms):
        log_weight = log_base + 0.5 * j * _LN2 + j * log_abs_delta - gammaln(j + 1.0) + gammaln(0.5 * (j + 1.0))
        weight = exp(log_weight)
        lower, upper = _beta_split(z, zc, 0.5 * (j + 1.0), 0.5 * nu, max_terms)
        bracket = 1.0 + lower if j % 2 == 0 else -upper
        term = (sign ** j) * weight * bracket
        total += term
        envelope = 2.0 * weight
        if j > mode and (envelope <= series_tol * abs(total) or envelope == 0.0):
            return min(max(total, 0.0), 1.0)
    logger.error("noncentral t series hit %d terms (t=%s, nu=%s, delta=%s)", max_terms, t, nu, delta)
    raise SeriesConvergenceError(
        f"noncentral t series did not converge within {max_terms} terms",
        partial_sum=total,
        terms=max_terms,
        last_term=term,
    )


def mixture_cdf_exact(
    t: float,
    v: int,
    c: float,
    series_tol: float = SERIES_TOL,
    max_terms: int = MAX_TERMS,
) -> float:
    """E[P(t_{v-1, W} <= t)] with W distributed as c * chi_v, for t >= 0.

    Equals (1/(c^2+1))^(v/2) * {P(t_{v-1} <= t) + sum_{j>=1} (c^2/(c^2+1))^(j/2)
    / (j B(j/2, v/2)) * ((-1)^j + I_z((j+1)/2, (v-1)/2))}, z = t^2/(t^2+v-1).
    """
    if v < 2:
        raise DomainError(f"v must be at least 2, got {v}")
    if not c >= 0.0 or not isfinite(c):
        raise DomainError(f"c must be finite and non-negative, got {c}")
    if t < 0.0:
        raise DomainError("the exact mixture series is only defined for t >= 0")
    nu = v - 1.0
    if t == inf:
        return 1.0
    if c == 0.0:
        return student_t_cdf(t, nu)

    t2 = t * t
    z, zc = t2 / (t2 + nu), nu / (t2 + nu)
    log_shrink = -log1p(c * c)
    log_ratio = 2.0 * log(c) + log_shrink
    log_front = 0.5 * v * log_shrink
    mode = v * c * c

    total = exp(log_front) * student_t_cdf(t, nu)
    term = total
    for j in range(1, max_terms + 1):
        log_weight = log_front + 0.5 * j * log_ratio - log(j) - betaln(0.5 * j, 0.5 * v)
        weight = exp(log_weight)
        lower, upper = _beta_split(z, zc, 0.5 * (j + 1.0), 0.5 * nu, max_terms)
        bracket = 1.0 + lower if j % 2 == 0 else -upper
        term = weight * bracket
        total += term
        envelope = 2.0 * weight
        if j > mode and (envelope <= series_tol * abs(total) or envelope == 0.0):
            return min(max(total, 0.0), 1.0)
    logger.error("mixture series hit %d terms (t=%s, v=%s, c=%s)", max_terms, t, v, c)
    raise SeriesConvergenceError(
        f"mixture series did not converge within {max_terms} terms",
        partial_sum=total,
        terms=max_terms,
        last_term=term,
    )


def power_n(
    phi: float,
    n: int,
    alpha: float,
    series_tol: float = SERIES_TOL,
    max_terms: int = MAX_TERMS,
) -> float:
    """Finite-n power of the studentized test at signal ratio phi."""
    spec = PowerSpec(n=n, alpha=alpha, phi=phi, series_tol=series_tol, max_terms=max_terms)
    critical = t_critical(alpha, spec.v - 1)
    return 1.0 - mixture_cdf_exact(critical, spec.v, spec.c, series_tol, max_terms)


def power_inf(
    phi0: float,
    n: int,
    alpha: float,
    series_tol: float = SERIES_TOL,
    max_terms: int = MAX_TERMS,
) -> float:
    """Local-alternative power P(t_{v-1, phi0} > t_{v-1}^(alpha))."""
    spec = PowerSpec(n=n, alpha=alpha, phi0=phi0, series_tol=series_tol, max_terms=max_terms)
    critical = t_critical(alpha, spec.v - 1)
    return 1.0 - noncentral_t_cdf(critical, spec.v - 1, phi0, series_tol, max_terms)
