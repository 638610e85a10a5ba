"""Sample dependence statistics built on U-centered pairwise matrices.

Every statistic here has the form scale * (A~ . B~) where A~ depends on X only
and B~ on Y only. `build_plan` returns that factorization so that the
inference engine can studentize or permute without recomputing distances.
Aggregated (marginal) statistics sum the per-coordinate matrices before
centering; U-centering is linear, so this equals the double sum over
coordinate pairs.
"""
import logging
from dataclasses import dataclass, field
from math import comb, sqrt
from typing import Any, Dict, Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from engine.centering import distance_array, inner_array, u_center_array
from engine.errors import DegenerateSampleError, DomainError, InputValidationError
from engine.kernels import (
    BANDWIDTH_FAMILIES,
    KernelSpec,
    kernel_array,
    median_bandwidth,
    profile_derivative,
    resolve_bandwidth,
)
from engine.samples import SampleLike, SampleMatrix, as_pair, as_sample

logger = logging.getLogger('estimators')

METHODS = ("dcov2", "dcor2", "hcov2", "hcor2", "mdcov2", "mhcov2", "ucov2", "ucor2", "rv")
PLAN_METHODS = ("dcov2", "hcov2", "mdcov2", "mhcov2", "ucov2", "rv")
UCOV_KERNELS = ("abs-distance", "squared-distance")
DECOMPOSE_TARGETS = ("dcov", "hcov-scaled")


@dataclass
class DependenceEstimate:
    value: float
    method: str
    kernel: Optional[Dict[str, Any]] = None
    meta: Dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "method": self.method,
            "kernel": self.kernel,
            "meta": self.meta,
            "degenerate": self.degenerate,
        }


@dataclass
class DecompositionReport:
    target: str
    dcov2_or_scaled_hcov2: float
    leading_term: float
    remainder: float
    tau_hat: float
    meta: Dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False

    @property
    def ratio(self) -> Optional[float]:
        """|remainder| / |leading_term|, None when the leading term vanishes."""
        if self.leading_term == 0.0:
            return None
        return abs(self.remainder) / abs(self.leading_term)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "statistic": self.dcov2_or_scaled_hcov2,
            "leading_term": self.leading_term,
            "remainder": self.remainder,
            "ratio": self.ratio,
            "tau_hat": self.tau_hat,
            "meta": self.meta,
            "degenerate": self.degenerate,
        }


@dataclass
class CenteredSide:
    """The U-centered matrix one sample contributes to a statistic."""
    matrix: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False


@dataclass
class StatisticPlan:
    """A statistic factored as scale * (a . b)."""
    method: str
    a: np.ndarray
    b: np.ndarray
    scale: float
    meta: Dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def value(self) -> float:
        return self.scale * inner_array(self.a, self.b)

    def self_values(self):
        """R(X, X) and R(Y, Y) on the same scale as `value`."""
        return self.scale * inner_array(self.a, self.a), self.scale * inner_array(self.b, self.b)

    def permuted_values(self, permutations: np.ndarray) -> np.ndarray:
        """Statistic after permuting the rows of X by each row of `permutations`."""
        permutations = np.atleast_2d(permutations)
        permuted = self.a[permutations[:, :, np.newaxis], permutations[:, np.newaxis, :]]
        return self.scale * inner_array(permuted, self.b)


def _is_constant(values: np.ndarray) -> bool:
    return bool(np.all(values == values[0]))


def _check_kernel(spec: Optional[KernelSpec]) -> KernelSpec:
    spec = spec or KernelSpec()
    if spec.family not in BANDWIDTH_FAMILIES:
        raise InputValidationError(
            f"hCov kernels must be one of {BANDWIDTH_FAMILIES}, got {spec.family!r}"
        )
    return spec


def _kernel_side(values: np.ndarray, spec: KernelSpec) -> CenteredSide:
    distances = distance_array(values, 1)
    try:
        gamma = resolve_bandwidth(distances, spec)
    except DegenerateSampleError:
        logger.warning("degenerate bandwidth for a %d x %d sample; contributing 0", *values.shape)
        return CenteredSide(np.zeros_like(distances), {"gamma": None}, degenerate=True)
    centered = u_center_array(kernel_array(distances, spec.family, gamma))
    return CenteredSide(centered, {"gamma": gamma})


def _marginal_kernel_side(values: np.ndarray, spec: KernelSpec) -> CenteredSide:
    n, d = values.shape
    total = np.zeros((n, n))
    degenerate = 0
    for i in range(d):
        distances = distance_array(values[:, i], 1)
        try:
            gamma = resolve_bandwidth(distances, spec)
        except DegenerateSampleError:
            degenerate += 1
            continue
        total += kernel_array(distances, spec.family, gamma)
    if degenerate:
        logger.debug("%d of %d coordinates have a degenerate bandwidth", degenerate, d)
    return CenteredSide(
        u_center_array(total),
        {"degenerate_coordinates": degenerate},
        degenerate=degenerate == d,
    )


def centered_side(
    values: np.ndarray,
    family: str,
    kernel: Optional[KernelSpec] = None,
    ukernel: str = "abs-distance",
) -> CenteredSide:
    """U-centered matrix of one sample for a statistic family.

    family: dcov | hcov | mdcov | mhcov | ucov | product
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, np.newaxis]
    if family == "dcov":
        return CenteredSide(u_center_array(distance_array(values, 1)), degenerate=_is_constant(values))
    if family == "hcov":
        return _kernel_side(values, _check_kernel(kernel))
    if family == "mhcov":
        return _marginal_kernel_side(values, _check_kernel(kernel))
    if family == "mdcov" or (family == "ucov" and ukernel == "abs-distance"):
        raw = squareform(pdist(values, metric="cityblock"))
        return CenteredSide(u_center_array(raw), degenerate=_is_constant(values))
    if family == "ucov":
        if ukernel != "squared-distance":
            raise InputValidationError(f"uCov kernel must be one of {UCOV_KERNELS}, got {ukernel!r}")
        return CenteredSide(u_center_array(distance_array(values, 2)), degenerate=_is_constant(values))
    if family == "product":
        return CenteredSide(u_center_array(values @ values.T), degenerate=_is_constant(values))
    raise InputValidationError(f"unknown statistic family {family!r}")


_PLAN_FAMILIES = {
    "dcov2": "dcov",
    "hcov2": "hcov",
    "mdcov2": "mdcov",
    "mhcov2": "mhcov",
    "ucov2": "ucov",
    "rv": "product",
}


def build_plan(
    X: SampleLike,
    Y: SampleLike,
    method: str,
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
    ukernel: str = "abs-distance",
) -> StatisticPlan:
    if method not in _PLAN_FAMILIES:
        raise InputValidationError(f"unknown method {method!r}; expected one of {PLAN_METHODS}")
    x, y = as_pair(X, Y)
    family = _PLAN_FAMILIES[method]
    side_x = centered_side(x.values, family, kx, ukernel)
    side_y = centered_side(y.values, family, ky if ky is not None else kx, ukernel)

    if method in ("mdcov2", "mhcov2"):
        scale = sqrt(comb(x.n, 2))
    elif method == "ucov2":
        scale = 1.0 / sqrt(x.d * y.d)
    else:
        scale = 1.0

    meta: Dict[str, Any] = {}
    for suffix, side in (("x", side_x), ("y", side_y)):
        for key, value in side.meta.items():
            meta[f"{key}_{suffix}"] = value
    return StatisticPlan(
        method=method,
        a=side_x.matrix,
        b=side_y.matrix,
        scale=scale,
        meta=meta,
        degenerate=side_x.degenerate or side_y.degenerate,
    )


def _correlation(rxy: float, rxx: float, ryy: float) -> float:
    denominator = rxx * ryy
    if denominator <= 0.0:
        return 0.0
    return rxy / sqrt(denominator)


def _estimate(plan: StatisticPlan, method: str, kernel=None) -> DependenceEstimate:
    return DependenceEstimate(
        value=plan.value(),
        method=method,
        kernel=kernel,
        meta=plan.meta,
        degenerate=plan.degenerate,
    )


def _ratio_estimate(plan: StatisticPlan, method: str, kernel=None) -> DependenceEstimate:
    rxx, ryy = plan.self_values()
    return DependenceEstimate(
        value=_correlation(plan.value(), rxx, ryy),
        method=method,
        kernel=kernel,
        meta=plan.meta,
        degenerate=plan.degenerate or rxx * ryy <= 0.0,
    )


def _kernel_meta(kx: Optional[KernelSpec], ky: Optional[KernelSpec]) -> Dict[str, Any]:
    kx = kx or KernelSpec()
    ky = ky or kx
    return {"x": kx.to_dict(), "y": ky.to_dict()}


def dcov2(X: SampleLike, Y: SampleLike) -> DependenceEstimate:
    """Unbiased squared distance covariance (A~ . B~) with a_st = |X_s - X_t|."""
    return _estimate(build_plan(X, Y, "dcov2"), "dcov2")


def dcor2(X: SampleLike, Y: SampleLike) -> DependenceEstimate:
    return _ratio_estimate(build_plan(X, Y, "dcov2"), "dcor2")


def hcov2(
    X: SampleLike,
    Y: SampleLike,
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
) -> DependenceEstimate:
    """Hilbert-Schmidt covariance (R~ . H~) on kernelized distances.

    Bandwidths default to the median pairwise distance of each sample; a
    constant sample makes the bandwidth undefined and contributes 0.
    """
    plan = build_plan(X, Y, "hcov2", kx, ky)
    return _estimate(plan, "hcov2", _kernel_meta(kx, ky))


def hcor2(
    X: SampleLike,
    Y: SampleLike,
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
) -> DependenceEstimate:
    plan = build_plan(X, Y, "hcov2", kx, ky)
    return _ratio_estimate(plan, "hcor2", _kernel_meta(kx, ky))


def covsq_pair(xi, yj) -> float:
    """Fourth-order U-statistic estimate of cov^2(x, y) for two columns.

    Computed as (P~_x . P~_y) with P_st = x_s * x_t, an O(n^2) form of the
    4-subset U-statistic.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    yj = np.asarray(yj, dtype=float).ravel()
    x, y = as_pair(xi, yj)
    a = centered_side(x.values, "product").matrix
    b = centered_side(y.values, "product").matrix
    return inner_array(a, b)


def mdcov2(X: SampleLike, Y: SampleLike) -> DependenceEstimate:
    """sqrt(C(n,2)) * sum over coordinate pairs of one-dimensional dCov_n^2."""
    return _estimate(build_plan(X, Y, "mdcov2"), "mdcov2")


def mhcov2(
    X: SampleLike,
    Y: SampleLike,
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
) -> DependenceEstimate:
    """Marginal hCov aggregate with per-coordinate bandwidths.

    Coordinates whose bandwidth is undefined contribute 0; their counts are in
    meta as degenerate_coordinates_x / degenerate_coordinates_y.
    """
    plan = build_plan(X, Y, "mhcov2", kx, ky)
    return _estimate(plan, "mhcov2", _kernel_meta(kx, ky))


def ucov2(X: SampleLike, Y: SampleLike, kernel: str = "abs-distance") -> DependenceEstimate:
    if kernel not in UCOV_KERNELS:
        raise InputValidationError(f"uCov kernel must be one of {UCOV_KERNELS}, got {kernel!r}")
    plan = build_plan(X, Y, "ucov2", ukernel=kernel)
    return _estimate(plan, "ucov2", {"ukernel": kernel})


def ucor2(X: SampleLike, Y: SampleLike, kernel: str = "abs-distance") -> DependenceEstimate:
    if kernel not in UCOV_KERNELS:
        raise InputValidationError(f"uCov kernel must be one of {UCOV_KERNELS}, got {kernel!r}")
    plan = build_plan(X, Y, "ucov2", ukernel=kernel)
    return _ratio_estimate(plan, "ucor2", {"ukernel": kernel})


def hdmss_statistic(X: SampleLike, Y: SampleLike, kernel: str = "abs-distance") -> float:
    """sqrt(C(n,2)) * uCov_n^2 / S_hat, standard normal under independence as n, p, q grow.

    S_hat^2 is the plug-in (K . K)(L . L) / (pq), so this reduces to
    sqrt(C(n,2)) times uCor_n^2.
    """
    estimate = ucor2(X, Y, kernel)
    n = as_sample(X).n
    return sqrt(comb(n, 2)) * estimate.value


def rv_coefficient(X: SampleLike, Y: SampleLike) -> DependenceEstimate:
    """Plug-in RV coefficient from the cov_n^2 U-statistics of all coordinate pairs."""
    return _ratio_estimate(build_plan(X, Y, "rv"), "rv")


def tau_hat(X: SampleLike) -> DependenceEstimate:
    """sqrt of the mean squared pairwise distance; 0 and degenerate for a constant sample."""
    sample = as_sample(X)
    if sample.n < 2:
        raise DomainError("tau_hat needs at least 2 rows")
    squared = pdist(sample.values, metric="sqeuclidean")
    tau2 = float(np.mean(squared))
    if tau2 == 0.0:
        logger.warning("tau_hat: all rows identical, returning 0")
        return DependenceEstimate(0.0, "tau", degenerate=True)
    return DependenceEstimate(sqrt(tau2), "tau")


def _sum_covsq(x: SampleMatrix, y: SampleMatrix) -> float:
    a = centered_side(x.values, "product").matrix
    b = centered_side(y.values, "product").matrix
    return inner_array(a, b)


def decompose(
    X: SampleLike,
    Y: SampleLike,
    target: str = "dcov",
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
) -> DecompositionReport:
    """Split dCov_n^2 (or tau * hCov_n^2) into its componentwise-covariance
    leading term and the remainder."""
    if target not in DECOMPOSE_TARGETS:
        raise InputValidationError(f"unknown target {target!r}; expected one of {DECOMPOSE_TARGETS}")
    x, y = as_pair(X, Y)
    tau_x, tau_y = tau_hat(x).value, tau_hat(y).value
    tau = tau_x * tau_y
    meta: Dict[str, Any] = {"tau_x": tau_x, "tau_y": tau_y}
    if tau == 0.0:
        return DecompositionReport(target, 0.0, 0.0, 0.0, 0.0, meta, degenerate=True)

    sum_cov = _sum_covsq(x, y)
    if target == "dcov":
        statistic = dcov2(x, y).value
        leading = sum_cov / tau
    else:
        kx = _check_kernel(kx)
        ky = _check_kernel(ky if ky is not None else kx)
        estimate = hcov2(x, y, kx, ky)
        gamma_x, gamma_y = estimate.meta.get("gamma_x"), estimate.meta.get("gamma_y")
        meta.update({"gamma_x": gamma_x, "gamma_y": gamma_y})
        if estimate.degenerate:
            return DecompositionReport(target, 0.0, 0.0, 0.0, tau, meta, degenerate=True)
        ax, ay = tau_x / gamma_x, tau_y / gamma_y
        prefactor = profile_derivative(kx.family, ax) * profile_derivative(ky.family, ay) * ax * ay
        meta["prefactor"] = prefactor
        statistic = tau * estimate.value
        leading = prefactor * sum_cov / tau

    return DecompositionReport(
        target=target,
        dcov2_or_scaled_hcov2=statistic,
        leading_term=leading,
        remainder=statistic - leading,
        tau_hat=tau,
        meta=meta,
    )


def estimate_phi(X: SampleLike, Y: SampleLike, kind: str = "phi2") -> float:
    """Plug-in signal ratio: phi1 from marginal dCov_n^2, phi2 from cov_n^2."""
    if kind not in ("phi1", "phi2"):
        raise InputValidationError(f"kind must be phi1 or phi2, got {kind!r}")
    family = "mdcov" if kind == "phi1" else "product"
    x, y = as_pair(X, Y)
    a = centered_side(x.values, family).matrix
    b = centered_side(y.values, family).matrix
    denominator = inner_array(a, a) * inner_array(b, b)
    if denominator <= 0.0:
        raise DegenerateSampleError(f"{kind}: within-block denominator is not positive")
    return float(np.clip(inner_array(a, b) / sqrt(denominator), -1.0, 1.0))


def taylor_diagnostic(X: SampleLike) -> Dict[str, Any]:
    """How well a_st / tau ~ 1 + L/2 holds: L = (|X_s - X_t|^2 - tau^2) / tau^2."""
    sample = as_sample(X)
    tau = tau_hat(sample).value
    if tau == 0.0:
        return {"tau_hat": 0.0, "max_abs_L": 0.0, "max_abs_R": 0.0, "median_ratio": None, "degenerate": True}
    distances = pdist(sample.values, metric="euclidean")
    L = (distances ** 2 - tau ** 2) / tau ** 2
    R = distances / tau - 1.0 - 0.5 * L
    nonzero = L != 0.0
    median_ratio = float(np.median(np.abs(R[nonzero]) / np.abs(0.5 * L[nonzero]))) if np.any(nonzero) else None
    return {
        "tau_hat": tau,
        "max_abs_L": float(np.max(np.abs(L))),
        "max_abs_R": float(np.max(np.abs(R))),
        "median_ratio": median_ratio,
        "degenerate": False,
    }
