import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Union

import numpy as np

from engine.centering import PairwiseMatrix
from engine.errors import DegenerateSampleError, DomainError, InputValidationError

logger = logging.getLogger('kernels')

KERNEL_FAMILIES = ("euclidean", "squared-euclidean", "gaussian", "laplacian")
BANDWIDTH_FAMILIES = ("gaussian", "laplacian")


def _gaussian(a):
    return np.exp(-0.5 * a * a)


def _gaussian_derivative(a):
    return -a * np.exp(-0.5 * a * a)


def _laplacian(a):
    return np.exp(-a)


def _laplacian_derivative(a):
    return -np.exp(-a)


# f(a) and its analytic derivative for K(x, y) = f(|x - y| / gamma)
PROFILES: Dict[str, Dict[str, Callable]] = {
    "gaussian": {"f": _gaussian, "df": _gaussian_derivative},
    "laplacian": {"f": _laplacian, "df": _laplacian_derivative},
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth rule; `bandwidth=None` means median of pairs."""
    family: str = "gaussian"
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InputValidationError(
                f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}"
            )
        if self.bandwidth is not None and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InputValidationError(f"fixed bandwidth must be positive, got {self.bandwidth!r}")

    @property
    def bandwidth_mode(self) -> str:
        if self.family not in BANDWIDTH_FAMILIES:
            return "ignored"
        return "median-of-pairs" if self.bandwidth is None else "fixed"

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family, "bandwidth_mode": self.bandwidth_mode, "bandwidth": self.bandwidth}


def _entries(D: Union[PairwiseMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(D, PairwiseMatrix):
        if D.kind != "distance":
            raise DomainError(f"expected a distance matrix, got kind {D.kind!r}")
        return D.entries
    return np.asarray(D, dtype=float)


def median_bandwidth(D: Union[PairwiseMatrix, np.ndarray]) -> float:
    """Median of the n(n-1)/2 pairwise distances; even counts take the midpoint."""
    entries = _entries(D)
    n = entries.shape[0]
    if n < 2:
        raise DomainError("median bandwidth needs at least 2 rows")
    upper = entries[np.triu_indices(n, k=1)]
    if not np.any(upper > 0.0):
        raise DegenerateSampleError("all pairwise distances are zero; bandwidth undefined")
    gamma = float(np.median(upper))
    if gamma == 0.0:
        raise DegenerateSampleError("median pairwise distance is zero; bandwidth undefined")
    return gamma


def resolve_bandwidth(D: Union[PairwiseMatrix, np.ndarray], spec: KernelSpec) -> float:
    if spec.bandwidth is not None:
        return float(spec.bandwidth)
    return median_bandwidth(D)


def kernel_array(distances: np.ndarray, family: str, gamma: float) -> np.ndarray:
    """Evaluate f(d / gamma) entrywise on a raw distance array."""
    return PROFILES[family]["f"](distances / gamma)


def apply_kernel(D: Union[PairwiseMatrix, np.ndarray], spec: KernelSpec) -> PairwiseMatrix:
    entries = _entries(D)
    if spec.family == "euclidean":
        return PairwiseMatrix(entries, "distance")
    if spec.family == "squared-euclidean":
        return PairwiseMatrix(entries * entries, "squared-distance")
    gamma = resolve_bandwidth(entries, spec)
    return PairwiseMatrix(kernel_array(entries, spec.family, gamma), "kernel")


def profile_derivative(family: str, a: float) -> float:
    if family not in PROFILES:
        raise DomainError(f"kernel family {family!r} has no smooth profile")
    return float(PROFILES[family]["df"](a))
