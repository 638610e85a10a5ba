import logging
from dataclasses import dataclass, field
from math import comb, sqrt
from typing import Any, Dict, Iterable, Optional

import numpy as np
from scipy.stats import norm

from engine.errors import DegenerateSampleError, DomainError, InputValidationError
from engine.estimators import StatisticPlan, build_plan
from engine.kernels import KernelSpec
from engine.samples import SampleLike
from engine.specialfn import student_t_sf

logger = logging.getLogger('inference')

REGIMES = ("hdlss", "hdmss")
TEST_FAMILIES = ("dcov", "hcov", "mdcov", "mhcov", "ucov")
T_TEST_METHODS = ("dcov2", "hcov2", "mdcov2", "mhcov2", "ucov2")
UCOV_KERNEL_NAMES = {"abs": "abs-distance", "squared": "squared-distance"}

# the twelve procedures compared in the simulation tables
TABLE_METHODS = (
    "dcov", "t-dcov",
    "hcov-gaussian", "hcov-laplacian", "t-hcov-gaussian", "t-hcov-laplacian",
    "mdcov", "t-mdcov",
    "mhcov-gaussian", "mhcov-laplacian", "t-mhcov-gaussian", "t-mhcov-laplacian",
)

R_STAR_CLAMP = 1.0 - 1e-12
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TestMethod:
    """A parsed test identifier such as `t-mhcov-laplacian` or `dcov`.

    A leading `t-` selects the studentized test; without it the permutation
    test is meant.
    """
    __test__ = False

    family: str
    procedure: str = "perm"
    kernel: Optional[str] = None

    def __post_init__(self):
        if self.family not in TEST_FAMILIES:
            raise InputValidationError(f"unknown statistic {self.family!r}; expected one of {TEST_FAMILIES}")
        if self.procedure not in ("t", "perm"):
            raise InputValidationError(f"procedure must be 't' or 'perm', got {self.procedure!r}")
        if self.family in ("hcov", "mhcov"):
            if self.kernel not in ("gaussian", "laplacian"):
                raise InputValidationError(f"{self.family} needs a gaussian or laplacian kernel, got {self.kernel!r}")
        elif self.family == "ucov":
            if self.kernel not in UCOV_KERNEL_NAMES:
                raise InputValidationError(f"ucov kernel must be abs or squared, got {self.kernel!r}")
        elif self.kernel is not None:
            raise InputValidationError(f"{self.family} takes no kernel")

    @classmethod
    def parse(cls, text: str, default_kernel: str = "gaussian") -> "TestMethod":
        """Parse an id such as `t-mhcov-laplacian`; bare hcov/mhcov take `default_kernel`."""
        name = text.strip().lower()
        procedure = "perm"
        if name.startswith("t-"):
            procedure, name = "t", name[2:]
        family, _, kernel = name.partition("-")
        if not kernel:
            kernel = {"hcov": default_kernel, "mhcov": default_kernel, "ucov": "abs"}.get(family)
        return cls(family=family, procedure=procedure, kernel=kernel or None)

    @property
    def id(self) -> str:
        prefix = "t-" if self.procedure == "t" else ""
        suffix = f"-{self.kernel}" if self.kernel else ""
        return f"{prefix}{self.family}{suffix}"

    @property
    def estimator(self) -> str:
        return f"{self.family}2"

    @property
    def ukernel(self) -> str:
        return UCOV_KERNEL_NAMES.get(self.kernel, "abs-distance")

    def kernel_spec(self, bandwidth: Optional[float] = None) -> Optional[KernelSpec]:
        if self.family not in ("hcov", "mhcov"):
            return None
        return KernelSpec(self.kernel, bandwidth)


@dataclass
class TestResult:
    __test__ = False

    method: str
    statistic: float
    reference: str
    p_value: float
    v: int
    n: int
    seed: Optional[int] = None
    decision_at: Dict[float, bool] = field(default_factory=dict)
    degenerate: bool = False
    heuristic_reference: bool = False
    meta: Dict[str, Any] = field(default_factory=dict)

    def rejects(self, alpha: float) -> bool:
        return self.p_value <= alpha

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "v": self.v,
            "n": self.n,
            "reference": self.reference,
            "p_value": self.p_value,
            "seed": self.seed,
            "decision_at": {f"{alpha:g}": ("reject" if reject else "accept") for alpha, reject in self.decision_at.items()},
            "degenerate": self.degenerate,
            "heuristic_reference": self.heuristic_reference,
            "meta": self.meta,
        }


def degrees_of_freedom(n: int) -> int:
    return n * (n - 3) // 2


def studentized_statistic(rxy: float, rxx: float, ryy: float, n: int) -> float:
    """T_R = sqrt(v-1) R* / sqrt(1 - R*^2) with R* = rxy / sqrt(rxx ryy) and v = n(n-3)/2."""
    if n < 4:
        raise DomainError("sample size below 4")
    if rxx <= 0.0 or ryy <= 0.0:
        raise DegenerateSampleError("studentization needs positive R(X,X) and R(Y,Y)")
    v = degrees_of_freedom(n)
    r_star = rxy / sqrt(rxx * ryy)
    r_star = min(max(r_star, -R_STAR_CLAMP), R_STAR_CLAMP)
    return sqrt(v - 1) * r_star / sqrt(1.0 - r_star * r_star)


def _decisions(p_value: float, alphas: Optional[Iterable[float]]) -> Dict[float, bool]:
    return {float(alpha): p_value <= alpha for alpha in (alphas or ())}


def _method_label(plan: StatisticPlan, kx: Optional[KernelSpec]) -> str:
    if plan.method in ("hcov2", "mhcov2"):
        return f"{plan.method}-{(kx or KernelSpec()).family}"
    return plan.method


def studentized_test(
    plan: StatisticPlan,
    regime: str = "hdlss",
    alphas: Optional[Iterable[float]] = None,
    label: Optional[str] = None,
) -> TestResult:
    """Studentized test on a prepared statistic plan; upper-tail p-value."""
    if regime not in REGIMES:
        raise InputValidationError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    n = plan.n
    v = degrees_of_freedom(n)
    label = label or plan.method
    reference = f"student-t(df={v - 1})" if regime == "hdlss" else "standard-normal"
    heuristic = plan.method == "mhcov2"
    rxy = plan.value()
    rxx, ryy = plan.self_values()
    meta = dict(plan.meta)
    meta.update({"r_xy": rxy, "r_xx": rxx, "r_yy": ryy})

    if plan.degenerate or rxx <= 0.0 or ryy <= 0.0:
        logger.warning("%s: degenerate statistic (R(X,X)=%s, R(Y,Y)=%s), reporting p=1", label, rxx, ryy)
        return TestResult(
            method=label, statistic=0.0, reference=reference, p_value=1.0, v=v, n=n,
            decision_at=_decisions(1.0, alphas), degenerate=True,
            heuristic_reference=heuristic, meta=meta,
        )

    statistic = studentized_statistic(rxy, rxx, ryy, n)
    if regime == "hdlss":
        p_value = student_t_sf(statistic, v - 1)
    else:
        p_value = float(norm.sf(statistic))
    r_star = rxy / sqrt(rxx * ryy)
    meta["r_star"] = r_star
    if plan.method == "ucov2":
        meta["z_hdmss"] = sqrt(comb(n, 2)) * r_star
    if heuristic:
        logger.debug("%s: t reference is heuristic with data-driven marginal bandwidths", label)
    return TestResult(
        method=label,
        statistic=statistic,
        reference=reference,
        p_value=min(max(p_value, 0.0), 1.0),
        v=v,
        n=n,
        decision_at=_decisions(p_value, alphas),
        heuristic_reference=heuristic,
        meta=meta,
    )


def t_test(
    X: SampleLike,
    Y: SampleLike,
    method: str = "dcov2",
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
    regime: str = "hdlss",
    ukernel: str = "abs-distance",
    alphas: Optional[Iterable[float]] = None,
) -> TestResult:
    if method not in T_TEST_METHODS:
        raise InputValidationError(f"t-test method must be one of {T_TEST_METHODS}, got {method!r}")
    plan = build_plan(X, Y, method, kx, ky, ukernel)
    return studentized_test(plan, regime, alphas, _method_label(plan, kx))


def permutation_indices(n: int, seed: int, start: int, stop: int) -> np.ndarray:
    """Row permutations start..stop-1; permutation b is drawn from Philox keyed by (seed, b)."""
    rows = []
    for b in range(start, stop):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
        rows.append(rng.permutation(n))
    return np.stack(rows)


def _batch_size(n: int) -> int:
    return max(1, min(64, int(2e7 // (n * n))))


def permutation_p_value(
    plan: StatisticPlan,
    permutations: int,
    seed: int,
    alphas: Optional[Iterable[float]] = None,
    label: Optional[str] = None,
) -> TestResult:
    """Add-one permutation p-value (1 + #{stat_b >= stat_obs}) / (1 + B), rows of X shuffled."""
    if permutations < 1:
        raise InputValidationError(f"number of permutations must be at least 1, got {permutations}")
    n = plan.n
    label = label or plan.method
    observed = plan.value()
    threshold = observed - TIE_TOL * abs(observed)
    exceed = 0
    batch = _batch_size(n)
    for start in range(0, permutations, batch):
        stop = min(start + batch, permutations)
        values = plan.permuted_values(permutation_indices(n, seed, start, stop))
        exceed += int(np.count_nonzero(np.atleast_1d(values) >= threshold))
    p_value = (1.0 + exceed) / (1.0 + permutations)
    return TestResult(
        method=label,
        statistic=observed,
        reference=f"permutation({permutations})",
        p_value=p_value,
        v=degrees_of_freedom(n),
        n=n,
        seed=seed,
        decision_at=_decisions(p_value, alphas),
        degenerate=plan.degenerate,
        meta=dict(plan.meta),
    )


def permutation_test(
    X: SampleLike,
    Y: SampleLike,
    method: str = "dcov2",
    kx: Optional[KernelSpec] = None,
    ky: Optional[KernelSpec] = None,
    B: int = 200,
    seed: int = 0,
    ukernel: str = "abs-distance",
    alphas: Optional[Iterable[float]] = None,
) -> TestResult:
    plan = build_plan(X, Y, method, kx, ky, ukernel)
    return permutation_p_value(plan, B, seed, alphas, _method_label(plan, kx))


def run_test(
    X: SampleLike,
    Y: SampleLike,
    method: TestMethod,
    regime: str = "hdlss",
    permutations: int = 200,
    seed: int = 0,
    bandwidth: Optional[float] = None,
    alphas: Optional[Iterable[float]] = None,
) -> TestResult:
    """Run the test a TestMethod names."""
    spec = method.kernel_spec(bandwidth)
    plan = build_plan(X, Y, method.estimator, spec, spec, method.ukernel)
    if method.procedure == "t":
        return studentized_test(plan, regime, alphas, method.id)
    return permutation_p_value(plan, permutations, seed, alphas, method.id)
