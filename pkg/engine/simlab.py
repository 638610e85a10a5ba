"""Scenario generators and the seeded Monte Carlo driver for size/power tables.

Replicate r draws its data from numpy's Philox generator keyed by
SeedSequence([master_seed, r]); its permutation seed is keyed by
SeedSequence([master_seed, r, 1]). Aggregation only counts, so a run is
reproducible whatever the number of worker processes.
"""
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from math import sqrt
from multiprocessing import Pool
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import toeplitz

from engine.errors import DependenceError, InputValidationError
from engine.estimators import build_plan
from engine.inference import (
    TestMethod,
    degrees_of_freedom,
    permutation_p_value,
    studentized_test,
)
from engine.samples import SampleMatrix
from engine.specialfn import student_t_pdf

logger = logging.getLogger('simlab')

RNG_IDENTITY = "numpy.random.Philox keyed by SeedSequence([master_seed, replicate]); normals by ziggurat"

# fixed orthogonal 5 x 5 block of the Kronecker mixing matrix I (x) A
ORTHOGONAL_A = np.array([
    [0.0, sqrt(1 / 4), sqrt(1 / 5), -sqrt(1 / 4), -sqrt(3 / 10)],
    [sqrt(1 / 6), sqrt(1 / 4), sqrt(1 / 5), sqrt(1 / 4), sqrt(2 / 15)],
    [-sqrt(2 / 3), 0.0, sqrt(1 / 5), 0.0, sqrt(2 / 15)],
    [sqrt(1 / 6), -sqrt(1 / 4), sqrt(1 / 5), -sqrt(1 / 4), sqrt(2 / 15)],
    [0.0, -sqrt(1 / 4), sqrt(1 / 5), sqrt(1 / 4), -sqrt(3 / 10)],
])

SCENARIO_DEFAULTS: Dict[str, Dict[str, float]] = {
    "ex1-i": {},
    "ex1-ii": {"ar_x": 0.5, "ar_y": -0.5},
    "ex1-iii": {"toeplitz_base": 0.7},
    "ex2-i": {"rho": 0.5},
    "ex2-ii": {"rho": 0.7},
    "ex2-iii": {"rho": 0.5},
    "ex3-i": {},
    "ex3-ii": {"toeplitz_base": 0.7},
    "ex3-iii": {},
    "ex4-i": {},
    "ex4-ii": {},
    "ex4-iii": {},
    "normal-xy": {"rho": 0.5},
}
SCENARIO_NAMES = tuple(SCENARIO_DEFAULTS)
NULL_SCENARIOS = ("ex1-i", "ex1-ii", "ex1-iii")


@dataclass(frozen=True)
class ScenarioSpec:
    example: str
    n: int
    p: int
    q: Optional[int] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.example not in SCENARIO_DEFAULTS:
            raise InputValidationError(
                f"unknown scenario {self.example!r}; valid names: {', '.join(SCENARIO_NAMES)}"
            )
        if self.n < 4:
            raise InputValidationError(f"n must be at least 4, got {self.n}")
        if self.p < 1:
            raise InputValidationError(f"p must be at least 1, got {self.p}")
        q = self.p if self.q is None else self.q
        if q < 1:
            raise InputValidationError(f"q must be at least 1, got {q}")
        if self.example not in NULL_SCENARIOS and q != self.p:
            raise InputValidationError(f"{self.example} builds Y from X coordinatewise and needs q == p")
        if self.example == "ex2-iii" and self.p % 5 != 0:
            raise InputValidationError(f"ex2-iii needs p divisible by 5, got p={self.p}")
        unknown = set(self.params) - set(SCENARIO_DEFAULTS[self.example])
        if unknown:
            raise InputValidationError(f"{self.example} takes no parameters {sorted(unknown)}")
        merged = {**SCENARIO_DEFAULTS[self.example], **self.params}
        for key in ("ar_x", "ar_y"):
            if key in merged and not -1.0 < merged[key] < 1.0:
                raise InputValidationError(f"{key} must lie in (-1, 1), got {merged[key]}")
        if "rho" in merged and not 0.0 <= merged["rho"] <= 1.0:
            raise InputValidationError(f"rho must lie in [0, 1], got {merged['rho']}")
        if "toeplitz_base" in merged and not 0.0 <= merged["toeplitz_base"] < 1.0:
            raise InputValidationError(f"toeplitz_base must lie in [0, 1), got {merged['toeplitz_base']}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "params", merged)

    @property
    def is_null(self) -> bool:
        return self.example in NULL_SCENARIOS

    def to_dict(self) -> Dict[str, Any]:
        return {"example": self.example, "n": self.n, "p": self.p, "q": self.q, "params": dict(self.params)}


@dataclass
class MonteCarloReport:
    scenario: ScenarioSpec
    replicates: int
    methods: List[str]
    alphas: List[float]
    rejection_rates: Dict[str, Dict[float, Optional[float]]]
    standard_errors: Dict[str, Dict[float, Optional[float]]]
    master_seed: int
    wall_time: float
    regime: str = "hdlss"
    permutations: int = 200
    failures: Dict[str, int] = field(default_factory=dict)
    mean_statistic: Dict[str, Optional[float]] = field(default_factory=dict)
    rng: str = RNG_IDENTITY

    def rows(self) -> List[Dict[str, Any]]:
        """One row per (method, alpha), the layout of the CSV output."""
        return [
            {
                "method": method,
                "alpha": alpha,
                "rate": self.rejection_rates[method][alpha],
                "stderr": self.standard_errors[method][alpha],
                "replicates": self.replicates,
                "seed": self.master_seed,
            }
            for method in self.methods
            for alpha in self.alphas
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "replicates": self.replicates,
            "methods": self.methods,
            "alphas": self.alphas,
            "regime": self.regime,
            "permutations": self.permutations,
            "rejection_rates": {m: {f"{a:g}": r for a, r in rates.items()} for m, rates in self.rejection_rates.items()},
            "standard_errors": {m: {f"{a:g}": s for a, s in errs.items()} for m, errs in self.standard_errors.items()},
            "failures": self.failures,
            "mean_statistic": self.mean_statistic,
            "master_seed": self.master_seed,
            "rng": self.rng,
            "wall_time": self.wall_time,
        }


@dataclass
class NullSamples:
    """Studentized statistics drawn under a null scenario, per method."""
    scenario: ScenarioSpec
    v: int
    statistics: Dict[str, List[float]]
    master_seed: int
    failures: Dict[str, int] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"statistic": value, "method": method}
            for method, values in self.statistics.items()
            for value in values
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "v": self.v,
            "statistics": self.statistics,
            "failures": self.failures,
            "master_seed": self.master_seed,
        }


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def replicate_permutation_seed(master_seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([master_seed, replicate, 1]).generate_state(1)[0])


@lru_cache(maxsize=32)
def toeplitz_cholesky(p: int, base: float = 0.7) -> np.ndarray:
    """Lower Cholesky factor of the p x p matrix (base^|i-j|)."""
    factor = np.linalg.cholesky(toeplitz(base ** np.arange(p)))
    factor.setflags(write=False)
    return factor


def kron_mixing(p: int) -> np.ndarray:
    return np.kron(np.eye(p // 5), ORTHOGONAL_A)


def _ar1_rows(rng: np.random.Generator, n: int, p: int, coefficient: float) -> np.ndarray:
    """Stationary Gaussian AR(1) along the coordinates of each row, unit innovations."""
    innovations = rng.standard_normal((n, p))
    out = np.empty((n, p))
    out[:, 0] = innovations[:, 0] / sqrt(1.0 - coefficient * coefficient)
    for k in range(1, p):
        out[:, k] = coefficient * out[:, k - 1] + innovations[:, k]
    return out


def _toeplitz_normal(rng: np.random.Generator, n: int, p: int, base: float) -> np.ndarray:
    return rng.standard_normal((n, p)) @ toeplitz_cholesky(p, base).T


def _mix(signal: np.ndarray, noise: np.ndarray, rho: float) -> np.ndarray:
    return (rho * signal + (1.0 - rho) * noise) / sqrt(rho * rho + (1.0 - rho) * (1.0 - rho))


def draw(spec: ScenarioSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    n, p, q = spec.n, spec.p, spec.q
    params = spec.params
    example = spec.example

    if example == "ex1-i":
        return rng.standard_normal((n, p)), rng.standard_normal((n, q))
    if example == "ex1-ii":
        return _ar1_rows(rng, n, p, params["ar_x"]), _ar1_rows(rng, n, q, params["ar_y"])
    if example == "ex1-iii":
        base = params["toeplitz_base"]
        return _toeplitz_normal(rng, n, p, base), _toeplitz_normal(rng, n, q, base)
    if example in ("ex2-i", "ex2-ii"):
        x = rng.standard_normal((n, p))
        z = rng.standard_normal((n, p))
        return x, _mix(x, z, params["rho"])
    if example == "ex2-iii":
        x = rng.standard_normal((n, p))
        z = rng.standard_normal((n, p))
        return x, _mix(x @ kron_mixing(p).T, z, params["rho"])
    if example == "ex3-i":
        x = rng.standard_normal((n, p))
        return x, x * x
    if example == "ex3-ii":
        x = _toeplitz_normal(rng, n, p, params["toeplitz_base"])
        return x, x * x
    if example == "ex3-iii":
        x = rng.standard_normal((n, p))
        return x, np.log(np.abs(x))
    if example == "ex4-i":
        x = rng.uniform(-1.0, 1.0, (n, p))
        return x, x * x
    if example == "ex4-ii":
        x = rng.uniform(0.0, 1.0, (n, p))
        return x, 4.0 * x ** 3 - 3.6 * x + 0.8
    if example == "ex4-iii":
        z = rng.uniform(0.0, 2.0 * np.pi, (n, p))
        return np.sin(z), np.cos(z)
    if example == "normal-xy":
        rho = params["rho"]
        x = rng.standard_normal((n, p))
        z = rng.standard_normal((n, p))
        return x, rho * x + sqrt(1.0 - rho * rho) * z
    raise InputValidationError(f"unknown scenario {example!r}")


def generate(spec: ScenarioSpec, seed: int) -> Tuple[SampleMatrix, SampleMatrix]:
    x, y = draw(spec, make_rng(seed))
    return SampleMatrix(x), SampleMatrix(y)


def _parse_methods(methods: Iterable) -> List[TestMethod]:
    parsed = [m if isinstance(m, TestMethod) else TestMethod.parse(m) for m in methods]
    if not parsed:
        raise InputValidationError("at least one method is required")
    return parsed


def _replicate(task) -> Dict[str, Optional[Tuple[float, float]]]:
    """Run every method on replicate r; None marks a failed method."""
    spec, methods, regime, permutations, master_seed, r, bandwidth = task
    outcome: Dict[str, Optional[Tuple[float, float]]] = {}
    try:
        x, y = draw(spec, make_rng(master_seed, r))
    except DependenceError as e:
        logger.warning("replicate %d: data generation failed: %s", r, e)
        return {method.id: None for method in methods}

    plans = {}
    perm_seed = replicate_permutation_seed(master_seed, r)
    for method in methods:
        key = (method.estimator, method.kernel)
        try:
            if key not in plans:
                kernel = method.kernel_spec(bandwidth)
                plans[key] = build_plan(x, y, method.estimator, kernel, kernel, method.ukernel)
            plan = plans[key]
            if method.procedure == "t":
                result = studentized_test(plan, regime, label=method.id)
            else:
                result = permutation_p_value(plan, permutations, perm_seed, label=method.id)
            outcome[method.id] = (result.p_value, result.statistic)
        except DependenceError as e:
            logger.warning("replicate %d: %s failed: %s", r, method.id, e)
            outcome[method.id] = None
    logger.debug("replicate %d done", r)
    return outcome


def _run_tasks(tasks: Sequence, workers: int) -> List[Dict[str, Optional[Tuple[float, float]]]]:
    if workers <= 1 or len(tasks) <= 1:
        return [_replicate(task) for task in tasks]
    chunksize = max(1, len(tasks) // (4 * workers))
    with Pool(processes=workers) as pool:
        return pool.map(_replicate, tasks, chunksize=chunksize)


def monte_carlo(
    spec: ScenarioSpec,
    methods: Iterable,
    alphas: Sequence[float] = (0.05,),
    replicates: int = 1000,
    permutations: int = 200,
    master_seed: int = 0,
    regime: str = "hdlss",
    bandwidth: Optional[float] = None,
    workers: int = 1,
) -> MonteCarloReport:
    """Empirical rejection rates of each method over seeded replicates."""
    if replicates < 1:
        raise InputValidationError(f"replicates must be at least 1, got {replicates}")
    parsed = _parse_methods(methods)
    alphas = [float(a) for a in alphas]
    if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
        raise InputValidationError(f"alphas must lie in (0, 1), got {alphas}")
    if any(m.procedure == "perm" for m in parsed) and permutations < 1:
        raise InputValidationError("permutation methods need at least 1 permutation")

    logger.info(
        "monte carlo: scenario=%s n=%d p=%d q=%d replicates=%d methods=%s seed=%d workers=%d",
        spec.example, spec.n, spec.p, spec.q, replicates, [m.id for m in parsed], master_seed, workers,
    )
    logger.info("rng: %s", RNG_IDENTITY)
    started = time.perf_counter()
    tasks = [(spec, parsed, regime, permutations, master_seed, r, bandwidth) for r in range(replicates)]
    outcomes = _run_tasks(tasks, workers)

    ids = [m.id for m in parsed]
    rates: Dict[str, Dict[float, Optional[float]]] = {}
    errors: Dict[str, Dict[float, Optional[float]]] = {}
    failures: Dict[str, int] = {}
    means: Dict[str, Optional[float]] = {}
    for method_id in ids:
        results = [o[method_id] for o in outcomes if o[method_id] is not None]
        failures[method_id] = replicates - len(results)
        effective = len(results)
        p_values = np.array([p for p, _ in results])
        means[method_id] = float(np.mean([s for _, s in results])) if results else None
        rates[method_id], errors[method_id] = {}, {}
        for alpha in alphas:
            if effective == 0:
                rates[method_id][alpha] = errors[method_id][alpha] = None
                continue
            rate = int(np.count_nonzero(p_values <= alpha)) / effective
            rates[method_id][alpha] = rate
            errors[method_id][alpha] = sqrt(rate * (1.0 - rate) / effective)
        if failures[method_id]:
            logger.warning("%s: %d of %d replicates failed", method_id, failures[method_id], replicates)

    wall_time = time.perf_counter() - started
    logger.info("monte carlo finished in %.2fs", wall_time)
    return MonteCarloReport(
        scenario=spec,
        replicates=replicates,
        methods=ids,
        alphas=alphas,
        rejection_rates=rates,
        standard_errors=errors,
        master_seed=master_seed,
        wall_time=wall_time,
        regime=regime,
        permutations=permutations,
        failures=failures,
        mean_statistic=means,
    )


def null_statistics(
    spec: ScenarioSpec,
    methods: Iterable,
    replicates: int,
    master_seed: int = 0,
    bandwidth: Optional[float] = None,
    workers: int = 1,
) -> NullSamples:
    """Studentized statistics T_R over seeded replicates of a scenario."""
    if replicates < 1:
        raise InputValidationError(f"replicates must be at least 1, got {replicates}")
    parsed = [TestMethod(m.family, "t", m.kernel) for m in _parse_methods(methods)]
    if not spec.is_null:
        logger.warning("null_statistics on %s, which is not a null scenario", spec.example)
    logger.info(
        "null samples: scenario=%s n=%d p=%d replicates=%d methods=%s seed=%d",
        spec.example, spec.n, spec.p, replicates, [m.id for m in parsed], master_seed,
    )
    tasks = [(spec, parsed, "hdlss", 0, master_seed, r, bandwidth) for r in range(replicates)]
    outcomes = _run_tasks(tasks, workers)
    statistics: Dict[str, List[float]] = {}
    failures: Dict[str, int] = {}
    for method in parsed:
        values = [o[method.id][1] for o in outcomes if o[method.id] is not None]
        statistics[method.id] = values
        failures[method.id] = replicates - len(values)
    return NullSamples(
        scenario=spec,
        v=degrees_of_freedom(spec.n),
        statistics=statistics,
        master_seed=master_seed,
        failures=failures,
    )


def t_density_grid(v: int, points: int = 201, lower: float = -5.0, upper: float = 5.0) -> List[Tuple[float, float]]:
    """(x, density of t_{v-1}) pairs on an even grid for overlay plots."""
    if v < 2:
        raise InputValidationError(f"v must be at least 2, got {v}")
    if points < 2:
        raise InputValidationError(f"points must be at least 2, got {points}")
    grid = np.linspace(lower, upper, points)
    density = student_t_pdf(grid, v - 1)
    return list(zip(grid.tolist(), np.atleast_1d(density).tolist()))
