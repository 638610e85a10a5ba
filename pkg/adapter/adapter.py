import logging
import os
from dataclasses import dataclass, field, replace
from statistics import median
from typing import Any, Callable, Dict, List, Optional, Sequence

from adapter.report_adapter import OUTPUT_FORMATS, Report, ReportAdapter
from app_utils import read_matrix, write_matrix
from engine.errors import InputValidationError
from engine.estimators import decompose, taylor_diagnostic, DECOMPOSE_TARGETS
from engine.inference import REGIMES, TABLE_METHODS, TestMethod, run_test
from engine.kernels import KernelSpec
from engine.samples import as_pair
from engine.simlab import (
    SCENARIO_NAMES,
    ScenarioSpec,
    draw,
    generate,
    make_rng,
    monte_carlo,
    null_statistics,
    t_density_grid,
)
from engine.specialfn import MAX_TERMS, SERIES_TOL, PowerSpec, power_inf, power_n

logger = logging.getLogger('command_adapter')

COMMANDS = ("test", "simulate", "power", "diagnose", "null-samples", "generate")
DEFAULT_PHI_GRID = [round(0.05 * i, 2) for i in range(11)]


@dataclass
class RunConfig:
    """Everything a command needs; validated in full before any computation."""
    command: str
    x_path: Optional[str] = None
    y_path: Optional[str] = None
    method: str = "dcov"
    methods: List[str] = field(default_factory=list)
    kernel: str = "gaussian"
    bandwidth: Optional[float] = None
    regime: str = "hdlss"
    permutations: int = 0
    alphas: List[float] = field(default_factory=lambda: [0.05])
    scenario: Optional[str] = None
    n: Optional[int] = None
    ns: List[int] = field(default_factory=list)
    p: Optional[int] = None
    q: Optional[int] = None
    params: Dict[str, float] = field(default_factory=dict)
    replicates: int = 1
    seed: int = 0
    target: str = "dcov"
    phis: List[float] = field(default_factory=list)
    phi0s: List[float] = field(default_factory=list)
    points: int = 201
    workers: int = 1
    series_tol: float = SERIES_TOL
    max_terms: int = MAX_TERMS
    out: Optional[str] = None
    format: str = "json"

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise InputValidationError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.format not in OUTPUT_FORMATS:
            raise InputValidationError(f"format must be one of {OUTPUT_FORMATS}, got {self.format!r}")
        if self.regime not in REGIMES:
            raise InputValidationError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.kernel not in ("gaussian", "laplacian"):
            raise InputValidationError(f"kernel must be gaussian or laplacian, got {self.kernel!r}")
        if self.bandwidth is not None and not self.bandwidth > 0.0:
            raise InputValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.permutations < 0:
            raise InputValidationError(f"permutations must be non-negative, got {self.permutations}")
        if not self.alphas or any(not 0.0 < a < 1.0 for a in self.alphas):
            raise InputValidationError(f"alpha values must lie in (0, 1), got {self.alphas}")
        if self.replicates < 1:
            raise InputValidationError(f"replicates must be at least 1, got {self.replicates}")
        if self.workers < 1:
            raise InputValidationError(f"workers must be at least 1, got {self.workers}")
        if self.seed < 0:
            raise InputValidationError(f"seed must be non-negative, got {self.seed}")
        if not self.series_tol > 0.0 or self.max_terms < 1:
            raise InputValidationError("series_tol must be positive and max_terms at least 1")
        getattr(self, f"_validate_{self.command.replace('-', '_')}")()
        return self

    def _needs_scenario(self) -> None:
        if self.scenario is None:
            raise InputValidationError(f"--scenario is required; valid names: {', '.join(SCENARIO_NAMES)}")
        if self.n is None or self.p is None:
            raise InputValidationError("--n and --p are required with --scenario")
        self.scenario_spec()

    def _validate_test(self) -> None:
        if not (self.x_path and self.y_path):
            raise InputValidationError("test needs --x and --y")
        self.test_method()

    def _validate_simulate(self) -> None:
        self._needs_scenario()
        self.method_list(TABLE_METHODS)

    def _validate_power(self) -> None:
        if not self.ns:
            raise InputValidationError("power needs at least one --n")
        for n in self.ns:
            for alpha in self.alphas:
                PowerSpec(n=n, alpha=alpha, series_tol=self.series_tol, max_terms=self.max_terms)
        for phi in self.phis:
            if not 0.0 <= phi < 1.0:
                raise InputValidationError(f"phi must lie in [0, 1), got {phi}")
        for phi0 in self.phi0s:
            if not phi0 >= 0.0:
                raise InputValidationError(f"phi0 must be non-negative, got {phi0}")

    def _validate_diagnose(self) -> None:
        if self.target not in DECOMPOSE_TARGETS:
            raise InputValidationError(f"target must be one of {DECOMPOSE_TARGETS}, got {self.target!r}")
        if self.x_path or self.y_path:
            if not (self.x_path and self.y_path):
                raise InputValidationError("diagnose needs both --x and --y")
        else:
            self._needs_scenario()

    def _validate_null_samples(self) -> None:
        self._needs_scenario()
        self.method_list(["t-dcov"])
        if self.points < 2:
            raise InputValidationError(f"points must be at least 2, got {self.points}")

    def _validate_generate(self) -> None:
        self._needs_scenario()
        if not (self.x_path and self.y_path):
            raise InputValidationError("generate needs --x and --y output paths")

    def scenario_spec(self) -> ScenarioSpec:
        return ScenarioSpec(self.scenario, self.n, self.p, self.q, dict(self.params))

    def test_method(self) -> TestMethod:
        """The test the --method/--kernel/--permutations flags select.

        A bare statistic name means the studentized test unless permutations
        were requested; `t-` prefixed or kernel-suffixed ids are taken as given.
        """
        parsed = TestMethod.parse(self.method, self.kernel)
        if not self.method.lower().startswith("t-") and self.permutations == 0:
            parsed = replace(parsed, procedure="t")
        return parsed

    def method_list(self, default: Sequence[str]) -> List[TestMethod]:
        """--methods (or `default`), with --kernel applied to bare hcov/mhcov ids."""
        return [TestMethod.parse(method, self.kernel) for method in self.methods or default]

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.bandwidth)

    def to_dict(self) -> Dict[str, Any]:
        return {key: value for key, value in vars(self).items() if value not in (None, [], {})}


class CommandAdapter:
    def __init__(self, output_dir: Optional[str] = None):
        self.report_adapter = ReportAdapter(output_dir or os.getenv("DEPCOV_OUTPUT_DIR", "."))
        self.COMMANDS: Dict[str, Callable[[RunConfig], Report]] = {
            "test": self.cmd_test,
            "simulate": self.cmd_simulate,
            "power": self.cmd_power,
            "diagnose": self.cmd_diagnose,
            "null-samples": self.cmd_null_samples,
            "generate": self.cmd_generate,
        }
        logger.info("CommandAdapter initialized")

    def run(self, config: RunConfig) -> Report:
        config.validate()
        logger.info("Running %s with config: %s", config.command, config.to_dict())
        try:
            report = self.COMMANDS[config.command](config)
        except Exception as e:
            logger.error("Command %s failed: %s", config.command, str(e))
            raise
        if config.command != "generate":
            self.report_adapter.save(report, config.format, config.out)
        return report

    def _load_pair(self, config: RunConfig):
        x = read_matrix(config.x_path)
        y = read_matrix(config.y_path)
        return as_pair(x, y)

    def cmd_test(self, config: RunConfig) -> Report:
        x, y = self._load_pair(config)
        method = config.test_method()
        result = run_test(
            x, y, method,
            regime=config.regime,
            permutations=config.permutations,
            seed=config.seed,
            bandwidth=config.bandwidth,
            alphas=config.alphas,
        )
        if result.heuristic_reference:
            logger.warning("%s: the t reference is heuristic for data-driven marginal bandwidths", method.id)
        payload = result.to_dict()
        fields = ["method", "statistic", "v", "reference", "p_value", "seed", "degenerate"]
        return Report("test", payload, [payload], fields)

    def cmd_simulate(self, config: RunConfig) -> Report:
        report = monte_carlo(
            config.scenario_spec(),
            config.method_list(TABLE_METHODS),
            alphas=config.alphas,
            replicates=config.replicates,
            permutations=config.permutations or 200,
            master_seed=config.seed,
            regime=config.regime,
            bandwidth=config.bandwidth,
            workers=config.workers,
        )
        fields = ["method", "alpha", "rate", "stderr", "replicates", "seed"]
        return Report("simulate", report.to_dict(), report.rows(), fields)

    def cmd_power(self, config: RunConfig) -> Report:
        rows: List[Dict[str, Any]] = []
        tol, cap = config.series_tol, config.max_terms
        phis = config.phis or ([] if config.phi0s else DEFAULT_PHI_GRID)
        for n in config.ns:
            v = n * (n - 3) // 2
            for alpha in config.alphas:
                for phi in phis:
                    rows.append({
                        "phi": phi, "phi0": None, "n": n, "alpha": alpha,
                        "power_n": power_n(phi, n, alpha, tol, cap), "power_inf": None,
                    })
                for phi0 in config.phi0s:
                    phi = phi0 / v ** 0.5
                    rows.append({
                        "phi": phi, "phi0": phi0, "n": n, "alpha": alpha,
                        "power_n": power_n(phi, n, alpha, tol, cap) if phi < 1.0 else None,
                        "power_inf": power_inf(phi0, n, alpha, tol, cap),
                    })
        logger.info("Evaluated %d power cells", len(rows))
        fields = ["phi", "phi0", "n", "alpha", "power_n", "power_inf"]
        payload = {"series_tol": tol, "max_terms": cap, "rows": rows}
        return Report("power", payload, rows, fields)

    def _diagnose_pair(self, x, y, config: RunConfig) -> Dict[str, Any]:
        kernel = config.kernel_spec() if config.target == "hcov-scaled" else None
        report = decompose(x, y, config.target, kernel, kernel)
        return {
            **report.to_dict(),
            "taylor_x": taylor_diagnostic(x),
            "taylor_y": taylor_diagnostic(y),
        }

    def cmd_diagnose(self, config: RunConfig) -> Report:
        if config.x_path:
            x, y = self._load_pair(config)
            payload = self._diagnose_pair(x, y, config)
        else:
            spec = config.scenario_spec()
            payload = self._diagnose_pair(*generate(spec, config.seed), config)
            if config.replicates > 1:
                ratios = []
                for r in range(config.replicates):
                    x, y = draw(spec, make_rng(config.seed, r))
                    ratio = decompose(x, y, config.target, config.kernel_spec(), config.kernel_spec()).ratio
                    if ratio is not None:
                        ratios.append(ratio)
                payload["replicates"] = config.replicates
                payload["median_ratio"] = median(ratios) if ratios else None
            payload["scenario"] = spec.to_dict()
            payload["seed"] = config.seed
        if payload["degenerate"]:
            logger.warning("diagnose: degenerate input, reporting zeros")
        fields = ["target", "statistic", "leading_term", "remainder", "ratio", "tau_hat", "degenerate"]
        return Report("diagnose", payload, [payload], fields)

    def cmd_null_samples(self, config: RunConfig) -> Report:
        spec = config.scenario_spec()
        samples = null_statistics(
            spec,
            config.method_list(["t-dcov"]),
            replicates=config.replicates,
            master_seed=config.seed,
            bandwidth=config.bandwidth,
            workers=config.workers,
        )
        grid = [{"x": x, "density": d} for x, d in t_density_grid(samples.v, config.points)]
        density = Report("null-samples-density", {"v": samples.v, "grid": grid}, grid, ["x", "density"])
        return Report(
            "null-samples",
            samples.to_dict(),
            samples.rows(),
            ["statistic", "method"],
            sidecars={"density": density},
        )

    def cmd_generate(self, config: RunConfig) -> Report:
        spec = config.scenario_spec()
        x, y = generate(spec, config.seed)
        write_matrix(config.x_path, x.values)
        write_matrix(config.y_path, y.values)
        return Report("generate", {"scenario": spec.to_dict(), "seed": config.seed, "x": config.x_path, "y": config.y_path})
