import argparse
import os
from typing import Callable, List

from adapter.adapter import RunConfig
from adapter.report_adapter import OUTPUT_FORMATS
from engine.errors import InputValidationError
from engine.inference import REGIMES, TABLE_METHODS
from engine.estimators import DECOMPOSE_TARGETS
from engine.kernels import BANDWIDTH_FAMILIES
from engine.simlab import SCENARIO_NAMES
from engine.specialfn import MAX_TERMS, SERIES_TOL

# Statistics selectable with --method; t- prefixes and kernel suffixes are also accepted
AVAILABLE_METHODS = [
    ("dcov", "Distance covariance (joint)"),
    ("hcov", "Hilbert-Schmidt covariance (joint), kernel from --kernel"),
    ("mdcov", "Aggregated marginal distance covariance"),
    ("mhcov", "Aggregated marginal Hilbert-Schmidt covariance, per-coordinate bandwidths"),
    ("ucov", "Unified covariance, abs-distance kernel (ucov-squared for squared distance)"),
]

SCENARIO_DESCRIPTIONS = {
    "ex1-i": "independent N(0, I) blocks",
    "ex1-ii": "independent AR(1) rows, coefficients 0.5 and -0.5",
    "ex1-iii": "independent Toeplitz N(0, 0.7^|i-j|) blocks",
    "ex2-i": "linear mixing, rho = 0.5",
    "ex2-ii": "linear mixing, rho = 0.7",
    "ex2-iii": "linear mixing through I (x) A, rho = 0.5",
    "ex3-i": "y = x^2 coordinatewise",
    "ex3-ii": "Toeplitz x, y = x^2",
    "ex3-iii": "y = log|x| coordinatewise",
    "ex4-i": "x ~ U(-1, 1), y = x o x",
    "ex4-ii": "x ~ U(0, 1), y = 4x^3 - 3.6x + 0.8",
    "ex4-iii": "x = sin z, y = cos z, z ~ U(0, 2 pi)",
    "normal-xy": "joint Gaussian with cross-covariance rho I",
}


def _env(name: str, kind: Callable, default):
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return kind(raw)
    except ValueError:
        raise InputValidationError(f"environment variable {name} has an invalid value {raw!r}")


def _list_of(kind: Callable) -> Callable[[str], List]:
    def parse(text: str) -> List:
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
    return parse


def _bandwidth(text: str):
    if text == "median":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be 'median' or a number, got {text!r}")


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {key!r} needs a numeric value, got {value!r}")


def _scenario_epilog() -> str:
    return "scenarios:\n" + "\n".join(f"  {name:<10} {SCENARIO_DESCRIPTIONS[name]}" for name in SCENARIO_NAMES)


def _methods_epilog() -> str:
    return "methods:\n" + "\n".join(f"  {name:<10} {description}" for name, description in AVAILABLE_METHODS)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", default=None, help="output path (stdout when omitted)")
    parser.add_argument("--format", choices=OUTPUT_FORMATS, default="json")
    parser.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")


def _add_scenario(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--scenario", required=required, help="scenario name, see below")
    parser.add_argument("--n", type=int, required=required)
    parser.add_argument("--p", type=int, required=required)
    parser.add_argument("--q", type=int, default=None, help="defaults to p")
    parser.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                        help="scenario parameter override, e.g. rho=0.6")


def _add_kernel(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kernel", choices=BANDWIDTH_FAMILIES, default="gaussian")
    parser.add_argument("--bandwidth", type=_bandwidth, default=None, help="'median' or a fixed value")


def _add_workers(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workers", type=int, default=None, help="worker processes (env DEPCOV_WORKERS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depcov",
        description="Distance and Hilbert-Schmidt covariance tests for high-dimensional data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    test = sub.add_parser("test", help="test independence of two CSV samples",
                          epilog=_methods_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    test.add_argument("--x", required=True, dest="x_path")
    test.add_argument("--y", required=True, dest="y_path")
    test.add_argument("--method", default="dcov",
                      help=f"one of {', '.join(name for name, _ in AVAILABLE_METHODS)}, optionally t- prefixed or kernel suffixed")
    _add_kernel(test)
    test.add_argument("--regime", choices=REGIMES, default="hdlss")
    test.add_argument("--permutations", type=int, default=0, help="0 runs the studentized test")
    test.add_argument("--alpha", type=_list_of(float), default=[0.05], dest="alphas")
    _add_common(test)

    simulate = sub.add_parser("simulate", help="Monte Carlo rejection rates",
                              epilog=_scenario_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_scenario(simulate)
    simulate.add_argument("--methods", type=_list_of(str), default=[],
                          help=f"test ids, default all of {', '.join(TABLE_METHODS)}")
    _add_kernel(simulate)
    simulate.add_argument("--regime", choices=REGIMES, default="hdlss")
    simulate.add_argument("--permutations", type=int, default=200)
    simulate.add_argument("--alpha", type=_list_of(float), default=[0.01, 0.05, 0.1], dest="alphas")
    simulate.add_argument("--replicates", type=int, default=1000)
    _add_workers(simulate)
    _add_common(simulate)

    power = sub.add_parser("power", help="exact and local-alternative power of the studentized test")
    power.add_argument("--n", type=_list_of(int), required=True, dest="ns")
    power.add_argument("--alpha", type=_list_of(float), default=[0.05], dest="alphas")
    power.add_argument("--phi", type=_list_of(float), default=[], dest="phis")
    power.add_argument("--phi0", type=_list_of(float), default=[], dest="phi0s")
    power.add_argument("--series-tol", type=float, default=None, help="env DEPCOV_SERIES_TOL")
    power.add_argument("--max-terms", type=int, default=None, help="env DEPCOV_MAX_TERMS")
    _add_common(power)

    diagnose = sub.add_parser("diagnose", help="leading-term decomposition of dCov / hCov",
                              epilog=_scenario_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    diagnose.add_argument("--x", default=None, dest="x_path")
    diagnose.add_argument("--y", default=None, dest="y_path")
    _add_scenario(diagnose, required=False)
    diagnose.add_argument("--target", choices=DECOMPOSE_TARGETS, default="dcov")
    _add_kernel(diagnose)
    diagnose.add_argument("--replicates", type=int, default=1)
    _add_common(diagnose)

    null = sub.add_parser("null-samples", help="studentized statistics under a null scenario",
                          epilog=_scenario_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_scenario(null)
    null.add_argument("--methods", type=_list_of(str), default=["t-dcov"],
                      help="test ids; bare hcov and mhcov use --kernel")
    _add_kernel(null)
    null.add_argument("--replicates", type=int, default=1000)
    null.add_argument("--points", type=int, default=201, help="t density grid size")
    _add_workers(null)
    _add_common(null)

    gen = sub.add_parser("generate", help="write one scenario draw as two CSV files",
                         epilog=_scenario_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_scenario(gen)
    gen.add_argument("--x", required=True, dest="x_path")
    gen.add_argument("--y", required=True, dest="y_path")
    _add_common(gen)
    return parser


app_ui = build_parser()


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Map parsed flags onto a RunConfig; flags override DEPCOV_* environment defaults."""
    values = vars(args)
    workers = values.get("workers")
    series_tol = values.get("series_tol")
    max_terms = values.get("max_terms")
    config = RunConfig(
        command=args.command,
        x_path=values.get("x_path"),
        y_path=values.get("y_path"),
        method=values.get("method", "dcov"),
        methods=values.get("methods") or [],
        kernel=values.get("kernel", "gaussian"),
        bandwidth=values.get("bandwidth"),
        regime=values.get("regime", "hdlss"),
        permutations=values.get("permutations", 0),
        alphas=values.get("alphas") or [0.05],
        scenario=values.get("scenario"),
        n=values.get("n"),
        ns=values.get("ns") or [],
        p=values.get("p"),
        q=values.get("q"),
        params=dict(values.get("param") or []),
        replicates=values.get("replicates", 1),
        seed=args.seed,
        target=values.get("target", "dcov"),
        phis=values.get("phis") or [],
        phi0s=values.get("phi0s") or [],
        points=values.get("points", 201),
        workers=workers if workers is not None else _env("DEPCOV_WORKERS", int, 1),
        series_tol=series_tol if series_tol is not None else _env("DEPCOV_SERIES_TOL", float, SERIES_TOL),
        max_terms=max_terms if max_terms is not None else _env("DEPCOV_MAX_TERMS", int, MAX_TERMS),
        out=args.out,
        format=args.format,
    )
    return config
