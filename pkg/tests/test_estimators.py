from itertools import permutations
from math import comb, sqrt

import numpy as np
import pytest
from scipy.stats import ortho_group

from engine.centering import distance_array, inner_array, u_center_array
from engine.errors import DegenerateSampleError, DomainError, InputValidationError
from engine.estimators import (
    build_plan,
    covsq_pair,
    dcor2,
    dcov2,
    decompose,
    estimate_phi,
    hcor2,
    hcov2,
    hdmss_statistic,
    mdcov2,
    mhcov2,
    rv_coefficient,
    tau_hat,
    taylor_diagnostic,
    ucor2,
    ucov2,
)
from engine.kernels import KernelSpec
from engine.simlab import ScenarioSpec, draw, make_rng


def _as_matrix(values):
    values = np.asarray(values, dtype=float)
    return values[:, None] if values.ndim == 1 else values


def dcov_three_sums(X, Y):
    """The distinct-index tuple form of the unbiased distance covariance."""
    a = distance_array(_as_matrix(X))
    b = distance_array(_as_matrix(Y))
    n = a.shape[0]
    pairs = sum(a[s, t] * b[s, t] for s, t in permutations(range(n), 2))
    triples = sum(a[s, t] * b[s, u] for s, t, u in permutations(range(n), 3))
    quads = sum(a[s, t] * b[u, v] for s, t, u, v in permutations(range(n), 4))
    return (
        pairs / (n * (n - 1))
        + quads / (n * (n - 1) * (n - 2) * (n - 3))
        - 2.0 * triples / (n * (n - 1) * (n - 2))
    )


def covsq_brute_force(x, y):
    """Fourth-order U-statistic of cov^2 over all ordered 4-tuples of distinct indices."""
    n = len(x)
    total = 0.0
    count = 0
    for s, t, u, v in permutations(range(n), 4):
        total += 0.25 * (x[s] - x[t]) * (y[s] - y[t]) * (x[u] - x[v]) * (y[u] - y[v])
        count += 1
    return total / count


class TestDistanceCovariance:
    def test_matches_tuple_form(self, rng):
        x = rng.standard_normal((6, 2))
        y = rng.standard_normal((6, 3))
        assert dcov2(x, y).value == pytest.approx(dcov_three_sums(x, y), rel=1e-10)

    def test_constant_sample(self, rng):
        estimate = dcov2(np.ones((8, 3)), rng.standard_normal((8, 2)))
        assert estimate.value == 0.0
        assert estimate.degenerate

    def test_row_mismatch(self, rng):
        with pytest.raises(InputValidationError, match="row-count mismatch"):
            dcov2(rng.standard_normal((8, 2)), rng.standard_normal((9, 2)))

    def test_small_sample(self, rng):
        with pytest.raises(DomainError, match="sample size below 4"):
            dcov2(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))

    def test_self_covariance_non_negative(self, rng):
        for _ in range(20):
            x = rng.standard_normal((7, 4))
            assert dcov2(x, x).value >= 0.0

    def test_unbiased_under_independence(self):
        rng = np.random.default_rng(7)
        values = np.array([
            dcov2(rng.standard_normal((10, 5)), rng.standard_normal((10, 5))).value for _ in range(2000)
        ])
        stderr = values.std(ddof=1) / sqrt(len(values))
        assert abs(values.mean()) < 3.0 * stderr


class TestDistanceCorrelation:
    def test_identical_samples(self, rng):
        x = rng.standard_normal((10, 3))
        assert dcor2(x, x).value == pytest.approx(1.0, abs=1e-12)

    def test_constant_sample_uses_zero_guard(self, rng):
        assert dcor2(np.zeros((8, 2)), rng.standard_normal((8, 2))).value == 0.0

    def test_ratio_of_covariances(self, rng):
        x = rng.standard_normal((8, 3))
        y = x[:, :2] ** 2 + rng.standard_normal((8, 2))
        expected = dcov2(x, y).value / sqrt(dcov2(x, x).value * dcov2(y, y).value)
        assert dcor2(x, y).value == pytest.approx(expected, rel=1e-12)


class TestHilbertSchmidt:
    def test_constant_sample_is_degenerate_zero(self, rng):
        estimate = hcov2(np.ones((9, 2)), rng.standard_normal((9, 2)))
        assert estimate.value == 0.0
        assert estimate.degenerate

    def test_self_covariance_positive(self, rng):
        x = rng.standard_normal((10, 4))
        assert hcov2(x, x).value > 0.0

    def test_fixed_bandwidth_by_hand(self, rng):
        x = rng.standard_normal((6, 2))
        y = rng.standard_normal((6, 3))
        spec = KernelSpec("gaussian", 1.0)
        k = np.exp(-0.5 * distance_array(x) ** 2)
        l = np.exp(-0.5 * distance_array(y) ** 2)
        expected = inner_array(u_center_array(k), u_center_array(l))
        assert hcov2(x, y, spec, spec).value == pytest.approx(expected, rel=1e-12)

    def test_records_median_bandwidths(self, rng):
        x = rng.standard_normal((8, 2))
        estimate = hcov2(x, rng.standard_normal((8, 2)), KernelSpec("laplacian"))
        assert estimate.meta["gamma_x"] == pytest.approx(np.median(distance_array(x)[np.triu_indices(8, 1)]))
        assert estimate.kernel["x"]["family"] == "laplacian"

    def test_correlation(self, rng):
        x = rng.standard_normal((9, 3))
        assert hcor2(x, x).value == pytest.approx(1.0, abs=1e-12)
        assert hcor2(np.zeros((9, 3)), x).value == 0.0
        y = np.sin(x) + 0.1 * rng.standard_normal((9, 3))
        expected = hcov2(x, y).value / sqrt(hcov2(x, x).value * hcov2(y, y).value)
        assert hcor2(x, y).value == pytest.approx(expected, rel=1e-12)


class TestCovsqPair:
    @pytest.mark.parametrize("n", [6, 8, 9])
    def test_matches_fourth_order_u_statistic(self, rng, n):
        for _ in range(3):
            x = rng.standard_normal(n)
            y = 0.5 * x + rng.standard_normal(n)
            assert covsq_pair(x, y) == pytest.approx(covsq_brute_force(x, y), rel=1e-10, abs=1e-14)

    def test_constant_column(self, rng):
        assert covsq_pair(np.full(10, 2.5), rng.standard_normal(10)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.slow
    def test_unbiased_for_squared_covariance(self):
        rng = np.random.default_rng(11)
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        values = []
        for _ in range(10000):
            xy = rng.multivariate_normal([0.0, 0.0], cov, size=200)
            values.append(covsq_pair(xy[:, 0], xy[:, 1]))
        values = np.array(values)
        stderr = values.std(ddof=1) / sqrt(len(values))
        assert abs(values.mean() - 0.25) < 3.0 * stderr


class TestMarginalAggregates:
    def test_single_pair_reduces_to_dcov(self, rng):
        x = rng.standard_normal(10)
        y = x ** 2 + rng.standard_normal(10)
        assert mdcov2(x, y).value == pytest.approx(sqrt(comb(10, 2)) * dcov2(x, y).value, rel=1e-12)

    def test_mdcov_loop(self, rng):
        x = rng.standard_normal((6, 2))
        y = rng.standard_normal((6, 3))
        loop = sum(dcov2(x[:, i], y[:, j]).value for i in range(2) for j in range(3))
        assert mdcov2(x, y).value == pytest.approx(sqrt(15) * loop, rel=1e-10)

    def test_mdcov_constant(self, rng):
        assert mdcov2(np.ones((7, 3)), rng.standard_normal((7, 2))).value == 0.0

    def test_mhcov_loop_fixed_bandwidth(self, rng):
        x = rng.standard_normal((6, 2))
        y = rng.standard_normal((6, 2))
        spec = KernelSpec("gaussian", 1.0)
        loop = sum(hcov2(x[:, i], y[:, j], spec, spec).value for i in range(2) for j in range(2))
        assert mhcov2(x, y, spec, spec).value == pytest.approx(sqrt(15) * loop, rel=1e-10)

    def test_mhcov_single_pair(self, rng):
        x = rng.standard_normal(9)
        y = np.abs(x) + rng.standard_normal(9)
        spec = KernelSpec("laplacian")
        expected = sqrt(comb(9, 2)) * hcov2(x, y, spec, spec).value
        assert mhcov2(x, y, spec, spec).value == pytest.approx(expected, rel=1e-12)

    def test_mhcov_flags_constant_coordinates(self, rng):
        x = rng.standard_normal((8, 3))
        x[:, 1] = 4.0
        estimate = mhcov2(x, rng.standard_normal((8, 2)))
        assert estimate.meta["degenerate_coordinates_x"] == 1
        assert not estimate.degenerate

        constant = mhcov2(np.zeros((8, 3)), rng.standard_normal((8, 2)))
        assert constant.value == 0.0
        assert constant.meta["degenerate_coordinates_x"] == 3
        assert constant.degenerate


class TestUnifiedCovariance:
    def test_abs_kernel_identity(self, rng):
        for _ in range(20):
            n, p, q = rng.integers(5, 12), rng.integers(1, 6), rng.integers(1, 6)
            x = rng.standard_normal((n, p))
            y = rng.standard_normal((n, q))
            expected = sqrt(p * q) * sqrt(comb(n, 2)) * ucov2(x, y).value
            assert mdcov2(x, y).value == pytest.approx(expected, rel=1e-10, abs=1e-14)

    def test_squared_kernel_identity(self, rng):
        for _ in range(10):
            n, p, q = rng.integers(5, 12), rng.integers(1, 5), rng.integers(1, 5)
            x = rng.standard_normal((n, p))
            y = x[:, :1] ** 2 + rng.standard_normal((n, q))
            loop = sum(covsq_pair(x[:, i], y[:, j]) for i in range(p) for j in range(q))
            value = ucov2(x, y, kernel="squared-distance").value
            assert value == pytest.approx(4.0 / sqrt(p * q) * loop, rel=1e-10, abs=1e-14)

    def test_constant(self, rng):
        assert ucov2(np.ones((6, 2)), rng.standard_normal((6, 2))).value == 0.0

    def test_unknown_kernel(self, rng):
        with pytest.raises(InputValidationError):
            ucov2(rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), kernel="gaussian")

    def test_correlation_and_hdmss_statistic(self, rng):
        x = rng.standard_normal((12, 4))
        y = rng.standard_normal((12, 3))
        r = ucor2(x, y).value
        expected = ucov2(x, y).value / sqrt(ucov2(x, x).value * ucov2(y, y).value)
        assert r == pytest.approx(expected, rel=1e-12)
        assert hdmss_statistic(x, y) == pytest.approx(sqrt(comb(12, 2)) * r, rel=1e-12)


class TestRV:
    def test_identical(self, rng):
        x = rng.standard_normal((10, 3))
        assert rv_coefficient(x, x).value == pytest.approx(1.0, abs=1e-12)

    def test_constant(self, rng):
        assert rv_coefficient(np.ones((10, 3)), rng.standard_normal((10, 3))).value == 0.0

    def test_loop(self, rng):
        x = rng.standard_normal((20, 3))
        y = x @ rng.standard_normal((3, 3)) + rng.standard_normal((20, 3))

        def block(a, b):
            return sum(covsq_pair(a[:, i], b[:, j]) for i in range(a.shape[1]) for j in range(b.shape[1]))

        expected = block(x, y) / sqrt(block(x, x) * block(y, y))
        assert rv_coefficient(x, y).value == pytest.approx(expected, rel=1e-10)


class TestInvariances:
    @pytest.fixture
    def pair(self, rng):
        x = rng.standard_normal((10, 4))
        return x, np.cos(x[:, :3]) + 0.3 * rng.standard_normal((10, 3))

    @pytest.mark.parametrize("fn", [dcov2, hcov2, mdcov2, mhcov2, ucov2])
    def test_translation(self, pair, fn):
        x, y = pair
        shifted = x + np.array([3.0, -1.0, 10.0, 0.5])
        assert fn(shifted, y).value == pytest.approx(fn(x, y).value, rel=1e-10)

    @pytest.mark.parametrize("fn", [dcov2, hcov2])
    def test_orthogonal_rotation_of_joint_statistics(self, pair, fn):
        x, y = pair
        q = ortho_group.rvs(4, random_state=3)
        assert fn(x @ q, y).value == pytest.approx(fn(x, y).value, rel=1e-10)

    @pytest.mark.parametrize("fn", [dcov2, hcov2, mdcov2, mhcov2, ucov2, rv_coefficient])
    def test_common_row_permutation(self, pair, fn, rng):
        x, y = pair
        order = rng.permutation(10)
        assert fn(x[order], y[order]).value == pytest.approx(fn(x, y).value, rel=1e-12, abs=1e-15)


class TestTauHat:
    def test_two_rows(self):
        estimate = tau_hat(np.array([[0.0, 0.0], [3.0, 0.0]]))
        assert estimate.value == pytest.approx(3.0)
        assert not estimate.degenerate

    def test_constant(self):
        estimate = tau_hat(np.ones((5, 3)))
        assert estimate.value == 0.0
        assert estimate.degenerate

    def test_single_row(self):
        with pytest.raises(DomainError):
            tau_hat(np.ones((1, 3)))

    def test_gaussian_trace(self):
        x = np.random.default_rng(5).standard_normal((500, 50))
        assert tau_hat(x).value ** 2 == pytest.approx(100.0, rel=0.05)


class TestDecompose:
    def test_dcov_target_adds_up(self, rng):
        x = rng.standard_normal((10, 20))
        y = x ** 2 + rng.standard_normal((10, 20))
        report = decompose(x, y)
        assert report.dcov2_or_scaled_hcov2 == dcov2(x, y).value
        assert report.leading_term + report.remainder == pytest.approx(report.dcov2_or_scaled_hcov2, rel=1e-12, abs=1e-15)
        expected = sum(covsq_pair(x[:, i], y[:, j]) for i in range(20) for j in range(20))
        assert report.leading_term == pytest.approx(expected / (tau_hat(x).value * tau_hat(y).value), rel=1e-10)

    def test_hcov_scaled_target(self, rng):
        x = rng.standard_normal((12, 15))
        y = rng.standard_normal((12, 15))
        spec = KernelSpec("gaussian")
        report = decompose(x, y, "hcov-scaled", spec, spec)
        tau = tau_hat(x).value * tau_hat(y).value
        assert report.dcov2_or_scaled_hcov2 == pytest.approx(tau * hcov2(x, y, spec, spec).value, rel=1e-14)
        assert report.leading_term + report.remainder == pytest.approx(report.dcov2_or_scaled_hcov2, rel=1e-12, abs=1e-15)
        ax = report.meta["tau_x"] / report.meta["gamma_x"]
        ay = report.meta["tau_y"] / report.meta["gamma_y"]
        prefactor = ax * np.exp(-0.5 * ax * ax) * ay * np.exp(-0.5 * ay * ay) * ax * ay
        assert report.meta["prefactor"] == pytest.approx(prefactor, rel=1e-12)

    def test_constant_sample(self, rng):
        report = decompose(np.ones((8, 4)), rng.standard_normal((8, 4)))
        assert report.degenerate
        assert (report.dcov2_or_scaled_hcov2, report.leading_term, report.remainder) == (0.0, 0.0, 0.0)

    def test_unknown_target(self, rng):
        with pytest.raises(InputValidationError):
            decompose(rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), target="rv")

    def test_remainder_shrinks_with_dimension(self):
        def median_ratio(p):
            spec = ScenarioSpec("ex1-i", 10, p)
            ratios = []
            for r in range(200):
                x, y = draw(spec, make_rng(99, r))
                ratios.append(decompose(x, y).ratio)
            return float(np.median(ratios))

        assert median_ratio(500) < median_ratio(5)


class TestEstimatePhi:
    @pytest.mark.parametrize("kind", ["phi1", "phi2"])
    def test_identical(self, rng, kind):
        x = rng.standard_normal((30, 4))
        assert estimate_phi(x, x, kind) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("kind", ["phi1", "phi2"])
    def test_independent_blocks(self, kind):
        rng = np.random.default_rng(21)
        x = rng.standard_normal((200, 10))
        y = rng.standard_normal((200, 10))
        assert abs(estimate_phi(x, y, kind)) < 0.1

    def test_degenerate_denominator(self, rng):
        with pytest.raises(DegenerateSampleError):
            estimate_phi(np.ones((10, 2)), rng.standard_normal((10, 2)))

    def test_unknown_kind(self, rng):
        with pytest.raises(InputValidationError):
            estimate_phi(rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), "phi3")

    @pytest.mark.slow
    def test_gaussian_ratio_bound(self):
        spec = ScenarioSpec("normal-xy", 2000, 5, params={"rho": 0.5})
        ratios = []
        for r in range(10):
            x, y = draw(spec, make_rng(4, r))
            ratios.append(estimate_phi(x, y, "phi1") / estimate_phi(x, y, "phi2"))
        assert 0.79 <= float(np.mean(ratios)) <= 1.0


class TestPlan:
    def test_permuted_identity_equals_value(self, rng):
        x, y = rng.standard_normal((9, 3)), rng.standard_normal((9, 2))
        plan = build_plan(x, y, "mdcov2")
        np.testing.assert_allclose(plan.permuted_values(np.arange(9)), [plan.value()], rtol=1e-12)

    def test_permuted_matches_recomputation(self, rng):
        x, y = rng.standard_normal((9, 3)), rng.standard_normal((9, 2))
        plan = build_plan(x, y, "dcov2")
        order = rng.permutation(9)
        assert plan.permuted_values(order[None, :])[0] == pytest.approx(dcov2(x[order], y).value, rel=1e-10)

    def test_unknown_method(self, rng):
        with pytest.raises(InputValidationError):
            build_plan(rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), "dcor2")


class TestTaylorDiagnostic:
    def test_small_expansion_error_in_high_dimension(self):
        x = np.random.default_rng(8).standard_normal((10, 2000))
        report = taylor_diagnostic(x)
        assert report["max_abs_L"] < 0.2
        assert report["max_abs_R"] < report["max_abs_L"]

    def test_constant(self):
        assert taylor_diagnostic(np.zeros((5, 3)))["degenerate"]
