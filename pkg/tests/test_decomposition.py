import json

import pytest

from numpy.testing import assert_allclose

from cobound import testing
from cobound.decomposition import (
    check_condition_2,
    compute_U,
    compute_V,
    compute_W,
    decompose,
    default_k_range,
    default_truncation,
    gordin_criterion,
    l2_series_criterion,
    martingale_schedules,
    moment_table,
    stationary_decompose,
    verify_decomposition,
)
from cobound.errors import DomainError
from cobound.measure_core import projection_P
from cobound.process_models import (
    CallableFunctional,
    CoordinateLaw,
    ExactProcessModel,
    FunctionalSchedule,
    LinearFunctional,
    build_exact,
)

EXACT = 1e-12

CANONICAL = ["ma1", "nonstationary_ma", "coboundary", "martingale", "zero"]


@pytest.fixture(scope="module")
def processes():
    return {name: testing.exact_process(name) for name in CANONICAL}


@pytest.fixture(scope="module")
def results(processes):
    return {name: decompose(process) for (name, process) in processes.items()}


def brute_force_Y(process, k):
    """
    Y_k = sum_j P_k X_j, summed over every available X_j.
    """
    total = process.space.zero()
    for j in process.indices:
        total = total + projection_P(process.X(j), process.filtration, k)
    return total


class TestSeries:
    def test_moving_average_terms(self, processes):
        ma1 = processes["ma1"]
        xi = ma1.coordinate
        assert_allclose(compute_V(ma1, 0).values, (0.5 * xi(-1)).values, atol=EXACT)
        assert compute_W(ma1, 0).is_zero()

    def test_martingale_terms_vanish(self, processes):
        process = processes["martingale"]
        assert compute_V(process, 0).is_zero()
        assert compute_W(process, 0).is_zero()

    def test_coboundary_terms(self, processes):
        process = processes["coboundary"]
        xi = process.coordinate
        assert compute_V(process, 0).is_zero()
        assert_allclose(compute_W(process, 0).values, (-xi(0)).values, atol=EXACT)
        assert_allclose(compute_U(process, 0).values, xi(0).values, atol=EXACT)

    def test_default_truncation(self, processes):
        assert default_truncation(processes["ma1"]) == 2
        assert default_truncation(processes["coboundary"]) == 2
        assert default_k_range(processes["ma1"], 2) == (-3, 3)

    def test_missing_terms(self, processes):
        with pytest.raises(DomainError):
            compute_V(processes["ma1"], 5, 2)

    def test_markov_needs_explicit_truncation(self):
        law = CoordinateLaw([-1, 1], kind="markov", transition=[[0.8, 0.2], [0.2, 0.8]])
        process = build_exact(
            ExactProcessModel(law, (-5, 5), FunctionalSchedule.constant(LinearFunctional({0: 1.0})))
        )
        with pytest.raises(DomainError):
            default_truncation(process)
        result = decompose(process, I_max=3)
        assert not result.exact_flag
        entry = result.tail_report[0]["V"]
        assert entry.last_included > 0


class TestDecompose:
    def test_moving_average_closed_form(self, processes, results):
        ma1 = processes["ma1"]
        result = results["ma1"]
        xi = ma1.coordinate
        for k in result.ks:
            assert_allclose(result.U[k].values, (0.5 * xi(k - 1)).values, atol=EXACT)
            assert_allclose(result.Y[k].values, (1.5 * xi(k)).values, atol=EXACT)
        assert result.exact_flag

    def test_y_matches_brute_force(self, processes, results):
        ma1 = processes["ma1"]
        for k in results["ma1"].ks:
            assert_allclose(
                results["ma1"].Y[k].values, brute_force_Y(ma1, k).values, atol=EXACT
            )

    def test_alternating_moving_average_closed_form(self, processes, results):
        process = processes["nonstationary_ma"]
        result = results["nonstationary_ma"]
        xi = process.coordinate

        def a(i):
            return 0.5 + 0.1 * (i % 2)

        for k in result.ks:
            assert_allclose(result.U[k].values, (a(k) * xi(k - 1)).values, atol=EXACT)
            assert_allclose(
                result.Y[k].values, ((1 + a(k + 1)) * xi(k)).values, atol=EXACT
            )

    def test_recovers_planted_decomposition(self):
        # Y_k = 2 xi_k, U_k = xi_{k-1} xi_{k-2} + xi_k; both columns of
        # E(U_{k+j} | F_k) and U_{k-j} - E(U_{k-j} | F_k) vanish for j >= 3
        def planted(w):
            (x2, x1, x0, x_next) = (w[..., 0], w[..., 1], w[..., 2], w[..., 3])
            Y = 2.0 * x0
            U = x1 * x2 + x0
            U_next = x0 * x1 + x_next
            return Y + U - U_next

        schedule = FunctionalSchedule.constant(CallableFunctional([-2, -1, 0, 1], planted))
        process = build_exact(ExactProcessModel(CoordinateLaw.rademacher(), (-8, 8), schedule))
        result = decompose(process)
        xi = process.coordinate
        assert result.ks
        for k in result.ks:
            assert_allclose(
                result.U[k].values, (xi(k - 1) * xi(k - 2) + xi(k)).values, atol=EXACT
            )
            assert_allclose(result.Y[k].values, (2.0 * xi(k)).values, atol=EXACT)
        assert verify_decomposition(result, process).passed(EXACT)

    def test_zero_process(self, results):
        result = results["zero"]
        for k in result.ks:
            for part in (result.V[k], result.W[k], result.U[k], result.Y[k]):
                assert part.max_abs() == 0.0
        assert result.U[result.k_range[1] + 1].max_abs() == 0.0

    def test_coboundary_has_no_martingale_part(self, results):
        result = results["coboundary"]
        for k in result.ks:
            assert result.Y[k].is_zero()

    @pytest.mark.parametrize("name", CANONICAL)
    def test_invariants(self, processes, results, name):
        process = processes[name]
        result = results[name]
        for k in result.ks:
            assert_allclose(
                result.U[k].values, (result.V[k] - result.W[k]).values, atol=EXACT
            )
            assert result.residual(process, k) <= EXACT
        for entry in result.tail_report.values():
            assert entry["V"].converged and entry["W"].converged

    def test_empty_range(self, processes):
        with pytest.raises(DomainError):
            decompose(processes["ma1"], k_range=(2, 1))

    def test_window_too_small(self):
        process = build_exact(
            ExactProcessModel(CoordinateLaw.rademacher(), (-1, 1), testing.moving_average())
        )
        with pytest.raises(DomainError):
            decompose(process)

    def test_exports(self, processes, results):
        ma1 = processes["ma1"]
        result = results["ma1"]
        exported = json.loads(json.dumps(result.to_json(ma1)))
        assert exported["k_range"] == [-3, 3]
        assert exported["exact"] is True
        assert len(exported["k"]["0"]["U"]) == ma1.space.atom_count
        rows = result.summary_rows(ma1)
        assert [r["k"] for r in rows] == list(range(-3, 4))
        assert rows[0]["U_l2"] == pytest.approx(0.5)
        assert rows[0]["V_l1"] == pytest.approx(0.5)


class TestVerify:
    @pytest.mark.parametrize("name", CANONICAL)
    def test_round_trip(self, processes, results, name):
        report = verify_decomposition(results[name], processes[name])
        assert report.passed(EXACT), report.as_dict()

    def test_detects_broken_decomposition(self, processes):
        ma1 = processes["ma1"]
        result = decompose(ma1)
        result.Y[0] = result.Y[0] + 0.1 * ma1.coordinate(-1)
        report = verify_decomposition(result, ma1)
        assert report.identity_residual > 0.05
        assert report.martingale_residual > 0.05


class TestConditionTwo:
    @pytest.mark.parametrize("name", CANONICAL)
    def test_columns_vanish_beyond_window(self, processes, results, name):
        result = results[name]
        report = check_condition_2(result, processes[name], 0, j_max=6)
        assert report.vanishes_beyond(1, "forward")
        assert report.vanishes_beyond(1, "backward")

    def test_moving_average_values(self, processes, results):
        report = check_condition_2(results["ma1"], processes["ma1"], 0, j_max=6)
        rows = {j: (f, b) for (j, f, b) in report.rows}
        assert rows[0] == (pytest.approx(0.5), pytest.approx(0.0))
        assert rows[1][0] == pytest.approx(0.5)
        assert rows[2][0] == pytest.approx(0.0, abs=EXACT)
        # U_6 needs X_8, outside the window
        assert rows[6][0] is None
        assert report.is_monotone("forward")


class TestStationary:
    @pytest.fixture(scope="class")
    def model(self):
        return testing.stationary_ma()

    def test_coboundary_equation(self, model):
        result = stationary_decompose(model)
        assert result.report["coboundary_residual"] <= EXACT
        assert result.report["shift_residual"] <= EXACT
        assert result.report["martingale_residual"] <= EXACT
        xi = model.process.coordinate
        assert_allclose(result.g.values, (0.5 * xi(-1)).values, atol=EXACT)
        assert_allclose(result.m.values, (1.5 * xi(0)).values, atol=EXACT)

    def test_l2_series_constant(self, model):
        report = l2_series_criterion(model, 4)
        assert_allclose(report.terms, [0.25, 0.0, 0.0, 0.0], atol=EXACT)
        assert report.constant_from(2)
        assert report.partial_sums[-1] == pytest.approx(0.25)

    def test_gordin_for_martingale(self, processes):
        (forward, backward) = gordin_criterion(processes["martingale"], 2, 3)
        assert_allclose(forward, [1.0, 1.0, 1.0, 1.0])
        assert_allclose(backward, [0.0, 0.0, 0.0], atol=EXACT)

    def test_gordin_for_moving_average(self, processes):
        (forward, backward) = gordin_criterion(processes["ma1"], 1, 2)
        # ||E(X_0|F_0)||_1 = E|xi_0 + xi_-1/2| = 1, ||E(X_1|F_0)||_1 = 1/2
        assert_allclose(forward, [1.0, 1.5, 1.5])
        assert_allclose(backward, [0.0, 0.0], atol=EXACT)

    def test_window_too_small(self):
        with pytest.raises(DomainError):
            stationary_decompose(testing.stationary_ma(window=(-2, 2)))


class TestSchedules:
    def test_schedules_reproduce_exact_variables(self, processes, results):
        ma1 = processes["ma1"]
        (Y, U) = martingale_schedules(results["ma1"], ma1)
        assert Y.period == 1
        assert_allclose(ma1.evaluate(Y.at(5), 5).values, (1.5 * ma1.coordinate(5)).values)
        assert_allclose(ma1.evaluate(U.at(4), 4).values, (0.5 * ma1.coordinate(3)).values)

    def test_periodic_schedule(self, processes, results):
        process = processes["nonstationary_ma"]
        (Y, U) = martingale_schedules(results["nonstationary_ma"], process)
        assert Y.period == 2
        # U_k = a_k xi_{k-1} with a_k = 0.5 + 0.1 (k mod 2)
        assert_allclose(process.evaluate(U.at(1), 1).values, (0.6 * process.coordinate(0)).values)
        assert_allclose(process.evaluate(U.at(2), 2).values, (0.5 * process.coordinate(1)).values)


class TestMomentTable:
    def test_moving_average_variances(self, processes):
        ma1 = processes["ma1"]
        table = moment_table(ma1, {i: ma1.X(i) for i in ma1.indices})
        assert table.exact
        assert table.span == 1
        for n in (1, 10, 1000, 10**6):
            assert table.sum_second_moment(1, n) == pytest.approx(1.25 * n + (n - 1), rel=1e-12)

    def test_martingale_part(self, processes, results):
        ma1 = processes["ma1"]
        table = moment_table(ma1, results["ma1"].Y)
        assert table.span == 0
        assert table.sum_second_moment(1, 400) == pytest.approx(2.25 * 400)

    def test_second_moment_beyond_span(self, processes, results):
        table = moment_table(processes["ma1"], results["ma1"].U)
        assert table.second_moment(0, 0) == pytest.approx(0.25)
        assert table.second_moment(0, 7) == pytest.approx(0.0)

    def test_periodic_family(self, processes):
        process = processes["nonstationary_ma"]
        table = moment_table(process, {i: process.X(i) for i in process.indices})
        direct = process.space.zero()
        for i in range(1, 6):
            direct = direct + process.X(i)
        assert table.sum_second_moment(1, 5) == pytest.approx((direct * direct).expectation())
