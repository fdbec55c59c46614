import math

import numpy as np
import pytest

from numpy.testing import assert_allclose

from cobound.errors import ConvergenceError, DomainError
from cobound.orlicz import (
    DecreasingFiltrationView,
    Variant,
    backward_projection,
    build_counterexample,
    compute_c,
    exp_moment,
    orlicz_norm_lower_bound,
    tail_bound,
    verify_divergence,
)

# sum_{k>=2} 1 / (k log^2 k)
LOG_SQUARED_SERIES = 2.1097428


@pytest.fixture(scope="module")
def layout():
    return build_counterexample(30, 10)


@pytest.fixture(scope="module")
def linf_layout():
    return build_counterexample(30, 10, variant=Variant.LINF)


def direct_series(lam, k_last):
    k = np.arange(2, k_last + 1, dtype=float)
    return math.fsum(np.exp(k * (lam - 1.0)) / (k * np.log(k) ** 2))


class TestNormalisingConstant:
    def test_pairs_fill_each_block(self):
        c = compute_c()
        k = np.arange(2, 80, dtype=float)
        S = math.fsum(np.exp(-k) / (k * np.log(k) ** 2))
        assert 2 * c * S == pytest.approx(1.0, abs=1e-9)

    def test_rough_value(self):
        assert 3.1 < compute_c() < 3.25

    def test_tol_must_be_positive(self):
        with pytest.raises(DomainError):
            compute_c(0.0)

    def test_tail_bound_shrinks(self):
        assert tail_bound(10) > tail_bound(20) > 0


class TestLayout:
    def test_atom_count(self, layout):
        assert layout.interval_count == 10 * 2 * 29
        assert layout.space.atom_count == layout.interval_count + 1

    def test_block_masses(self, layout):
        for n in range(1, 11):
            assert layout.block_mass(n) == pytest.approx(2.0**-n, rel=1e-9)

    def test_slack_holds_missing_mass(self, layout):
        assert layout.tail_mass == pytest.approx(2.0**-10, rel=1e-6)
        assert layout.X.values[layout.slack_atom] == 0.0

    def test_intervals_are_adjacent(self, layout):
        assert layout.left[0] == 0.0
        assert_allclose(layout.left[1:], layout.left[:-1] + layout.length[:-1])

    def test_mean_zero(self, layout):
        assert layout.X.expectation() == pytest.approx(0.0, abs=1e-12)

    def test_values(self, layout, linf_layout):
        assert layout.X.max_abs() == 30.0
        assert set(np.unique(linf_layout.X.values)) == {-1.0, 0.0, 1.0}

    def test_rows(self, layout):
        rows = list(layout.rows())
        assert len(rows) == layout.interval_count
        assert rows[0] == {
            "n": 1,
            "k": 2,
            "sign": "+",
            "left": 0.0,
            "length": pytest.approx(layout.length[0]),
            "value": 2.0,
        }
        assert rows[1]["sign"] == "-"

    @pytest.mark.parametrize("K_max, N_max", [(2, 5), (5, 1)])
    def test_too_small(self, K_max, N_max):
        with pytest.raises(DomainError):
            build_counterexample(K_max, N_max)


class TestBackwardFiltration:
    def test_is_decreasing(self, layout):
        assert DecreasingFiltrationView(layout).is_decreasing()

    def test_range(self, layout):
        view = DecreasingFiltrationView(layout)
        with pytest.raises(DomainError):
            view.at(0)
        # the last sigma-algebra lumps every interval together
        assert view.at(11).block_count == 2

    @pytest.mark.parametrize("n", [1, 2, 5, 10])
    def test_projection_is_restriction(self, layout, n):
        projection = backward_projection(layout, n)
        assert projection.residual <= 1e-12
        assert projection.support_mass == pytest.approx(layout.c_mass(n))
        assert projection.c_mass == pytest.approx(2.0 ** (1 - n) - 2.0**-10, rel=1e-9)

    def test_l1_goes_to_zero_but_sup_does_not(self, layout):
        projections = [backward_projection(layout, n) for n in range(1, 11)]
        l1 = [p.l1_norm for p in projections]
        assert all(b < a for (a, b) in zip(l1, l1[1:]))
        assert all(p.linf_norm == 30.0 for p in projections)

    def test_linf_variant_keeps_unit_norm(self, linf_layout):
        for n in range(1, 11):
            projection = backward_projection(linf_layout, n)
            assert projection.linf_norm == 1.0
            assert projection.l1_norm == pytest.approx(projection.c_mass)

    def test_n_out_of_range(self, layout):
        with pytest.raises(DomainError):
            backward_projection(layout, 11)


class TestDivergence:
    def test_certificate_is_minimal(self, layout):
        cert = verify_divergence(layout, 1, 1.5, 100.0)
        factor = 2.0 * layout.c * (1.0 - 2.0**-10)
        assert cert.partial_sum > 100.0
        assert factor * direct_series(1.5, cert.k_star) == pytest.approx(cert.partial_sum)
        assert factor * direct_series(1.5, cert.k_star - 1) <= 100.0

    def test_larger_lambda_crosses_sooner(self, layout):
        k_stars = [verify_divergence(layout, 1, lam, 100.0).k_star for lam in (1.2, 1.5, 2.0)]
        assert k_stars[0] > k_stars[1] > k_stars[2]

    def test_deep_block_needs_more_terms(self, layout):
        assert (
            verify_divergence(layout, 10, 1.5, 100.0).k_star
            > verify_divergence(layout, 1, 1.5, 100.0).k_star
        )

    def test_cap(self, layout):
        with pytest.raises(ConvergenceError) as ctx:
            verify_divergence(layout, 1, 1.0001, 1e6, k_cap=1000)
        assert ctx.value.cap == 1000

    @pytest.mark.parametrize("n, lam, M", [(1, 1.0, 2.0), (1, 0.5, 2.0), (1, 1.5, 0.0), (0, 1.5, 2.0)])
    def test_invalid_arguments(self, layout, n, lam, M):
        with pytest.raises(DomainError):
            verify_divergence(layout, n, lam, M)


class TestExpMoment:
    def test_full_construction(self, layout):
        moment = exp_moment(layout)
        assert moment.half_width <= 1e-8
        assert moment.value == pytest.approx(2 * layout.c * LOG_SQUARED_SERIES, rel=1e-6)
        assert moment.value > 2.0

    def test_linf_variant(self, linf_layout):
        assert exp_moment(linf_layout).value == math.e


class TestOrliczLowerBound:
    @pytest.mark.parametrize("n", [1, 5, 10])
    def test_bound_near_one(self, layout, n):
        result = orlicz_norm_lower_bound(layout, n)
        assert result.bound >= 0.99 - 1e-12
        assert len(result.certificates) == 1
        assert result.as_dict()["certificates"][0]["scale"] == pytest.approx(0.99)

    def test_explicit_scales(self, layout):
        result = orlicz_norm_lower_bound(layout, 2, scales=[0.5, 0.9])
        assert [cert.lam for cert in result.certificates] == pytest.approx([1 / 0.9, 2.0])
        assert result.bound == pytest.approx(0.9)

    def test_scale_out_of_range(self, layout):
        with pytest.raises(DomainError):
            orlicz_norm_lower_bound(layout, 1, scales=[1.5])

    def test_needs_orlicz_variant(self, linf_layout):
        with pytest.raises(DomainError):
            orlicz_norm_lower_bound(linf_layout, 1)
