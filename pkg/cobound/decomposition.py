"""
Martingale-coboundary decomposition X_k = Y_k + U_k - U_{k+1} on exact finite
spaces, with U_k = V_k - W_k built from the forward and backward series

    V_k = sum_{i>=0} E(X_{k+i} | F_{k-1})
    W_k = sum_{i>=1} [X_{k-i} - E(X_{k-i} | F_{k-1})]
"""
import logging

from typing import Dict, List, Tuple

import numpy as np

from cobound import settings
from cobound.errors import DomainError
from cobound.measure_core import (
    RandomVariable,
    cond_expect,
    is_measurable,
    lp_norm,
    projection_P,
)
from cobound.process_models import (
    ExactProcess,
    FunctionalSchedule,
    StationaryShiftModel,
    coordinate_support,
    extract_functional,
)

logger = logging.getLogger("decomposition")


def default_truncation(process: ExactProcess) -> int:
    """
    I_max that makes both series terminate exactly for an m-dependent model:
    V terms vanish from i = -lo on, W terms from i = hi + 1 on.
    """
    dependence = process.dependence
    if dependence is None:
        raise DomainError(
            "the process has no finite dependence window; pass I_max explicitly"
        )
    (lo, hi) = dependence
    return max(hi - lo + 1, -lo, hi + 1, 1)


def default_k_range(process: ExactProcess, I_max) -> Tuple[int, int]:
    (first, last) = process.index_range
    k_range = (first + I_max, last - I_max - 1)
    if k_range[0] > k_range[1]:
        raise DomainError(
            f"window too small: X covers {process.index_range} but I_max={I_max} "
            "leaves no index with every needed term"
        )
    return k_range


def _v_terms(process: ExactProcess, k, I_max) -> List[RandomVariable]:
    F = process.filtration.at(k - 1)
    return [cond_expect(process.X(k + i), F) for i in range(I_max + 1)]


def _w_terms(process: ExactProcess, k, I_max) -> List[RandomVariable]:
    F = process.filtration.at(k - 1)
    terms = []
    for i in range(1, I_max + 1):
        X = process.X(k - i)
        terms.append(X - cond_expect(X, F))
    return terms


def _total(process, terms):
    total = process.space.zero()
    for term in terms:
        total = total + term
    return total


def compute_V(process: ExactProcess, k, I_max=None) -> RandomVariable:
    if I_max is None:
        I_max = default_truncation(process)
    return _total(process, _v_terms(process, k, I_max))


def compute_W(process: ExactProcess, k, I_max=None) -> RandomVariable:
    if I_max is None:
        I_max = default_truncation(process)
    return _total(process, _w_terms(process, k, I_max))


def compute_U(process: ExactProcess, k, I_max=None) -> RandomVariable:
    return compute_V(process, k, I_max) - compute_W(process, k, I_max)


class TailEntry:
    def __init__(self, last_included, first_excluded, tol=settings.TOL):
        self.last_included = last_included
        self.first_excluded = first_excluded
        self.converged = last_included < tol and (
            first_excluded is None or first_excluded <= settings.EXACT_TOL
        )

    def as_dict(self):
        return {
            "last_included_l1": self.last_included,
            "first_excluded_l1": self.first_excluded,
            "converged": self.converged,
        }


def _tail_entry(process, terms, next_index, make_term, tol):
    last = lp_norm(terms[-1], 1) if terms else 0.0
    following = None
    if process.has(next_index):
        following = lp_norm(make_term(process.X(next_index)), 1)
    return TailEntry(last, following, tol)


class DecompositionResult:
    def __init__(self, k_range, V, W, U, Y, truncation_index, tail_report, exact_flag):
        self.k_range = k_range
        self.V = V
        self.W = W
        self.U = U
        self.Y = Y
        self.truncation_index = truncation_index
        self.tail_report = tail_report
        self.exact_flag = exact_flag

    @property
    def ks(self):
        return list(range(self.k_range[0], self.k_range[1] + 1))

    def residual(self, process: ExactProcess, k) -> float:
        return (process.X(k) - self.Y[k] - self.U[k] + self.U[k + 1]).max_abs()

    def summary_rows(self, process: ExactProcess):
        rows = []
        for k in self.ks:
            rows.append(
                {
                    "k": k,
                    "V_l1": lp_norm(self.V[k], 1),
                    "W_l1": lp_norm(self.W[k], 1),
                    "U_l2": lp_norm(self.U[k], 2),
                    "residual": self.residual(process, k),
                }
            )
        return rows

    def to_json(self, process: ExactProcess):
        per_k = {}
        for k in self.ks:
            per_k[str(k)] = {
                "V": self.V[k].values.tolist(),
                "W": self.W[k].values.tolist(),
                "U": self.U[k].values.tolist(),
                "Y": self.Y[k].values.tolist(),
                "tail": {side: entry.as_dict() for (side, entry) in self.tail_report[k].items()},
                "residual": self.residual(process, k),
            }
        return {
            "k_range": list(self.k_range),
            "truncation_index": self.truncation_index,
            "exact": self.exact_flag,
            "weights": process.space.weights.tolist(),
            "k": per_k,
        }


def decompose(process: ExactProcess, k_range=None, I_max=None, tol=settings.TOL):
    if I_max is None:
        I_max = default_truncation(process)
    if k_range is None:
        k_range = default_k_range(process, I_max)
    (k_first, k_last) = (int(k_range[0]), int(k_range[1]))
    if k_first > k_last:
        raise DomainError(f"empty k range {k_range}")

    V = {}
    W = {}
    U = {}
    tails = {}
    all_terms_vanish = True
    for k in range(k_first, k_last + 2):
        v_terms = _v_terms(process, k, I_max)
        w_terms = _w_terms(process, k, I_max)
        V[k] = _total(process, v_terms)
        W[k] = _total(process, w_terms)
        U[k] = V[k] - W[k]

        F = process.filtration.at(k - 1)
        tails[k] = {
            "V": _tail_entry(
                process, v_terms, k + I_max + 1, lambda X: cond_expect(X, F), tol
            ),
            "W": _tail_entry(
                process, w_terms, k - I_max - 1, lambda X: X - cond_expect(X, F), tol
            ),
        }
        all_terms_vanish = all_terms_vanish and all(
            entry.converged for entry in tails[k].values()
        )

    Y = {k: process.X(k) - U[k] + U[k + 1] for k in range(k_first, k_last + 1)}

    dependence = process.dependence
    exact_flag = bool(
        dependence is not None
        and I_max >= max(-dependence[0], dependence[1] + 1)
        and all_terms_vanish
    )
    if not exact_flag:
        logger.warning(
            "series for k in [%s, %s] not certified to terminate at I_max=%s",
            k_first,
            k_last,
            I_max,
        )

    logger.info("decomposed k in [%s, %s] with I_max=%s", k_first, k_last, I_max)
    return DecompositionResult(
        (k_first, k_last), V, W, U, Y, I_max, tails, exact_flag
    )


class _Conditionals:
    def __init__(self, process: ExactProcess):
        self.process = process
        self._cache = {}

    def E(self, j, i) -> RandomVariable:
        key = (j, i)
        if key not in self._cache:
            self._cache[key] = cond_expect(self.process.X(j), self.process.filtration.at(i))
        return self._cache[key]

    def P(self, j, i) -> RandomVariable:
        return self.E(j, i) - self.E(j, i - 1)


class VerificationReport:
    def __init__(self):
        self.identity_residual = 0.0
        self.martingale_residual = 0.0
        self.adaptedness_residual = 0.0
        self.part_b_residual = 0.0
        self.projection_residual = 0.0

    def passed(self, tol=settings.EXACT_TOL) -> bool:
        return max(self.as_dict().values()) <= tol

    def as_dict(self):
        return {
            "identity_residual": self.identity_residual,
            "martingale_residual": self.martingale_residual,
            "adaptedness_residual": self.adaptedness_residual,
            "part_b_residual": self.part_b_residual,
            "projection_residual": self.projection_residual,
        }


def verify_decomposition(result: DecompositionResult, process: ExactProcess):
    report = VerificationReport()
    conditionals = _Conditionals(process)
    (first, last) = process.index_range
    (i_first, i_last) = process.filtration.index_range
    projection_indices = range(i_first, i_last + 2)

    for k in result.ks:
        Y = result.Y[k]
        report.identity_residual = max(report.identity_residual, result.residual(process, k))

        F_prev = process.filtration.at(k - 1)
        report.martingale_residual = max(
            report.martingale_residual, lp_norm(cond_expect(Y, F_prev), 1)
        )
        report.adaptedness_residual = max(
            report.adaptedness_residual,
            (Y - cond_expect(Y, process.filtration.at(k))).max_abs(),
        )

        part_b = _sum_of(process, (conditionals.P(j, k) for j in range(first, last + 1)))
        report.part_b_residual = max(report.part_b_residual, (Y - part_b).max_abs())

        U = result.U[k]
        for i in projection_indices:
            if i <= k - 1:
                g = _sum_of(process, (conditionals.P(j, i) for j in range(k, last + 1)))
            else:
                g = -_sum_of(
                    process, (conditionals.P(j, i) for j in range(first, k))
                )
            residual = (projection_P(U, process.filtration, i) - g).max_abs()
            report.projection_residual = max(report.projection_residual, residual)

    logger.info("verification: %s", report.as_dict())
    return report


def _sum_of(process, variables):
    total = process.space.zero()
    for X in variables:
        total = total + X
    return total


class ConditionTwoReport:
    def __init__(self, k, rows):
        self.k = k
        self.rows = rows

    def forward(self):
        return [(j, forward) for (j, forward, _backward) in self.rows]

    def backward(self):
        return [(j, backward) for (j, _forward, backward) in self.rows]

    def vanishes_beyond(self, j0, column="forward", tol=settings.EXACT_TOL) -> bool:
        values = self.forward() if column == "forward" else self.backward()
        return all(v is None or v <= tol for (j, v) in values if j > j0)

    def is_monotone(self, column="forward") -> bool:
        values = self.forward() if column == "forward" else self.backward()
        known = [v for (_j, v) in values if v is not None]
        return all(b <= a + settings.EXACT_TOL for (a, b) in zip(known, known[1:]))

    def as_dict(self):
        return {
            "k": self.k,
            "rows": [
                {"j": j, "forward_l1": f, "backward_l1": b} for (j, f, b) in self.rows
            ],
        }


def check_condition_2(
    result: DecompositionResult, process: ExactProcess, k, j_max=None
) -> ConditionTwoReport:
    """
    L1 norms of E(U_{k+j} | F_k) and U_{k-j} - E(U_{k-j} | F_k); entries whose
    U is outside the admissible range are None.
    """
    I_max = result.truncation_index
    (admissible_lo, admissible_hi) = (
        process.index_range[0] + I_max,
        process.index_range[1] - I_max,
    )
    if j_max is None:
        (f_lo, f_hi) = process.filtration.index_range
        j_max = f_hi - f_lo

    def U(index):
        if index in result.U:
            return result.U[index]
        if admissible_lo <= index <= admissible_hi:
            return compute_U(process, index, I_max)
        return None

    F = process.filtration.at(k)
    rows = []
    for j in range(0, j_max + 1):
        ahead = U(k + j)
        behind = U(k - j)
        forward = None if ahead is None else lp_norm(cond_expect(ahead, F), 1)
        backward = None if behind is None else lp_norm(behind - cond_expect(behind, F), 1)
        rows.append((j, forward, backward))
    return ConditionTwoReport(k, rows)


class StationaryDecomposition:
    def __init__(self, m, g, g_shift, report):
        self.m = m
        self.g = g
        self.g_shift = g_shift
        self.report = report


def _shift_range(process: ExactProcess, functional):
    (lo, hi) = process.window
    if not functional.offsets:
        return (lo, hi)
    return (lo - min(functional.offsets), hi - max(functional.offsets))


def stationary_decompose(sm: StationaryShiftModel, I_max=None, tol=settings.EXACT_TOL):
    """
    f = m + g - g o T with g = U_0 and m = Y_0 of the decomposition of
    X_i = f o T^i, so that (m o T^i) are martingale differences for F_i.
    """
    process = sm.process
    if I_max is None:
        I_max = default_truncation(process)

    (first, last) = process.index_range
    if not first + I_max <= 0 <= last - I_max - 1:
        raise DomainError(
            f"window {process.window} is too small for I_max={I_max} around f"
        )
    result = decompose(process, (0, 0), I_max)

    g = result.U[0]
    m = result.Y[0]
    f = process.X(0)

    g_functional = extract_functional(process, g, 0, tol)
    (s_lo, s_hi) = _shift_range(process, g_functional)
    if not s_lo <= 1 <= s_hi:
        raise DomainError("window too small to shift g by one step")
    g_shift = process.evaluate(g_functional, 1)

    m_functional = extract_functional(process, m, 0, tol)
    (m_lo, m_hi) = _shift_range(process, m_functional)
    martingale_residual = 0.0
    adaptedness_residual = 0.0
    for i in range(m_lo, m_hi + 1):
        shifted = process.evaluate(m_functional, i)
        martingale_residual = max(
            martingale_residual,
            lp_norm(cond_expect(shifted, process.filtration.at(i - 1)), 1),
        )
        if not is_measurable(shifted, process.filtration.at(i), tol):
            adaptedness_residual = max(
                adaptedness_residual,
                (shifted - cond_expect(shifted, process.filtration.at(i))).max_abs(),
            )

    report = {
        "coboundary_residual": (f - (m + g - g_shift)).max_abs(),
        "shift_residual": (g_shift - result.U[1]).max_abs(),
        "martingale_residual": martingale_residual,
        "adaptedness_residual": adaptedness_residual,
        "shifts_checked": [m_lo, m_hi],
        "exact": result.exact_flag,
    }
    logger.info("stationary decomposition: %s", report)
    return StationaryDecomposition(m, g, g_shift, report)


class L2SeriesReport:
    def __init__(self, forward_terms, backward_terms):
        self.forward_terms = np.asarray(forward_terms)
        self.backward_terms = np.asarray(backward_terms)
        self.terms = self.forward_terms + self.backward_terms
        self.partial_sums = np.cumsum(self.terms)

    def constant_from(self, n, tol=settings.EXACT_TOL) -> bool:
        tail = self.partial_sums[n - 1 :]
        return bool(np.all(np.abs(tail - tail[0]) <= tol))


def l2_series_criterion(sm: StationaryShiftModel, n_max) -> L2SeriesReport:
    """
    Partial sums over n = 1..n_max of
        ||sum_{j>=n} P_0(f o T^j)||_2^2 + ||sum_{j>=n} P_0(f o T^-j)||_2^2
    with P_0 = E(.|F_0) - E(.|F_-1); shifts are limited to the window.
    """
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    process = sm.process
    (first, last) = sm.shift_range
    F = process.filtration

    forward = [projection_P(process.X(j), F, 0) for j in range(1, last + 1)]
    backward = [projection_P(process.X(-j), F, 0) for j in range(1, -first + 1)]

    def tail_norms(projections):
        norms = []
        for n in range(1, n_max + 1):
            tail = _sum_of(process, projections[n - 1 :])
            norms.append(lp_norm(tail, 2) ** 2)
        return norms

    return L2SeriesReport(tail_norms(forward), tail_norms(backward))


def gordin_criterion(process: ExactProcess, p, i_max):
    """
    Partial sums of sum_{i>=0} ||E(X_i|F_0)||_p and
    sum_{i>=1} ||X_-i - E(X_-i|F_0)||_p up to i_max.
    """
    F = process.filtration.at(0)
    forward = np.cumsum(
        [lp_norm(cond_expect(process.X(i), F), p) for i in range(0, i_max + 1)]
    )
    backward = []
    for i in range(1, i_max + 1):
        X = process.X(-i)
        backward.append(lp_norm(X - cond_expect(X, F), p))
    return (forward, np.cumsum(backward))


def martingale_schedules(result: DecompositionResult, process: ExactProcess):
    """
    Y and U as periodic window functionals, read off one period of indices in
    the decomposition range, for driving path samplers.
    """
    if process.model is None:
        raise DomainError("schedules need a process built from a coordinate model")
    period = process.model.schedule.period
    ks = result.ks
    if len(ks) < period:
        raise DomainError(
            f"k range {result.k_range} is shorter than the schedule period {period}"
        )

    Y = {k: extract_functional(process, result.Y[k], k) for k in ks[:period]}
    U = {k: extract_functional(process, result.U[k], k) for k in ks[:period]}
    return (FunctionalSchedule(Y), FunctionalSchedule(U))


class MomentTable:
    """
    Exact moments of a periodic family Z_k whose members at lags beyond `span`
    are independent. Built from reference members on an exact space.
    """

    def __init__(self, variables: Dict[int, RandomVariable], period, start, span):
        self.period = period
        self.start = start
        self.span = span
        self.reference = {}
        for phase in range(period):
            k = next(
                (
                    k
                    for k in sorted(variables)
                    if (k - start) % period == phase
                    and all(k + h in variables for h in range(span + 1))
                ),
                None,
            )
            if k is None:
                raise DomainError(
                    f"not enough members to tabulate phase {phase} up to lag {span}"
                )
            self.reference[phase] = [variables[k + h] for h in range(span + 1)]

        self.means = np.array(
            [self.reference[r][0].expectation() for r in range(period)]
        )
        self.cov = np.zeros((period, span + 1))
        for r in range(period):
            base = self.reference[r][0]
            for h in range(span + 1):
                other = self.reference[r][h]
                self.cov[r, h] = (base * other).expectation() - (
                    self.means[r] * self.means[(r + h) % period]
                )

    def phase(self, i):
        return (np.asarray(i) - self.start) % self.period

    def member(self, i) -> RandomVariable:
        return self.reference[int(self.phase(i))][0]

    def second_moment(self, i, j) -> float:
        (i, j) = (min(i, j), max(i, j))
        r = int(self.phase(i))
        mean_product = self.means[r] * self.means[int(self.phase(j))]
        if j - i > self.span:
            return float(mean_product)
        return float(self.cov[r, j - i] + mean_product)

    def sum_second_moment(self, first, last) -> float:
        """
        E (Z_first + ... + Z_last)^2.
        """
        if last < first:
            return 0.0
        indices = np.arange(first, last + 1)
        phases = self.phase(indices)
        total = float(np.sum(self.means[phases])) ** 2
        total += float(np.sum(self.cov[phases, 0]))
        for h in range(1, self.span + 1):
            valid = indices + h <= last
            total += 2.0 * float(np.sum(self.cov[phases[valid], h]))
        return total


def family_span(process: ExactProcess, variables: Dict[int, RandomVariable]):
    """
    Largest lag h at which two members can still share a coordinate.
    """
    if process.dependence is None:
        return None
    lows = []
    highs = []
    for (k, Z) in variables.items():
        support = coordinate_support(process, Z)
        if support:
            lows.append(min(support) - k)
            highs.append(max(support) - k)
    if not lows:
        return 0
    return max(0, max(highs) - min(lows))


def moment_table(process: ExactProcess, variables: Dict[int, RandomVariable], span=None):
    """
    MomentTable for a family following the process schedule's period. Without a
    finite dependence window the span is truncated to what the window holds.
    """
    period = process.model.schedule.period if process.model else 1
    start = process.model.schedule.start if process.model else 0
    exact = True
    if span is None:
        sample = {k: variables[k] for k in sorted(variables)[:period]}
        span = family_span(process, sample)
    if span is None:
        exact = False
        span = max(0, len(variables) - period)
        logger.warning("moment table truncated at lag %s (no finite dependence)", span)

    table = MomentTable(variables, period, start, span)
    table.exact = exact
    return table
