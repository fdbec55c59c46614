"""
Deviation bounds for partial sums, limit-theorem diagnostics comparing a
process with its martingale part, and the tightness probe for coboundaries.
"""
import math
import logging

from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from cobound import settings
from cobound.decomposition import DecompositionResult, moment_table
from cobound.errors import DomainError
from cobound.measure_core import RandomVariable
from cobound.montecarlo import partial_sums, sampled_paths
from cobound.process_models import ExactProcess, FunctionalSchedule, SamplerModel

logger = logging.getLogger("asymptotics")


def azuma_bound(n, x, a, b) -> float:
    """
    exp(-n (x - b/n)^2 / (2 a^2)) for sums of martingale differences bounded by
    a plus a coboundary bounded by b.
    """
    if not a > 0:
        raise DomainError("a must be positive")
    if not b >= 0:
        raise DomainError("b must be non-negative")
    if not n >= 1:
        raise DomainError("n must be at least 1")
    shifted = x - b / n
    if not shifted > 0:
        raise DomainError(f"x={x} must exceed b/n={b / n}; the bound is vacuous")
    return math.exp(-n * shifted * shifted / (2.0 * a * a))


def subexp_bound(n, x, lam, eps) -> float:
    """
    exp(-(1 - eps) lam^(2/3) x^(2/3) n^(1/3) / 2). Valid for n beyond a
    threshold depending on eps that is not computed here.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if not x > 0:
        raise DomainError("x must be positive")
    if not 0 <= eps < 1:
        raise DomainError("eps must lie in [0, 1)")
    if not n >= 1:
        raise DomainError("n must be at least 1")
    return math.exp(-0.5 * (1.0 - eps) * (lam * x) ** (2.0 / 3.0) * n ** (1.0 / 3.0))


class TailEstimate:
    def __init__(self, n, x, hits, replicas, seed):
        self.n = n
        self.x = x
        self.hits = int(hits)
        self.replicas = int(replicas)
        self.seed = seed
        self.p_hat = self.hits / self.replicas
        self.ci_half_width = settings.CI_MULTIPLIER * math.sqrt(
            self.p_hat * (1.0 - self.p_hat) / self.replicas
        )

    def clopper_pearson(self, alpha=0.01):
        (k, r) = (self.hits, self.replicas)
        low = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, r - k + 1))
        high = 1.0 if k == r else float(stats.beta.ppf(1 - alpha / 2, k + 1, r - k))
        return (low, high)

    def as_dict(self):
        return {
            "n": self.n,
            "x": self.x,
            "p_hat": self.p_hat,
            "ci": self.ci_half_width,
            "replicas": self.replicas,
            "seed": self.seed,
        }


def _exceedances(sums, thresholds):
    return np.count_nonzero(np.abs(sums) > thresholds, axis=0)


def empirical_tail(
    model: SamplerModel, n, x, replicas, seed=None, threads=None, quiet=True
) -> TailEstimate:
    """
    Fraction of replicas with |S_n| > x n.
    """
    if replicas < 1000:
        raise DomainError("tail estimates need at least 1000 replicas")
    seed = model.seed if seed is None else seed
    sums = partial_sums(model, [n], replicas, seed, threads, quiet)
    (hits,) = _exceedances(sums, np.array([x * n]))
    return TailEstimate(n, x, hits, replicas, seed)


def rademacher_tail(n, x) -> float:
    """
    Exact P(|S_n| > x n) for S_n a sum of n independent +-1 signs:
    S_n = 2B - n with B ~ Bin(n, 1/2).
    """
    cut = math.floor(n * (1.0 + x) / 2.0)
    return float(min(1.0, 2.0 * stats.binom.sf(cut, n, 0.5)))


def martingale_constants(result: DecompositionResult):
    """
    (a, b) = (sup_k ||Y_k||_inf, sup_k ||U_k||_inf) over the decomposed range.
    """
    a = max(result.Y[k].max_abs() for k in result.ks)
    b = max(result.U[k].max_abs() for k in result.U)
    return (a, b)


def deviation_rows(
    model: SamplerModel,
    n_list,
    x_list,
    replicas,
    a,
    b,
    seed=None,
    lam=None,
    eps=0.0,
    threads=None,
    quiet=True,
) -> List[Dict]:
    """
    Empirical tails on an (n, x) grid next to both deviation bounds. All n
    share one set of paths.
    """
    seed = model.seed if seed is None else seed
    n_list = sorted(int(n) for n in n_list)
    sums = partial_sums(model, n_list, replicas, seed, threads, quiet)

    rows = []
    for (column, n) in enumerate(n_list):
        for x in x_list:
            (hits,) = _exceedances(sums[:, column : column + 1], np.array([x * n]))
            estimate = TailEstimate(n, x, hits, replicas, seed)
            bound_ii = azuma_bound(n, x, a, b) if x > b / n else None
            bound_iii = subexp_bound(n, x, lam, eps) if lam is not None else None
            rows.append(
                {
                    "n": n,
                    "x": x,
                    "p_hat": estimate.p_hat,
                    "ci": estimate.ci_half_width,
                    "bound_ii": bound_ii,
                    "bound_iii": bound_iii,
                    "eps": eps,
                }
            )
    return rows


class TailSlope:
    def __init__(self, slope, estimates, dropped, p, slack):
        self.slope = slope
        self.estimates = estimates
        self.dropped = dropped
        self.p = p
        self.inconclusive = slope is None
        self.consistent = None if slope is None else bool(slope <= -p / 2.0 + slack)

    def as_dict(self):
        return {
            "slope": self.slope,
            "dropped": self.dropped,
            "inconclusive": self.inconclusive,
            "consistent": self.consistent,
            "p": self.p,
            "estimates": [e.as_dict() for e in self.estimates],
        }


def poly_tail_slope(
    model: SamplerModel,
    x,
    n_list,
    replicas,
    seed=None,
    p=2.0,
    slack=0.5,
    threads=None,
    quiet=True,
) -> TailSlope:
    """
    Least-squares slope of log p_hat(n) against log n; n with p_hat = 0 are
    dropped, and fewer than two remaining points make the fit inconclusive.
    """
    if not x > 0:
        raise DomainError("x must be positive")
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3:
        raise DomainError("need at least three values of n")
    if any(b <= a for (a, b) in zip(n_list, n_list[1:])):
        raise DomainError("n values must be increasing")
    seed = model.seed if seed is None else seed

    sums = partial_sums(model, n_list, replicas, seed, threads, quiet)
    hits = _exceedances(sums, x * np.array(n_list, dtype=float))
    estimates = [
        TailEstimate(n, x, h, replicas, seed) for (n, h) in zip(n_list, hits)
    ]

    kept = [e for e in estimates if e.hits > 0]
    dropped = [e.n for e in estimates if e.hits == 0]
    slope = None
    if len(kept) >= 2:
        (slope, _intercept) = np.polyfit(
            np.log([e.n for e in kept]), np.log([e.p_hat for e in kept]), 1
        )
        slope = float(slope)
    else:
        logger.warning("tail slope inconclusive: p_hat vanishes at n=%s", dropped)
    return TailSlope(slope, estimates, dropped, p, slack)


def _degenerate(variance, n) -> bool:
    return variance <= settings.DEGENERATE_VARIANCE_RATIO * n


class MartingaleTables:
    """
    Exact moment tables of X, Y, U and X - Y for a decomposed process.
    """

    def __init__(self, process: ExactProcess, result: DecompositionResult):
        self.process = process
        self.result = result
        X = {i: process.X(i) for i in process.indices}
        self.X = moment_table(process, X)
        self.Y = moment_table(process, result.Y)
        self.U = moment_table(process, result.U)
        self.D = moment_table(
            process, {k: process.X(k) - result.Y[k] for k in result.ks}
        )
        self.exact = all(t.exact for t in (self.X, self.Y, self.U, self.D))

    def sigma2(self, n) -> float:
        return max(0.0, self.Y.sum_second_moment(1, n))

    def sigma_bar2(self, n) -> float:
        return max(0.0, self.X.sum_second_moment(1, n))

    def g1_direct(self, n) -> float:
        return math.sqrt(max(0.0, self.D.sum_second_moment(0, n - 1)) / n)

    def g1_telescoped(self, n) -> float:
        second = (
            self.U.second_moment(0, 0)
            + self.U.second_moment(n, n)
            - 2.0 * self.U.second_moment(0, n)
        )
        return math.sqrt(max(0.0, second) / n)

    def cond5(self, n) -> float:
        return math.sqrt(self.U.second_moment(n, n) / n)

    def cond6(self, n, eps) -> float:
        """
        (1/n) sum_{i<=n} E[U_i^2 ; |U_i| > eps sqrt(n)].
        """
        threshold = eps * math.sqrt(n)
        per_phase = []
        for phase in range(self.U.period):
            U = self.U.reference[phase][0]
            truncated = U.values**2 * (np.abs(U.values) > threshold)
            per_phase.append(float(np.dot(U.space.weights, truncated)))
        phases = self.U.phase(np.arange(1, n + 1))
        return float(np.sum(np.array(per_phase)[phases])) / n


class LimitRow:
    def __init__(self, n, sigma2, sigma_bar2, g1, g1_telescoped, cond5, cond6, ks):
        self.n = n
        self.sigma2 = sigma2
        self.sigma_bar2 = sigma_bar2
        self.ratio = (
            math.sqrt(sigma2 / sigma_bar2) if sigma_bar2 > 0 else None
        )
        self.g1 = g1
        self.g1_telescoped = g1_telescoped
        self.cond5 = cond5
        self.cond6 = cond6
        self.ks = ks

    def as_dict(self):
        return {
            "n": self.n,
            "sigma_n": math.sqrt(self.sigma2),
            "sigma_bar_n": math.sqrt(self.sigma_bar2),
            "ratio": self.ratio,
            "g1": self.g1,
            "cond5": self.cond5,
            "cond6": self.cond6,
            "ks": self.ks,
        }


class LimitDiagnostics:
    def __init__(self, rows: List[LimitRow], eps, exact):
        self.rows = rows
        self.eps = eps
        self.exact = exact

    def __iter__(self):
        return iter(self.rows)

    def row(self, n) -> LimitRow:
        return next(r for r in self.rows if r.n == n)

    @property
    def martingale_part_degenerate(self) -> bool:
        """
        liminf sigma_n^2 / n > 0 fails on every tabulated n.
        """
        return all(_degenerate(r.sigma2, r.n) for r in self.rows)

    def ratio_constants(self):
        """
        n |sigma_n / sigma_bar_n - 1| per n; bounded when the ratio converges at rate 1/n.
        """
        return [
            (r.n, None if r.ratio is None else r.n * abs(r.ratio - 1.0)) for r in self.rows
        ]


def limit_diagnostics(
    process: ExactProcess,
    result: DecompositionResult,
    n_list,
    eps=0.1,
    sampler: Optional[SamplerModel] = None,
    replicas=None,
    seed=None,
    threads=None,
    quiet=True,
    ks_n=None,
    tables: Optional[MartingaleTables] = None,
) -> LimitDiagnostics:
    """
    Variances, g1, cond5 and cond6 exactly from moment tables; the KS
    distance by Monte Carlo when a sampler and replica count are given, for the
    n in ks_n (all of n_list by default).
    """
    if tables is None:
        tables = MartingaleTables(process, result)
    rows = []
    for n in n_list:
        n = int(n)
        sigma_bar2 = tables.sigma_bar2(n)
        ks = None
        wanted = ks_n is None or n in ks_n
        if sampler is not None and replicas and wanted:
            sigma2 = tables.sigma2(n)
            if _degenerate(sigma2, n) or _degenerate(sigma_bar2, n):
                logger.warning("skipping KS at n=%s: degenerate normalisation", n)
            else:
                ks = clt_ks(
                    sampler,
                    n,
                    replicas,
                    seed,
                    math.sqrt(sigma_bar2),
                    threads,
                    quiet,
                    sigma2=sigma2,
                )
        rows.append(
            LimitRow(
                n,
                tables.sigma2(n),
                sigma_bar2,
                tables.g1_direct(n),
                tables.g1_telescoped(n),
                tables.cond5(n),
                tables.cond6(n, eps),
                ks,
            )
        )
    return LimitDiagnostics(rows, eps, tables.exact)


def clt_ks(
    model: SamplerModel,
    n,
    replicas,
    seed=None,
    sigma_bar=None,
    threads=None,
    quiet=True,
    sigma2=None,
) -> float:
    """
    Kolmogorov-Smirnov distance of S_n / sigma_bar_n to the standard normal.
    Without sigma_bar the empirical standard deviation of S_n is used. When the
    exact martingale variance sigma2 = E(Y_1 + ... + Y_n)^2 is known, a
    vanishing martingale part is refused even if sigma_bar_n stays positive.
    """
    if sigma2 is not None and _degenerate(sigma2, n):
        raise DomainError(f"martingale part is degenerate at n={n}: sigma_n^2={sigma2:.3g}")
    seed = model.seed if seed is None else seed
    sums = partial_sums(model, [n], replicas, seed, threads, quiet)[:, 0]
    if sigma_bar is None:
        sigma_bar = float(np.std(sums))
    if _degenerate(sigma_bar * sigma_bar, n):
        raise DomainError(
            f"sigma_bar_n^2={sigma_bar * sigma_bar:.3g} is degenerate at n={n}"
        )
    return float(stats.kstest(sums / sigma_bar, "norm").statistic)


class MaxStatistic:
    """
    Per-replica samples of a path maximum with their quantiles.
    """

    def __init__(self, n, samples, replicas, seed, bound_samples=None, stated_bound_samples=None):
        self.n = n
        self.samples = samples
        self.replicas = replicas
        self.seed = seed
        self.bound_samples = bound_samples
        self.stated_bound_samples = stated_bound_samples

    def quantile(self, q) -> float:
        return float(np.quantile(self.samples, q))

    @property
    def percentile_99(self) -> float:
        return self.quantile(0.99)

    @property
    def bound_percentile_99(self) -> Optional[float]:
        if self.bound_samples is None:
            return None
        return float(np.quantile(self.bound_samples, 0.99))

    @property
    def stated_bound_percentile_99(self) -> Optional[float]:
        if self.stated_bound_samples is None:
            return None
        return float(np.quantile(self.stated_bound_samples, 0.99))

    def bound_holds(self, tol=settings.TOL) -> Optional[bool]:
        if self.bound_samples is None:
            return None
        return bool(np.all(self.samples <= self.bound_samples + tol))

    def as_dict(self):
        return {
            "n": self.n,
            "p99": self.percentile_99,
            "bound_p99": self.bound_percentile_99,
            "bound_holds": self.bound_holds(),
            "stated_bound_p99": self.stated_bound_percentile_99,
            "max": float(np.max(self.samples)),
            "replicas": self.replicas,
            "seed": self.seed,
        }


def ip_max_discrepancy(
    model: SamplerModel,
    tables: MartingaleTables,
    schedules,
    n,
    replicas,
    seed=None,
    threads=None,
    quiet=True,
) -> MaxStatistic:
    """
    max_k |S_k(X) / sigma_bar_n - S_k(Y) / sigma_n| per replica, together with
    the pathwise bound
        max_k [|U_1 - U_{k+1}| / sigma_bar_n + |sigma_n / sigma_bar_n - 1| |S_k(Y)| / sigma_n]
    and the looser textbook form
        (|U_1| + max_k |U_{k+1}|) / sigma_n + |sigma_n / sigma_bar_n - 1| max_k |S_k(Y)| / sigma_n,
    which is reported only: it need not dominate when sigma_bar_n < sigma_n.
    `schedules` is the (Y, U) pair from martingale_schedules.
    """
    (Y_schedule, U_schedule) = schedules
    sigma = math.sqrt(tables.sigma2(n))
    sigma_bar = math.sqrt(tables.sigma_bar2(n))
    if _degenerate(sigma_bar * sigma_bar, n) or _degenerate(sigma * sigma, n):
        raise DomainError(f"degenerate normalisation at n={n}")
    seed = model.seed if seed is None else seed
    gap = abs(sigma / sigma_bar - 1.0)

    def reduce(X, Y, U):
        SX = np.cumsum(X, axis=1)
        SY = np.cumsum(Y[:, :n], axis=1)
        discrepancy = np.max(np.abs(SX / sigma_bar - SY / sigma), axis=1)
        boundary = np.abs(U[:, :1] - U[:, 1:])
        bound = np.max(boundary / sigma_bar + gap * np.abs(SY) / sigma, axis=1)
        stated = (
            np.abs(U[:, 0]) + np.max(np.abs(U[:, 1:]), axis=1)
        ) / sigma + gap * np.max(np.abs(SY), axis=1) / sigma
        return (discrepancy, bound, stated)

    (samples, bounds, stated) = sampled_paths(
        model,
        n,
        replicas,
        reduce,
        extra=(Y_schedule, U_schedule),
        extra_n=n + 1,
        seed=seed,
        threads=threads,
        quiet=quiet,
        desc=f"ip n={n}",
    )
    return MaxStatistic(n, samples, replicas, seed, bounds, stated)


def _lil_scale(n) -> float:
    return math.sqrt(n * math.log(math.log(max(n, 3))))


def lil_normalized_max(
    model: SamplerModel,
    U_schedule: FunctionalSchedule,
    n,
    replicas,
    seed=None,
    threads=None,
    quiet=True,
) -> MaxStatistic:
    """
    max_{k<=n} |U_k| / sqrt(n log log n) per replica.
    """
    if n < 3:
        raise DomainError("n must be at least 3 for log log n")
    seed = model.seed if seed is None else seed
    scale = _lil_scale(n)

    def reduce(X, U):
        return (np.max(np.abs(U), axis=1) / scale,)

    (samples,) = sampled_paths(
        model,
        n,
        replicas,
        reduce,
        extra=(U_schedule,),
        seed=seed,
        threads=threads,
        quiet=quiet,
        desc=f"lil n={n}",
    )
    return MaxStatistic(n, samples, replicas, seed)


class TailDominationReport:
    def __init__(self, rows):
        self.rows = rows

    @property
    def holds(self) -> bool:
        return all(r["holds"] for r in self.rows)

    def failures(self):
        return [r for r in self.rows if not r["holds"]]


def _survival(X: RandomVariable, t) -> float:
    return float(np.dot(X.space.weights, np.abs(X.values) > t))


def check_tail_domination(
    process: ExactProcess,
    result: DecompositionResult,
    Z: RandomVariable,
    n_list,
    x_grid,
    tol=settings.EXACT_TOL,
) -> TailDominationReport:
    """
    mu(|U_n| > x) <= mu(|Z| > x / sqrt(n log log n)) on a grid, for each phase
    of U; Z may live on any finite space.
    """
    U = moment_table(process, result.U)
    rows = []
    for n in n_list:
        if n < 3:
            raise DomainError("n must be at least 3 for log log n")
        member = U.member(n)
        scale = _lil_scale(n)
        for x in x_grid:
            lhs = _survival(member, x)
            rhs = _survival(Z, x / scale)
            rows.append(
                {"n": n, "x": x, "lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + tol}
            )
    return TailDominationReport(rows)


class TightnessReport:
    def __init__(self, q, n_list, quantiles):
        self.q = q
        self.n_list = list(n_list)
        self.quantiles = [float(v) for v in quantiles]

    @property
    def looks_bounded(self) -> bool:
        first = self.quantiles[0]
        if max(self.quantiles) == 0:
            return True
        return max(self.quantiles) <= settings.TIGHTNESS_GROWTH * first

    def as_rows(self):
        return [{"n": n, "q": self.q, "quantile": v} for (n, v) in zip(self.n_list, self.quantiles)]


def tightness_probe(
    model: SamplerModel,
    n_list,
    replicas,
    seed=None,
    q=0.99,
    threads=None,
    quiet=True,
) -> TightnessReport:
    """
    Empirical q-quantile of |S_n| for each n; all n share one set of paths.
    """
    if not 0 < q < 1:
        raise DomainError("q must lie in (0, 1)")
    seed = model.seed if seed is None else seed
    sums = partial_sums(model, n_list, replicas, seed, threads, quiet)
    quantiles = np.quantile(np.abs(sums), q, axis=0)
    return TightnessReport(q, n_list, quantiles)
