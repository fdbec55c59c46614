"""
A mean-zero X on [0, 1] built from adjacent intervals whose backward martingale
E(X | F_n) = X 1_{C_n} tends to 0 almost surely but not in the exponential
Orlicz norm (values +-k), nor in L^inf for the +-1 variant.

Layout: blocks B_1, B_2, ... left to right with mu(B_n) = 2^-n; inside B_n the
pairs A'_{n,k}, A''_{n,k} for k = 2, 3, ... carry X = k and X = -k, each with
mass c 2^-n e^-k / (k log^2 k). Truncated at (K_max, N_max); the missing mass
sits in a final slack atom with X = 0.
"""
import math
import logging

from enum import Enum
from typing import List, Optional

import numpy as np

from cobound import settings
from cobound.errors import ConvergenceError, DomainError
from cobound.measure_core import (
    FinitePartition,
    FiniteProbabilitySpace,
    RandomVariable,
    cond_expect,
    is_refinement,
)

logger = logging.getLogger("orlicz")

GEOMETRIC_RATIO = 1.0 / (1.0 - math.exp(-1.0))


class Variant(Enum):
    ORLICZ = "orlicz"
    LINF = "linf"


def _k_weights(k: np.ndarray) -> np.ndarray:
    log_k = np.log(k)
    return np.exp(-k) / (k * log_k * log_k)


def compute_c(tol=settings.TOL) -> float:
    """
    c = 1 / (2 S), S = sum_{k>=2} e^-k / (k log^2 k); summed until the
    geometric majorant e^-K / (1 - e^-1) of the remainder drops below tol.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    K = 2
    while math.exp(-K) * GEOMETRIC_RATIO >= tol:
        K += 1
    S = math.fsum(_k_weights(np.arange(2, K + 1, dtype=float)))
    return 1.0 / (2.0 * S)


def tail_bound(K_max) -> float:
    """
    Bound on the mass of the pairs with k > K_max inside one B_n, relative to 2^-n.
    """
    return 2.0 * compute_c() * math.exp(-(K_max + 1)) * GEOMETRIC_RATIO


class CounterexampleLayout:
    """
    Interval atoms in layout order, the slack atom last.
    """

    def __init__(self, K_max, N_max, c, n, k, sign, left, length, tail_mass, variant):
        self.K_max = K_max
        self.N_max = N_max
        self.c = c
        self.n = n
        self.k = k
        self.sign = sign
        self.left = left
        self.length = length
        self.tail_mass = tail_mass
        self.variant = variant

        weights = np.append(length, tail_mass)
        self.space = FiniteProbabilitySpace(weights)
        magnitudes = k.astype(float) if variant is Variant.ORLICZ else np.ones(k.size)
        self.X = RandomVariable(self.space, np.append(sign * magnitudes, 0.0))

    @property
    def interval_count(self):
        return self.length.size

    @property
    def slack_atom(self):
        return self.interval_count

    def block_mass(self, n) -> float:
        return math.fsum(self.length[self.n == n])

    def c_mass(self, n) -> float:
        """
        mu(C_n), C_n the union of B_m for m >= n.
        """
        return math.fsum(self.length[self.n >= n])

    def indicator_C(self, n) -> RandomVariable:
        return RandomVariable(self.space, np.append(self.n >= n, False).astype(float))

    def rows(self):
        values = self.X.values
        for j in range(self.interval_count):
            yield {
                "n": int(self.n[j]),
                "k": int(self.k[j]),
                "sign": "+" if self.sign[j] > 0 else "-",
                "left": float(self.left[j]),
                "length": float(self.length[j]),
                "value": float(values[j]),
            }


def build_counterexample(
    K_max, N_max, tol=settings.TOL, variant: Variant = Variant.ORLICZ
) -> CounterexampleLayout:
    if K_max < 3:
        raise DomainError("K_max must be at least 3")
    if N_max < 2:
        raise DomainError("N_max must be at least 2")

    c = compute_c(tol)
    ks = np.arange(2, K_max + 1)
    pair_mass = c * _k_weights(ks.astype(float))

    n = np.repeat(np.arange(1, N_max + 1), 2 * ks.size)
    k = np.tile(np.repeat(ks, 2), N_max)
    sign = np.tile([1.0, -1.0], N_max * ks.size)
    length = np.tile(np.repeat(pair_mass, 2), N_max) * np.exp2(-n.astype(float))

    left = np.concatenate([[0.0], np.cumsum(length)[:-1]])
    tail_mass = max(0.0, 1.0 - math.fsum(length))

    logger.info(
        "counterexample layout K_max=%s N_max=%s (%s intervals, tail mass %.3g)",
        K_max,
        N_max,
        length.size,
        tail_mass,
    )
    return CounterexampleLayout(
        K_max, N_max, c, n, k, sign, left, length, tail_mass, variant
    )


class DecreasingFiltrationView:
    """
    F_n: every interval of B_m (m >= n) is its own block, B_1..B_{n-1} form one
    block and the slack atom another.
    """

    def __init__(self, layout: CounterexampleLayout):
        self.layout = layout

    def at(self, n) -> FinitePartition:
        if not 1 <= n <= self.layout.N_max + 1:
            raise DomainError(f"F_{n} is outside 1..{self.layout.N_max + 1}")
        count = self.layout.interval_count
        labels = np.arange(count + 1) + 2
        labels[:count][self.layout.n < n] = 0
        labels[count] = 1
        return FinitePartition(labels)

    def __getitem__(self, n):
        return self.at(n)

    def is_decreasing(self) -> bool:
        return all(
            is_refinement(self.at(n + 1), self.at(n))
            for n in range(1, self.layout.N_max + 1)
        )


class BackwardProjection:
    def __init__(self, n, X_n: RandomVariable, expected: RandomVariable, c_mass):
        self.n = n
        self.X_n = X_n
        self.residual = (X_n - expected).max_abs()
        self.support_mass = float(
            np.dot(X_n.space.weights, np.abs(X_n.values) > settings.EXACT_TOL)
        )
        self.c_mass = c_mass
        self.linf_norm = X_n.max_abs()
        self.l1_norm = (abs(X_n)).expectation()

    def as_dict(self):
        return {
            "n": self.n,
            "residual": self.residual,
            "support_mass": self.support_mass,
            "c_mass": self.c_mass,
            "linf_norm": self.linf_norm,
            "l1_norm": self.l1_norm,
        }


def backward_projection(layout: CounterexampleLayout, n) -> BackwardProjection:
    if not 1 <= n <= layout.N_max:
        raise DomainError(f"n must lie in 1..{layout.N_max}")
    X_n = cond_expect(layout.X, DecreasingFiltrationView(layout).at(n))
    expected = layout.X * layout.indicator_C(n)
    return BackwardProjection(n, X_n, expected, layout.c_mass(n))


class DivergenceCertificate:
    def __init__(self, n, lam, M, k_star, partial_sum):
        self.n = n
        self.lam = lam
        self.M = M
        self.k_star = k_star
        self.partial_sum = partial_sum

    def as_dict(self):
        return {
            "n": self.n,
            "lambda": self.lam,
            "M": self.M,
            "k_star": self.k_star,
            "partial_sum": self.partial_sum,
        }


def verify_divergence(
    layout: CounterexampleLayout,
    n,
    lam,
    M,
    k_cap=settings.DIVERGENCE_K_CAP,
    chunk=settings.DIVERGENCE_CHUNK,
) -> DivergenceCertificate:
    """
    Smallest k_star with
        2c sum_{m=n}^{N_max} 2^-m sum_{k=2}^{k_star} e^{k(lam-1)} / (k log^2 k) > M.
    """
    if not lam > 1:
        raise DomainError("lambda must exceed 1; the series converges otherwise")
    if not M > 0:
        raise DomainError("M must be positive")
    if not 1 <= n <= layout.N_max:
        raise DomainError(f"n must lie in 1..{layout.N_max}")

    factor = 2.0 * layout.c * (2.0 ** (1 - n) - 2.0 ** (-layout.N_max))
    target = math.log(M / factor)

    running = -math.inf
    first = 2
    while first <= k_cap:
        k = np.arange(first, min(first + chunk, k_cap + 1), dtype=float)
        log_k = np.log(k)
        log_terms = k * (lam - 1.0) - log_k - 2.0 * np.log(log_k)
        partial = np.logaddexp.accumulate(np.concatenate([[running], log_terms]))[1:]

        crossed = np.nonzero(partial > target)[0]
        if crossed.size:
            j = int(crossed[0])
            k_star = int(k[j])
            partial_sum = factor * math.exp(partial[j])
            logger.info(
                "divergence n=%s lambda=%s M=%s: k_star=%s", n, lam, M, k_star
            )
            return DivergenceCertificate(n, lam, M, k_star, partial_sum)

        running = float(partial[-1])
        first += chunk

    raise ConvergenceError(
        f"partial sums for n={n}, lambda={lam} stayed below {M}", k_cap
    )


class ExpMoment:
    def __init__(self, value, half_width, terms):
        self.value = value
        self.half_width = half_width
        self.terms = terms


def exp_moment(layout: CounterexampleLayout, tol=1e-8) -> ExpMoment:
    """
    E e^{|X|} of the full construction. For values +-k this is
    2c sum_{k>=2} 1 / (k log^2 k); the tail past K lies between 1/log(K+1)
    and 1/log K, and the midpoint is returned.
    """
    if layout.variant is Variant.LINF:
        return ExpMoment(math.e, 0.0, 0)

    K = 1024
    while layout.c * (1.0 / math.log(K) - 1.0 / math.log(K + 1)) >= tol:
        K *= 2
    k = np.arange(2, K + 1, dtype=float)
    log_k = np.log(k)
    head = float(np.sum(1.0 / (k * log_k * log_k)))

    (low, high) = (1.0 / math.log(K + 1), 1.0 / math.log(K))
    value = 2.0 * layout.c * (head + 0.5 * (low + high))
    half_width = layout.c * (high - low)
    return ExpMoment(value, half_width, K)


class OrliczLowerBound:
    def __init__(self, n, bound, certificates: List[DivergenceCertificate], moment):
        self.n = n
        self.bound = bound
        self.certificates = certificates
        self.exp_moment = moment

    def as_dict(self):
        return {
            "n": self.n,
            "bound": self.bound,
            "certificates": [
                dict(cert.as_dict(), scale=1.0 / cert.lam) for cert in self.certificates
            ],
            "exp_moment": self.exp_moment.value,
            "exp_moment_half_width": self.exp_moment.half_width,
        }


def orlicz_norm_lower_bound(
    layout: CounterexampleLayout, n, step=0.01, scales: Optional[List[float]] = None
) -> OrliczLowerBound:
    """
    ||X_n||_psi >= c whenever E e^{|X_n|/c} > 2, witnessed by a divergence
    certificate at lambda = 1/c. Scales come from `scales`, or from the grid
    1 - step, 1 - 2 step, ... stopping at the first certified one.
    """
    if layout.variant is not Variant.ORLICZ:
        raise DomainError("Orlicz lower bounds apply to the +-k variant")
    if not 1 <= n <= layout.N_max:
        raise DomainError(f"n must lie in 1..{layout.N_max}")

    if scales is None:
        grid = [1.0 - j * step for j in range(1, int(round(1.0 / step)))]
    else:
        grid = sorted(scales, reverse=True)

    certificates = []
    certified = []
    for scale in grid:
        if not 0 < scale < 1:
            raise DomainError(f"scale {scale} must lie in (0, 1)")
        certificates.append(verify_divergence(layout, n, 1.0 / scale, 2.0))
        certified.append(scale)
        if scales is None:
            break

    bound = max(certified) if certified else 0.0
    return OrliczLowerBound(n, bound, certificates, exp_moment(layout))
