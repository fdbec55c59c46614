"""
Exact probability on finite spaces: atoms with weights, partitions standing in
for sigma-algebras, conditional expectation and the norms used throughout.
"""
import math
import logging

from enum import Enum
from typing import Dict, List, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.special import logsumexp

from cobound import settings
from cobound.errors import DomainError

logger = logging.getLogger("measure_core")

LN2 = math.log(2.0)


def _frozen(values, dtype=float):
    array = np.array(values, dtype=dtype)
    array.flags.writeable = False
    return array


class FiniteProbabilitySpace:
    def __init__(self, weights, tol=settings.WEIGHT_TOL):
        weights = _frozen(weights)
        if weights.ndim != 1 or weights.size == 0:
            raise DomainError("weights must be a non-empty vector")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise DomainError("weights must be finite and non-negative")

        total = math.fsum(weights)
        if abs(total - 1.0) > tol:
            raise DomainError(f"weights sum to {total!r}, not 1")

        self.weights = weights

    @staticmethod
    def uniform(atom_count):
        return FiniteProbabilitySpace(np.full(atom_count, 1.0 / atom_count))

    @property
    def atom_count(self):
        return self.weights.size

    @property
    def support(self):
        return self.weights > 0

    def variable(self, values) -> "RandomVariable":
        return RandomVariable(self, values)

    def constant(self, value) -> "RandomVariable":
        return RandomVariable(self, np.full(self.atom_count, float(value)))

    def zero(self) -> "RandomVariable":
        return self.constant(0.0)

    def __repr__(self):
        return f"FiniteProbabilitySpace(atoms={self.atom_count})"


class RandomVariable:
    def __init__(self, space: FiniteProbabilitySpace, values):
        values = _frozen(values)
        if values.shape != (space.atom_count,):
            raise DomainError(
                f"expected {space.atom_count} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("random variable values must be finite")

        self.space = space
        self.values = values

    def _same_space(self, other):
        if other.space is not self.space:
            raise DomainError("random variables live on different spaces")

    def _lift(self, other):
        if isinstance(other, RandomVariable):
            self._same_space(other)
            return other.values
        return float(other)

    def __add__(self, other):
        return RandomVariable(self.space, self.values + self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RandomVariable(self.space, self.values - self._lift(other))

    def __rsub__(self, other):
        return RandomVariable(self.space, self._lift(other) - self.values)

    def __mul__(self, other):
        return RandomVariable(self.space, self.values * self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return RandomVariable(self.space, -self.values)

    def __abs__(self):
        return RandomVariable(self.space, np.abs(self.values))

    def expectation(self) -> float:
        return float(np.dot(self.space.weights, self.values))

    def max_abs(self) -> float:
        support = self.space.support
        if not np.any(support):
            return 0.0
        return float(np.max(np.abs(self.values[support])))

    def is_zero(self, tol=settings.EXACT_TOL) -> bool:
        return self.max_abs() <= tol

    def distribution(self, decimals=12) -> Dict[float, float]:
        support = self.space.support
        rounded = np.round(self.values[support], decimals) + 0.0
        (levels, inverse) = np.unique(rounded, return_inverse=True)
        masses = np.bincount(inverse, weights=self.space.weights[support])
        return {float(v): float(m) for (v, m) in zip(levels, masses)}

    def __repr__(self):
        return f"RandomVariable(atoms={self.values.size})"


class FinitePartition:
    """
    A partition of the atoms {0, ..., atom_count-1}, stored as one block label
    per atom. Labels are renumbered in order of first appearance.
    """

    def __init__(self, labels):
        labels = np.asarray(labels)
        if labels.ndim != 1 or labels.size == 0:
            raise DomainError("partition labels must be a non-empty vector")

        (_levels, first, inverse) = np.unique(
            labels, return_index=True, return_inverse=True
        )
        order = np.argsort(np.argsort(first))
        self.labels = _frozen(order[inverse], dtype=np.int64)
        self.block_count = int(first.size)

    @staticmethod
    def from_blocks(blocks: Sequence[Sequence[int]], atom_count) -> "FinitePartition":
        labels = np.full(atom_count, -1, dtype=np.int64)
        for (label, block) in enumerate(blocks):
            block = np.asarray(list(block), dtype=np.int64)
            if block.size == 0:
                raise DomainError("partition blocks must be non-empty")
            if np.any(block < 0) or np.any(block >= atom_count):
                raise DomainError(f"block {label} names atoms outside the space")
            if np.any(labels[block] >= 0) or np.unique(block).size != block.size:
                raise DomainError("partition blocks must be pairwise disjoint")
            labels[block] = label

        if np.any(labels < 0):
            raise DomainError("partition blocks must cover every atom")
        return FinitePartition(labels)

    @staticmethod
    def trivial(atom_count) -> "FinitePartition":
        return FinitePartition(np.zeros(atom_count, dtype=np.int64))

    @staticmethod
    def discrete(atom_count) -> "FinitePartition":
        return FinitePartition(np.arange(atom_count))

    @staticmethod
    def generated_by(columns) -> "FinitePartition":
        columns = np.asarray(columns)
        if columns.ndim == 1:
            columns = columns[:, None]
        if columns.shape[1] == 0:
            return FinitePartition.trivial(columns.shape[0])

        (_rows, inverse) = np.unique(columns, axis=0, return_inverse=True)
        return FinitePartition(np.ravel(inverse))

    @property
    def atom_count(self):
        return self.labels.size

    @property
    def blocks(self) -> List[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(np.bincount(self.labels, minlength=self.block_count))
        return np.split(order, bounds[:-1])

    def __repr__(self):
        return f"FinitePartition(atoms={self.atom_count}, blocks={self.block_count})"


class Filtration:
    """
    Partitions F_k for k in [k_min, k_max]. Indices below k_min resolve to the
    trivial partition, indices above k_max to the finest stored partition.
    """

    def __init__(self, k_min, partitions: Sequence[FinitePartition]):
        if not partitions:
            raise DomainError("a filtration needs at least one partition")

        atom_count = partitions[0].atom_count
        for (offset, (coarse, fine)) in enumerate(zip(partitions, partitions[1:])):
            if fine.atom_count != atom_count:
                raise DomainError("filtration partitions disagree on atom count")
            if not is_refinement(coarse, fine):
                raise DomainError(
                    f"F_{k_min + offset + 1} does not refine F_{k_min + offset}"
                )

        self.k_min = int(k_min)
        self.partitions = tuple(partitions)
        self._trivial = FinitePartition.trivial(atom_count)

    @property
    def k_max(self):
        return self.k_min + len(self.partitions) - 1

    @property
    def index_range(self):
        return (self.k_min, self.k_max)

    def at(self, i) -> FinitePartition:
        if i < self.k_min:
            return self._trivial
        if i > self.k_max:
            return self.partitions[-1]
        return self.partitions[i - self.k_min]

    def __getitem__(self, i):
        return self.at(i)


class YoungFunction(Enum):
    EXP_MINUS_ONE = "exp_minus_one"

    def __call__(self, x):
        return np.expm1(np.abs(x))

    def check_shape(self, samples=None, tol=settings.TOL) -> bool:
        if samples is None:
            samples = np.linspace(0.0, 20.0, 401)
        samples = np.sort(np.abs(np.asarray(samples, dtype=float)))
        values = self(samples)

        if abs(float(self(0.0))) > tol:
            return False
        if np.any(np.diff(values) < -tol):
            return False

        # midpoint convexity on consecutive sample pairs
        midpoints = self((samples[1:] + samples[:-1]) / 2)
        chords = (values[1:] + values[:-1]) / 2
        return bool(np.all(midpoints <= chords + tol * np.maximum(1.0, chords)))


def cond_expect(X: RandomVariable, G: FinitePartition) -> RandomVariable:
    if G.atom_count != X.space.atom_count:
        raise DomainError("partition and random variable are on different spaces")

    weights = X.space.weights
    mass = np.bincount(G.labels, weights=weights, minlength=G.block_count)
    total = np.bincount(G.labels, weights=weights * X.values, minlength=G.block_count)

    # zero-weight blocks get the value 0
    means = np.divide(total, mass, out=np.zeros_like(total), where=mass > 0)
    return RandomVariable(X.space, means[G.labels])


def projection_P(X: RandomVariable, F: Filtration, i) -> RandomVariable:
    return cond_expect(X, F.at(i)) - cond_expect(X, F.at(i - 1))


def is_refinement(G1: FinitePartition, G2: FinitePartition) -> bool:
    """
    True iff every block of G2 lies inside a block of G1.
    """
    if G1.atom_count != G2.atom_count:
        raise DomainError("partitions are on different spaces")

    pairs = np.unique(np.stack([G2.labels, G1.labels]), axis=1)
    return pairs.shape[1] == G2.block_count


def is_measurable(X: RandomVariable, G: FinitePartition, tol=settings.EXACT_TOL) -> bool:
    if G.atom_count != X.space.atom_count:
        raise DomainError("partition and random variable are on different spaces")

    support = X.space.support
    labels = G.labels[support]
    values = X.values[support]

    lo = np.full(G.block_count, np.inf)
    hi = np.full(G.block_count, -np.inf)
    np.minimum.at(lo, labels, values)
    np.maximum.at(hi, labels, values)

    seen = np.isfinite(lo)
    if not np.any(seen):
        return True
    return bool(np.max(hi[seen] - lo[seen]) <= tol)


def _check_p(p):
    if p != math.inf and not p >= 1:
        raise DomainError(f"L^p norms need p >= 1 or infinity, got {p!r}")


def lp_norm(X: RandomVariable, p) -> float:
    _check_p(p)
    if p == math.inf:
        return X.max_abs()

    magnitudes = np.abs(X.values)
    if p == 1:
        return float(np.dot(X.space.weights, magnitudes))
    return float(np.dot(X.space.weights, magnitudes**p) ** (1.0 / p))


def orlicz_norm(X: RandomVariable, tol=settings.TOL) -> float:
    """
    ||X||_psi = inf{c > 0 : E exp(|X|/c) < 2} for psi(x) = exp(|x|) - 1,
    found by bisection; c -> E exp(|X|/c) is strictly decreasing.
    """
    if not tol > 0:
        raise DomainError("orlicz_norm needs tol > 0")

    support = X.space.support
    magnitudes = np.abs(X.values[support])
    weights = X.space.weights[support]

    sup = float(np.max(magnitudes)) if magnitudes.size else 0.0
    if sup == 0.0:
        return 0.0

    def excess(c):
        return float(logsumexp(magnitudes / c, b=weights)) - LN2

    lo = tol
    hi = max(1.0, sup / LN2)
    if excess(lo) <= 0:
        return lo
    if excess(hi) >= 0:
        return hi
    return float(bisect(excess, lo, hi, xtol=tol))


class Norm:
    """
    A norm depending only on the distribution of its argument. Subclasses
    implement __call__.
    """

    name = "norm"

    def __call__(self, X: RandomVariable) -> float:
        raise NotImplementedError(
            f"{type(self).__name__} does not implement __call__. Please use a subclass"
        )

    def is_contractive(self, X: RandomVariable, G: FinitePartition, tol=settings.TOL):
        return self(cond_expect(X, G)) <= self(X) + tol


class LpNorm(Norm):
    def __init__(self, p):
        _check_p(p)
        self.p = p
        self.name = "Linf" if p == math.inf else f"L{p:g}"

    def __call__(self, X: RandomVariable) -> float:
        return lp_norm(X, self.p)


class OrliczNorm(Norm):
    name = "psi"

    def __init__(self, tol=settings.TOL, young=YoungFunction.EXP_MINUS_ONE):
        self.tol = tol
        self.young = young

    def __call__(self, X: RandomVariable) -> float:
        return orlicz_norm(X, self.tol)

    def is_contractive(self, X: RandomVariable, G: FinitePartition, tol=None):
        return super().is_contractive(X, G, tol=2 * self.tol if tol is None else tol)
