import math
import logging

from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from cobound import settings
from cobound.errors import DomainError, ResourceError
from cobound.measure_core import (
    Filtration,
    FinitePartition,
    FiniteProbabilitySpace,
    RandomVariable,
    is_measurable,
)

logger = logging.getLogger("process_models")


class LawKind(Enum):
    IID = "iid"
    MARKOV = "markov"


class CoordinateLaw:
    def __init__(
        self,
        alphabet,
        probabilities=None,
        kind=LawKind.IID,
        transition=None,
        centered=False,
        tol=settings.WEIGHT_TOL,
    ):
        self.kind = LawKind(kind)
        self.alphabet = np.array(alphabet, dtype=float)
        if self.alphabet.ndim != 1 or self.alphabet.size == 0:
            raise DomainError("alphabet must be a non-empty list of values")
        if np.unique(self.alphabet).size != self.alphabet.size:
            raise DomainError("alphabet values must be distinct")

        size = self.alphabet.size
        self.transition = None
        if self.kind is LawKind.MARKOV:
            if transition is None:
                raise DomainError("a markov law needs a transition matrix")
            self.transition = np.array(transition, dtype=float)
            if self.transition.shape != (size, size):
                raise DomainError(f"transition matrix must be {size}x{size}")
            for row in self.transition:
                _check_distribution(row, tol, "transition row")
            if probabilities is None:
                probabilities = stationary_distribution(self.transition)
        elif transition is not None:
            raise DomainError("only markov laws take a transition matrix")

        if probabilities is None:
            raise DomainError("an iid law needs probabilities")
        self.probabilities = np.array(probabilities, dtype=float)
        if self.probabilities.shape != (size,):
            raise DomainError(f"expected {size} probabilities")
        _check_distribution(self.probabilities, tol, "probabilities")

        self.centered = bool(centered)
        if self.centered and abs(self.mean) > tol:
            raise DomainError(f"law flagged centered has mean {self.mean!r}")

    @staticmethod
    def rademacher():
        return CoordinateLaw([-1.0, 1.0], [0.5, 0.5], centered=True)

    @property
    def mean(self) -> float:
        return float(np.dot(self.probabilities, self.alphabet))

    @property
    def size(self):
        return self.alphabet.size

    def cdf(self):
        cdf = np.cumsum(self.probabilities)
        cdf[-1] = 1.0
        return cdf


def _check_distribution(row, tol, what):
    if np.any(row < 0) or not np.all(np.isfinite(row)):
        raise DomainError(f"{what} must be finite and non-negative")
    if abs(math.fsum(row) - 1.0) > tol:
        raise DomainError(f"{what} must sum to 1")


def stationary_distribution(transition):
    size = transition.shape[0]
    system = np.vstack([transition.T - np.eye(size), np.ones(size)])
    rhs = np.zeros(size + 1)
    rhs[-1] = 1.0
    (pi, *_rest) = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


class WindowFunctional:
    """
    A real function of the coordinates at relative offsets `offsets`. Subclasses
    implement evaluate(window) where window[..., j] holds coordinate i+offsets[j].
    """

    def __init__(self, offsets):
        self.offsets = tuple(int(o) for o in offsets)

    @property
    def span(self) -> Tuple[int, int]:
        if not self.offsets:
            return (0, 0)
        return (min(self.offsets), max(self.offsets))

    def evaluate(self, window: np.ndarray) -> np.ndarray:
        raise NotImplementedError(
            f"{type(self).__name__} does not implement evaluate. Please use a subclass"
        )


class LinearFunctional(WindowFunctional):
    def __init__(self, coeffs: Dict[int, float]):
        coeffs = {int(o): float(c) for (o, c) in coeffs.items()}
        super().__init__(sorted(coeffs))
        self.coeffs = coeffs
        self._vector = np.array([coeffs[o] for o in self.offsets])

    def evaluate(self, window):
        if not self.offsets:
            return np.zeros(window.shape[:-1])
        return window @ self._vector

    def __repr__(self):
        return f"LinearFunctional({self.coeffs})"


class CallableFunctional(WindowFunctional):
    def __init__(self, offsets, fn):
        super().__init__(offsets)
        self.fn = fn

    def evaluate(self, window):
        return np.asarray(self.fn(window), dtype=float)


class TableFunctional(WindowFunctional):
    """
    Lookup table indexed by the alphabet codes of the coordinates in the window.
    """

    def __init__(self, offsets, alphabet, table):
        super().__init__(offsets)
        self.alphabet = np.asarray(alphabet, dtype=float)
        self.table = np.asarray(table, dtype=float)
        if self.table.size != self.alphabet.size ** len(self.offsets):
            raise DomainError("table size does not match alphabet and window")
        self._order = np.argsort(self.alphabet)
        self._sorted = self.alphabet[self._order]

    def evaluate(self, window):
        if not self.offsets:
            return np.full(window.shape[:-1], float(self.table[0]))
        codes = self._order[np.searchsorted(self._sorted, window)]
        flat = np.ravel_multi_index(
            np.moveaxis(codes, -1, 0), (self.alphabet.size,) * len(self.offsets)
        )
        return self.table[flat]


class FunctionalSchedule:
    """
    Functionals for consecutive indices i0, ..., i0+p-1, repeated with period p.
    """

    def __init__(self, entries: Dict[int, WindowFunctional]):
        if not entries:
            raise DomainError("a schedule needs at least one functional")
        indices = sorted(entries)
        if indices != list(range(indices[0], indices[0] + len(indices))):
            raise DomainError("scheduled functionals must have consecutive indices")

        self.start = indices[0]
        self.entries = [entries[i] for i in indices]

    @staticmethod
    def constant(functional: WindowFunctional) -> "FunctionalSchedule":
        return FunctionalSchedule({0: functional})

    @property
    def period(self):
        return len(self.entries)

    def phase(self, i):
        return (i - self.start) % self.period

    def at(self, i) -> WindowFunctional:
        return self.entries[self.phase(i)]

    @property
    def span(self) -> Tuple[int, int]:
        spans = [f.span for f in self.entries]
        return (min(lo for (lo, _hi) in spans), max(hi for (_lo, hi) in spans))


class ExactProcessModel:
    def __init__(
        self,
        law: CoordinateLaw,
        window: Tuple[int, int],
        schedule: FunctionalSchedule,
        atom_budget=settings.ATOM_BUDGET,
    ):
        (lo, hi) = (int(window[0]), int(window[1]))
        if lo > hi:
            raise DomainError(f"empty window [{lo}, {hi}]")

        self.law = law
        self.window = (lo, hi)
        self.schedule = schedule
        self.atom_budget = atom_budget

    @property
    def coordinate_count(self):
        return self.window[1] - self.window[0] + 1

    @property
    def required_atoms(self) -> int:
        return self.law.size**self.coordinate_count

    def index_range(self) -> Tuple[int, int]:
        """
        Indices i whose functional only reads coordinates inside the window.
        """
        (lo, hi) = self.window
        inside = [
            i
            for i in range(lo - self.schedule.span[1], hi - self.schedule.span[0] + 1)
            if self._fits(i)
        ]
        if not inside:
            raise DomainError("no index has its functional inside the window")
        return (inside[0], inside[-1])

    def _fits(self, i):
        (lo, hi) = self.window
        return all(lo <= i + o <= hi for o in self.schedule.at(i).offsets)

    def sampler(self, seed) -> "SamplerModel":
        return SamplerModel(self.law, self.schedule, seed)


class ExactProcess:
    """
    A process X_i on a finite space with its filtration. Built by build_exact
    from an ExactProcessModel, or assembled from given variables.
    """

    def __init__(
        self,
        space: FiniteProbabilitySpace,
        filtration: Filtration,
        variables: Dict[int, RandomVariable],
        model: Optional[ExactProcessModel] = None,
        codes: Optional[np.ndarray] = None,
    ):
        if not variables:
            raise DomainError("a process needs at least one variable")
        indices = sorted(variables)
        if indices != list(range(indices[0], indices[-1] + 1)):
            raise DomainError("process indices must be consecutive")
        for X in variables.values():
            if X.space is not space:
                raise DomainError("process variables live on different spaces")

        self.space = space
        self.filtration = filtration
        self.variables = dict(variables)
        self.model = model
        self.codes = codes

    def __iter__(self):
        return iter((self.space, self.filtration, [self.variables[i] for i in self.indices]))

    @property
    def indices(self):
        return sorted(self.variables)

    @property
    def index_range(self):
        indices = self.indices
        return (indices[0], indices[-1])

    def has(self, i) -> bool:
        return i in self.variables

    def X(self, i) -> RandomVariable:
        try:
            return self.variables[i]
        except KeyError:
            raise DomainError(
                f"X_{i} is not available; the process covers {self.index_range}"
            )

    @property
    def dependence(self) -> Optional[Tuple[int, int]]:
        """
        Relative coordinate span (lo, hi) when the coordinates are independent
        and X_i reads only coordinates i+lo..i+hi; None otherwise.
        """
        if self.model is None or self.model.law.kind is not LawKind.IID:
            return None
        return self.model.schedule.span

    @property
    def is_m_dependent(self) -> bool:
        return self.dependence is not None

    @property
    def window(self):
        if self.model is None:
            return None
        return self.model.window

    def coordinate(self, j) -> RandomVariable:
        self._require_coordinates()
        (lo, hi) = self.model.window
        if not lo <= j <= hi:
            raise DomainError(f"coordinate {j} is outside the window [{lo}, {hi}]")
        return RandomVariable(self.space, self.model.law.alphabet[self.codes[:, j - lo]])

    def _require_coordinates(self):
        if self.codes is None:
            raise DomainError("process was not built from a coordinate model")

    def evaluate(self, functional: WindowFunctional, i) -> RandomVariable:
        self._require_coordinates()
        return _evaluate_on(self.space, self.model, self.codes, functional, i)

    def coordinate_partition(self, coordinates) -> FinitePartition:
        """
        The partition generated by the listed (absolute) coordinates.
        """
        self._require_coordinates()
        (lo, _hi) = self.model.window
        key = np.zeros(self.space.atom_count, dtype=np.int64)
        for c in coordinates:
            key = key * self.model.law.size + self.codes[:, c - lo]
        return FinitePartition(key)


def _evaluate_on(space, model, codes, functional, i):
    (lo, hi) = model.window
    columns = [i + o - lo for o in functional.offsets]
    if any(c < 0 or c > hi - lo for c in columns):
        raise DomainError(f"functional at {i} reads outside the window [{lo}, {hi}]")
    window = model.law.alphabet[codes[:, columns]]
    return RandomVariable(space, functional.evaluate(window))


def build_exact(model: ExactProcessModel) -> ExactProcess:
    required = model.required_atoms
    if required > model.atom_budget:
        raise ResourceError(required, model.atom_budget)

    law = model.law
    size = law.size
    count = model.coordinate_count
    atoms = size**count

    # first coordinate is the most significant digit of the atom index
    codes = np.stack(
        np.unravel_index(np.arange(atoms), (size,) * count), axis=1
    ).astype(np.int64)

    if law.kind is LawKind.IID:
        weights = np.prod(law.probabilities[codes], axis=1)
    else:
        weights = law.probabilities[codes[:, 0]]
        for j in range(1, count):
            weights = weights * law.transition[codes[:, j - 1], codes[:, j]]
    space = FiniteProbabilitySpace(weights)

    atom_index = np.arange(atoms)
    partitions = [
        FinitePartition(atom_index // size ** (count - 1 - j)) for j in range(count)
    ]
    filtration = Filtration(model.window[0], partitions)

    (first, last) = model.index_range()
    variables = {
        i: _evaluate_on(space, model, codes, model.schedule.at(i), i)
        for i in range(first, last + 1)
    }
    process = ExactProcess(space, filtration, variables, model=model, codes=codes)

    logger.info(
        "built exact space with %s atoms, window %s, X_i for i in [%s, %s]",
        atoms,
        model.window,
        first,
        last,
    )
    return process


def coordinate_support(process: ExactProcess, X: RandomVariable, tol=settings.EXACT_TOL):
    """
    Coordinates (absolute indices) X depends on, found by dropping every
    coordinate whose removal keeps X measurable.
    """
    process._require_coordinates()
    (lo, hi) = process.model.window
    kept = list(range(lo, hi + 1))
    for j in range(lo, hi + 1):
        trial = [c for c in kept if c != j]
        if is_measurable(X, process.coordinate_partition(trial), tol):
            kept = trial
    return kept


def extract_functional(
    process: ExactProcess, X: RandomVariable, center, tol=settings.EXACT_TOL
) -> TableFunctional:
    """
    X as a lookup table over the coordinates it depends on, with offsets
    relative to `center`.
    """
    support = coordinate_support(process, X, tol)
    (lo, _hi) = process.model.window
    alphabet = process.model.law.alphabet
    size = alphabet.size

    table = np.zeros(size ** len(support))
    live = process.space.support
    if support:
        flat = np.ravel_multi_index(
            tuple(process.codes[live][:, c - lo] for c in support), (size,) * len(support)
        )
        table[flat] = X.values[live]
    elif np.any(live):
        table[0] = X.values[live][0]

    return TableFunctional([c - center for c in support], alphabet, table)


def shift_variable(process: ExactProcess, X: RandomVariable, i) -> RandomVariable:
    """
    X o T^i: X read on the coordinate window translated by i.
    """
    functional = extract_functional(process, X, 0)
    return process.evaluate(functional, i)


class StationaryShiftModel:
    """
    f o T^i for a window functional f on the product space of a law.
    """

    def __init__(
        self,
        law: CoordinateLaw,
        window: Tuple[int, int],
        f: WindowFunctional,
        atom_budget=settings.ATOM_BUDGET,
    ):
        self.f = f
        self.exact_model = ExactProcessModel(
            law, window, FunctionalSchedule.constant(f), atom_budget=atom_budget
        )
        self._process = None

    @property
    def process(self) -> ExactProcess:
        if self._process is None:
            self._process = build_exact(self.exact_model)
        return self._process

    @property
    def shift_range(self):
        return self.exact_model.index_range()


def shift_compose(model: StationaryShiftModel, i) -> RandomVariable:
    (first, last) = model.shift_range
    if not first <= i <= last:
        raise DomainError(
            f"shift {i} moves the window of f outside the model (allowed {first}..{last})"
        )
    return model.process.X(i)


class SamplerModel:
    def __init__(self, law: CoordinateLaw, schedule: FunctionalSchedule, seed):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

        self.law = law
        self.schedule = schedule
        self.seed = seed

    def with_seed(self, seed) -> "SamplerModel":
        if seed is None:
            return self
        return SamplerModel(self.law, self.schedule, seed)


def replica_generator(seed, replica) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(replica),)))


class PathBatch:
    """
    Coordinates of several replicas covering indices first..first+width-1.
    """

    def __init__(self, law: CoordinateLaw, values: np.ndarray, first):
        self.law = law
        self.values = values
        self.first = first

    def evaluate(self, schedule: FunctionalSchedule, start, n) -> np.ndarray:
        """
        Values of the schedule at indices start..start+n-1, one row per replica.
        """
        out = np.zeros((self.values.shape[0], n))
        indices = np.arange(start, start + n)
        for phase in range(schedule.period):
            columns = np.nonzero((indices - schedule.start) % schedule.period == phase)[0]
            if columns.size == 0:
                continue
            functional = schedule.entries[phase]
            if not functional.offsets:
                out[:, columns] = functional.evaluate(np.zeros((1, 0)))[0]
                continue
            picks = indices[columns][:, None] + np.array(functional.offsets)[None, :]
            window = self.values[:, picks - self.first]
            out[:, columns] = functional.evaluate(window)
        return out


def sample_coordinates(
    law: CoordinateLaw, first, width, seed, replicas: Sequence[int]
) -> PathBatch:
    codes = np.empty((len(replicas), width), dtype=np.int64)
    cdf = law.cdf()
    for (row, replica) in enumerate(replicas):
        uniforms = replica_generator(seed, replica).random(width)
        if law.kind is LawKind.IID:
            codes[row] = np.searchsorted(cdf, uniforms, side="right")
        else:
            codes[row] = _markov_codes(law, cdf, uniforms)
    np.minimum(codes, law.size - 1, out=codes)
    return PathBatch(law, law.alphabet[codes], first)


def _markov_codes(law, initial_cdf, uniforms):
    rows = np.cumsum(law.transition, axis=1)
    rows[:, -1] = 1.0
    codes = np.empty(uniforms.size, dtype=np.int64)
    state = int(np.searchsorted(initial_cdf, uniforms[0], side="right"))
    codes[0] = min(state, law.size - 1)
    for t in range(1, uniforms.size):
        state = int(np.searchsorted(rows[codes[t - 1]], uniforms[t], side="right"))
        codes[t] = min(state, law.size - 1)
    return codes


def path_window(schedules: Sequence[FunctionalSchedule], start, n) -> Tuple[int, int]:
    lo = min(s.span[0] for s in schedules)
    hi = max(s.span[1] for s in schedules)
    return (start + lo, n + hi - lo)


def sample_batch(
    model: SamplerModel,
    n,
    replicas: Sequence[int],
    extra: Sequence[FunctionalSchedule] = (),
    seed=None,
    start=1,
    extra_n=None,
):
    """
    X_start..X_{start+n-1} for each replica, plus indices start..start+extra_n-1
    of every schedule in `extra`, all read from one set of coordinates.
    """
    if n < 1:
        raise DomainError("paths need n >= 1")
    seed = model.seed if seed is None else seed
    extra_n = n if extra_n is None else extra_n

    schedules = [model.schedule, *extra]
    (first, width) = path_window(schedules, start, max(n, extra_n))
    batch = sample_coordinates(model.law, first, width, seed, replicas)
    return [batch.evaluate(model.schedule, start, n)] + [
        batch.evaluate(s, start, extra_n) for s in extra
    ]


def sample_path(model: SamplerModel, n, replica) -> np.ndarray:
    (paths,) = sample_batch(model, n, [replica])
    return paths[0]
