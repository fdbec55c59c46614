"""
Canonical models with known decompositions, on +-1 i.i.d. innovations.
"""
from cobound.process_models import (
    CoordinateLaw,
    ExactProcessModel,
    FunctionalSchedule,
    LinearFunctional,
    StationaryShiftModel,
    build_exact,
)

DEFAULT_WINDOW = (-6, 6)


def moving_average(a=0.5) -> FunctionalSchedule:
    """
    X_i = xi_i + a xi_{i-1}; U_k = a xi_{k-1}, Y_k = (1 + a) xi_k.
    """
    return FunctionalSchedule.constant(LinearFunctional({0: 1.0, -1: a}))


def alternating_moving_average(a=0.5, step=0.1) -> FunctionalSchedule:
    """
    X_i = xi_i + a_i xi_{i-1} with a_i = a + step (i mod 2).
    """
    return FunctionalSchedule(
        {
            0: LinearFunctional({0: 1.0, -1: a}),
            1: LinearFunctional({0: 1.0, -1: a + step}),
        }
    )


def coboundary() -> FunctionalSchedule:
    """
    X_i = xi_i - xi_{i+1}; U_k = xi_k and Y = 0.
    """
    return FunctionalSchedule.constant(LinearFunctional({0: 1.0, 1: -1.0}))


def martingale() -> FunctionalSchedule:
    return FunctionalSchedule.constant(LinearFunctional({0: 1.0}))


def zero() -> FunctionalSchedule:
    return FunctionalSchedule.constant(LinearFunctional({}))


CANONICAL = {
    "ma1": moving_average,
    "nonstationary_ma": alternating_moving_average,
    "coboundary": coboundary,
    "martingale": martingale,
    "zero": zero,
}


def exact_model(schedule: FunctionalSchedule, window=DEFAULT_WINDOW) -> ExactProcessModel:
    return ExactProcessModel(CoordinateLaw.rademacher(), window, schedule)


def exact_process(name, window=DEFAULT_WINDOW):
    return build_exact(exact_model(CANONICAL[name](), window))


def sampler(name, seed=20240101):
    return exact_model(CANONICAL[name]()).sampler(seed)


def stationary_ma(a=0.5, window=DEFAULT_WINDOW) -> StationaryShiftModel:
    """
    f = xi_0 + a xi_{-1} under the shift.
    """
    return StationaryShiftModel(
        CoordinateLaw.rademacher(), window, LinearFunctional({0: 1.0, -1: a})
    )
