import os
import logging

logger = logging.getLogger("settings")

TOL = 1e-10
EXACT_TOL = 1e-12
WEIGHT_TOL = 1e-12

ATOM_BUDGET = 2**20

CI_MULTIPLIER = 2.576
KS_THRESHOLD = 0.02

DIVERGENCE_K_CAP = 10**7
DIVERGENCE_CHUNK = 4096

REPLICA_CHUNK = 256

# sigma_bar_n^2 below this fraction of n counts as a degenerate normalisation
DEGENERATE_VARIANCE_RATIO = 1e-3

# tightness: quantile at the largest n within this factor of the first one
TIGHTNESS_GROWTH = 2.0

THREADS_ENV = "COBOUND_THREADS"


def thread_count(requested=None):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            threads = int(env)
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
        else:
            return max(1, threads)

    if requested is None:
        return 1
    return max(1, int(requested))
