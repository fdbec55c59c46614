"""
Replica harness: chunks of replica indices evaluated on a thread pool, each
replica drawing from its own stream derived from (seed, replica), so results
do not depend on chunking or thread count.
"""
import sys
import logging

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Sequence

import numpy as np
from tqdm import tqdm

from cobound import settings
from cobound.errors import DomainError
from cobound.process_models import FunctionalSchedule, SamplerModel, sample_batch

logger = logging.getLogger("montecarlo")

ChunkFn = Callable[[np.ndarray], Sequence[np.ndarray]]


def run_replicas(
    fn: ChunkFn,
    replicas,
    threads=None,
    chunk=settings.REPLICA_CHUNK,
    quiet=True,
    desc=None,
) -> List[np.ndarray]:
    """
    Calls fn(replica_indices) per chunk; fn returns arrays whose first axis runs
    over the chunk. The outputs are stitched back in replica order.
    """
    replicas = int(replicas)
    if replicas < 1:
        raise DomainError("need at least one replica")
    threads = settings.thread_count(threads)

    starts = list(range(0, replicas, chunk))
    parts = [None] * len(starts)

    progress = tqdm(
        total=replicas,
        unit="replicas",
        desc=desc,
        leave=False,
        disable=quiet,
    )
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {
            pool.submit(fn, np.arange(start, min(start + chunk, replicas))): position
            for (position, start) in enumerate(starts)
        }
        for future in as_completed(futures):
            position = futures[future]
            parts[position] = future.result()
            progress.update(len(parts[position][0]))
    progress.close()
    if not quiet:
        sys.stderr.flush()

    logger.info("%s replicas in %s chunks on %s threads", replicas, len(starts), threads)
    return [np.concatenate([part[j] for part in parts]) for j in range(len(parts[0]))]


def partial_sums(
    model: SamplerModel,
    n_list,
    replicas,
    seed=None,
    threads=None,
    quiet=True,
) -> np.ndarray:
    """
    S_n = X_1 + ... + X_n for every n in n_list, one row per replica.
    """
    n_list = [int(n) for n in n_list]
    if not n_list or min(n_list) < 1:
        raise DomainError("n values must be positive")
    n_max = max(n_list)
    columns = np.array(n_list) - 1

    def chunk(indices):
        (X,) = sample_batch(model, n_max, indices, seed=seed)
        return (np.cumsum(X, axis=1)[:, columns],)

    (sums,) = run_replicas(chunk, replicas, threads, quiet=quiet, desc="partial sums")
    return sums


def sampled_paths(
    model: SamplerModel,
    n,
    replicas,
    reduce: Callable[..., Sequence[np.ndarray]],
    extra: Sequence[FunctionalSchedule] = (),
    extra_n=None,
    seed=None,
    threads=None,
    quiet=True,
    desc=None,
) -> List[np.ndarray]:
    """
    Runs reduce(X, *extras) on every chunk of sampled paths and stitches the
    per-replica statistics it returns.
    """

    def chunk(indices):
        paths = sample_batch(model, n, indices, extra=extra, seed=seed, extra_n=extra_n)
        return reduce(*paths)

    return run_replicas(chunk, replicas, threads, quiet=quiet, desc=desc)
