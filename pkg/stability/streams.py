"""Counter-based RNG substreams and deterministic replicate fan-out.

Replicates are cut into fixed-size blocks. Block ``i`` always draws from the
``i``-th child spawned off the caller's generator, so the concatenated output
depends on the generator state and the replicate count only, never on how
many workers ran the blocks.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

import config

logger = logging.getLogger(__name__)

T = TypeVar("T")


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a run: Philox keyed by the run seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _block_sizes(n: int, block_size: int) -> List[int]:
    n_blocks = max(1, math.ceil(n / block_size))
    sizes = [block_size] * (n_blocks - 1)
    sizes.append(n - block_size * (n_blocks - 1))
    return sizes


def _resolve_workers(workers: Optional[int]) -> int:
    return max(1, int(workers if workers is not None else config.settings.workers))


def _run_blocks(run_block: Callable[[int], T], n_blocks: int, workers: int) -> List[T]:
    if workers == 1 or n_blocks == 1:
        return [run_block(i) for i in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map() yields in submission order
        return list(pool.map(run_block, range(n_blocks)))


def replicate(
    sampler: Callable[[np.random.Generator], T],
    n: int,
    rng: np.random.Generator,
    workers: Optional[int] = None,
    block_size: Optional[int] = None
) -> List[T]:
    """
    Draw ``n`` independent replicates of ``sampler``.

    Args:
        sampler: Function of a generator returning one replicate
        n: Number of replicates
        rng: Parent generator; children are spawned from it
        workers: Thread count (defaults to settings.workers)
        block_size: Replicates per substream (defaults to settings.block_size)

    Returns:
        List of replicates in replicate-index order
    """
    if n <= 0:
        return []
    sizes = _block_sizes(n, block_size or config.settings.block_size)
    children = rng.spawn(len(sizes))

    def run_block(i: int) -> List[T]:
        child = children[i]
        return [sampler(child) for _ in range(sizes[i])]

    workers = _resolve_workers(workers)
    logger.debug(f"[STREAMS] {n} replicates in {len(sizes)} blocks on {workers} worker(s)")
    out: List[T] = []
    for block in _run_blocks(run_block, len(sizes), workers):
        out.extend(block)
    return out


def replicate_batch(
    batch_sampler: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    rng: np.random.Generator,
    workers: Optional[int] = None,
    block_size: Optional[int] = None
) -> np.ndarray:
    """Vectorised counterpart of :func:`replicate` for samplers taking a ``size``."""
    if n <= 0:
        return np.empty(0)
    sizes = _block_sizes(n, block_size or config.settings.block_size)
    children = rng.spawn(len(sizes))

    def run_block(i: int) -> np.ndarray:
        return np.asarray(batch_sampler(children[i], sizes[i]))

    return np.concatenate(_run_blocks(run_block, len(sizes), _resolve_workers(workers)))
