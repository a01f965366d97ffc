"""Seeded random streams and the trial work pool."""
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

from .errors import ConfigurationError

LOGGER = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1

T = TypeVar("T")
R = TypeVar("R")


def check_seed(seed) -> int:
    if seed is None:
        raise ConfigurationError(
            "a seed is mandatory; pass --seed or set 'seed' in the config"
        )

    try:
        seed = int(seed)
    except (TypeError, ValueError) as exception:
        raise ConfigurationError(
            f"seed must be an integer, got {seed!r}"
        ) from exception

    if not 0 <= seed <= MAX_SEED:
        raise ConfigurationError(
            f"seed must be an unsigned 64-bit integer, got {seed}"
        )

    return seed


def derive_seed(master_seed: int, *labels) -> int:
    """Hash of (master seed, labels...) folded to an unsigned 64-bit integer."""
    key = "|".join(str(part) for part in (master_seed, *labels))
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))


def run_trials(
    func: Callable[[T], R], tasks: Sequence[T], workers: int = 1
) -> List[R]:
    """Map `func` over `tasks`, in a process pool when workers > 1, in task order."""
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")

    if workers == 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]

    LOGGER.debug("Dispatching %d tasks over %d workers", len(tasks), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunksize = max(1, len(tasks) // (4 * workers))
        return list(pool.map(func, tasks, chunksize=chunksize))
