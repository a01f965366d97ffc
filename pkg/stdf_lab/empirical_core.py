"""Ranks, order statistics and the empirical tail functionals l_n and F̃_n.

Lattice convention: a point x enters l_n only through m_j = floor(k x_j); a
coordinate with m_j = 0 contributes no exceedance condition, so l_n(0) = 0.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DataError, DomainError
from .samplers import Sample, parse_margins
from .streams import rng_for

LOGGER = logging.getLogger(__name__)

LATTICE_DECIMALS = 9


def lattice_index(k: int, x) -> np.ndarray:
    """floor(k x), after rounding k x to 9 decimals so 0.3 * 10 lands on 3."""
    scaled = np.round(k * np.asarray(x, dtype=float), LATTICE_DECIMALS)
    return np.floor(scaled).astype(np.int64)


@dataclass(frozen=True, eq=False)
class RankState:
    """Ascending column order statistics and within-column ranks (1 = smallest)."""

    order_stats: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        for array in (self.order_stats, self.ranks):
            array.setflags(write=False)

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    @property
    def d(self) -> int:
        return self.ranks.shape[1]


@dataclass(frozen=True)
class TailPoint:
    x: Tuple[float, ...]

    def __post_init__(self):
        x = tuple(float(value) for value in np.atleast_1d(self.x))
        if not all(np.isfinite(x)) or min(x) < 0:
            raise DomainError(
                f"a tail point has finite nonnegative coordinates, got {x}"
            )
        object.__setattr__(self, "x", x)


@dataclass(frozen=True, eq=False)
class PseudoUniformSample:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(
                f"pseudo-uniforms are an n×d matrix, got shape {values.shape}"
            )
        if not np.all((values >= 0) & (values <= 1)):
            raise DataError("pseudo-uniform entries must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def _values(sample: Union[Sample, np.ndarray]) -> np.ndarray:
    if isinstance(sample, (Sample, PseudoUniformSample)):
        return sample.values
    return Sample(sample).values


def build_ranks(sample: Union[Sample, np.ndarray]) -> RankState:
    values = _values(sample)
    n, d = values.shape

    order = np.argsort(values, axis=0, kind="stable")
    order_stats = np.take_along_axis(values, order, axis=0)

    ties = np.argwhere(np.diff(order_stats, axis=0) == 0)
    if ties.size:
        position, column = ties[0]
        rows = sorted((int(order[position, column]), int(order[position + 1, column])))
        raise DataError(
            f"tie in column {column}: rows {rows[0]} and {rows[1]} share the value "
            f"{order_stats[position, column]!r}"
        )

    ranks = np.empty((n, d), dtype=np.int64)
    positions = np.arange(1, n + 1)[:, None].repeat(d, axis=1)
    np.put_along_axis(ranks, order, positions, axis=0)
    return RankState(order_stats, ranks)


def jitter_ties(sample: Sample, seed: int, scale: float = 1e-9) -> Sample:
    """Break ties with uniform noise of width `scale` times each column's range."""
    rng = rng_for(seed, "jitter")
    spread = np.ptp(sample.values, axis=0)
    spread = np.where(spread > 0, spread, 1.0)
    noise = rng.uniform(-0.5, 0.5, size=sample.values.shape) * scale * spread
    LOGGER.warning(
        "Jittering %d×%d sample at relative scale %g", sample.n, sample.d, scale
    )
    provenance = f"{sample.provenance}+jitter({seed})"
    return Sample(sample.values + noise, provenance=provenance)


def _lattice_point(ranks: RankState, k: int, x) -> np.ndarray:
    if int(k) != k or not 1 <= k <= ranks.n:
        raise DomainError(f"1 <= k <= n violated: k={k}, n={ranks.n}")

    if isinstance(x, TailPoint):
        x = x.x
    x = np.asarray(x, dtype=float)
    if x.shape != (ranks.d,):
        raise DomainError(
            f"expected a point of dimension {ranks.d}, got shape {x.shape}"
        )
    TailPoint(tuple(x))

    m = lattice_index(k, x)
    if np.any(m > ranks.n):
        raise DomainError(
            f"floor(k x_j) <= n violated: floor(k x)={m.tolist()}, n={ranks.n}"
        )
    return m


def exceedance_count(ranks: RankState, k: int, x) -> int:
    """#{i : some coordinate j with m_j >= 1 has rank(X_i^j) >= n - m_j + 1}."""
    m = _lattice_point(ranks, k, x)
    hits = (ranks.ranks >= ranks.n - m + 1) & (m > 0)
    return int(np.any(hits, axis=1).sum())


def empirical_stdf(ranks: RankState, k: int, x) -> float:
    return exceedance_count(ranks, k, x) / k


def empirical_tilde_F(u: PseudoUniformSample, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (u.d,):
        raise DomainError(f"expected a point of dimension {u.d}, got shape {x.shape}")
    if np.any((x < 0) | (x > 1)):
        raise DomainError(f"0 <= x_j <= 1 violated: x={x.tolist()}")

    return int(np.any(u.values <= x, axis=1).sum()) / u.n


def standardize(
    sample: Sample, true_margins: Union[str, Sequence]
) -> PseudoUniformSample:
    """U = 1 - F(X) column by column, using each margin's survival function."""
    margins = parse_margins(true_margins, sample.d)
    columns = [
        margin.survival(sample.values[:, j]) for j, margin in enumerate(margins)
    ]
    return PseudoUniformSample(np.clip(np.column_stack(columns), 0.0, 1.0))


def lemma1_rhs(ranks: RankState, u: PseudoUniformSample, k: int, x) -> float:
    """(n/k) F̃_n at the floor(k x_j)-th smallest U^j; zero levels use threshold 0."""
    if u.values.shape != ranks.ranks.shape:
        raise DomainError(
            f"pseudo-uniforms of shape {u.values.shape} do not align with ranks "
            f"of shape {ranks.ranks.shape}"
        )

    m = _lattice_point(ranks, k, x)
    ordered = np.sort(u.values, axis=0)
    thresholds = np.where(m > 0, ordered[np.maximum(m - 1, 0), np.arange(u.d)], 0.0)
    hits = (u.values <= thresholds) & (m > 0)

    # (n/k)·(count/n), kept as an exact count
    return int(np.any(hits, axis=1).sum()) / k


def union_counts(entry: np.ndarray, sizes: Sequence[int], weights=None) -> np.ndarray:
    """Weighted count, per cell a, of the points i with entry[i, j] <= a_j for some j.

    `entry[i, j]` is the first cell index along axis j at which point i is inside;
    values at or beyond `sizes[j]` mean never. The result has shape `sizes`.
    """
    entry = np.asarray(entry, dtype=np.int64)
    sizes = tuple(int(size) for size in sizes)
    if entry.ndim != 2 or entry.shape[1] != len(sizes):
        raise ConfigurationError(
            f"entry of shape {entry.shape} does not match sizes {sizes}"
        )

    if weights is None:
        weights = np.ones(entry.shape[0])
    weights = np.asarray(weights, dtype=float)
    clipped = np.minimum(entry, np.array(sizes))
    buckets = tuple(size + 1 for size in sizes)

    flat = np.ravel_multi_index(tuple(clipped.T), buckets)
    histogram = np.bincount(flat, weights=weights, minlength=int(np.prod(buckets)))
    tail = histogram.reshape(buckets)
    for axis in range(len(sizes)):
        tail = np.flip(np.cumsum(np.flip(tail, axis=axis), axis=axis), axis=axis)

    # points never inside at cell a are those with entry > a in every coordinate
    outside = tail[tuple(slice(1, None) for _ in sizes)]
    return weights.sum() - outside


def surface_counts(ranks: RankState, levels: Sequence[np.ndarray]) -> np.ndarray:
    """Exceedance counts on the product of per-axis nondecreasing lattice levels m."""
    if len(levels) != ranks.d:
        raise ConfigurationError(f"expected {ranks.d} level arrays, got {len(levels)}")

    needed = ranks.n - ranks.ranks + 1
    entry = np.column_stack(
        [
            np.searchsorted(np.asarray(levels[j]), needed[:, j], side="left")
            for j in range(ranks.d)
        ]
    )
    return union_counts(entry, [len(level) for level in levels])


def lattice_surface(
    ranks: RankState, k: int, T: float
) -> Tuple[np.ndarray, np.ndarray]:
    """l_n at each lattice point m/k of [0,T]^d: (levels, values of shape (M+1)^d)."""
    top = int(lattice_index(k, T))
    if top > ranks.n:
        raise DomainError(f"k·T <= n violated: k={k}, T={T}, n={ranks.n}")

    levels = np.arange(top + 1)
    return levels, surface_counts(ranks, [levels] * ranks.d) / k
