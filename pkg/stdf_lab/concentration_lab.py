"""Maximal deviations over the rectangle complements A_x = {z : some z_j < (k/n) x_j}.

For d <= 2 the supremum over x in [0,T]^d is exact. The empirical mass is constant
on the cells cut out by the data coordinates and T, and the analytic mass is
monotone in x, so every cell attains its extreme deviation at one of its two
diagonal corners. d >= 3 runs on a declared grid.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from opentelemetry import trace

from .decorator import start_as_current_span
from .empirical_core import PseudoUniformSample, union_counts
from .errors import ConfigurationError, DomainError, PreconditionError
from .samplers import draw_copula
from .stdf_oracles import StdfModel, tilde_F
from .streams import check_seed, rng_for, run_trials

LOGGER = logging.getLogger(__name__)

tracer = trace.get_tracer(__name__)

PAIR_CHUNK = 100_000
COUPLINGS = frozenset({"independent", "identical"})


@dataclass(frozen=True)
class RectClassSpec:
    d: int
    k: int
    n: int
    T: float

    def __post_init__(self):
        if self.d < 1 or self.k < 1 or self.n < 1:
            raise ConfigurationError(
                f"d, k and n must be positive: d={self.d}, k={self.k}, n={self.n}"
            )
        if not self.T > 0:
            raise DomainError(f"T > 0 violated: T={self.T}")

    @property
    def scale(self) -> float:
        return self.k / self.n

    @property
    def vc_dimension(self) -> int:
        return self.d

    @property
    def edge(self) -> float:
        """(k/n)·T, the side of the low-probability corner."""
        return self.scale * self.T


@dataclass(frozen=True)
class BoundParams:
    n: int
    d: int
    V: int
    p: float
    delta: float
    C: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.V < 1:
            raise ConfigurationError(
                f"n and V must be positive: n={self.n}, V={self.V}"
            )
        if not 0 < self.delta < 1:
            raise DomainError(f"0 < delta < 1 violated: delta={self.delta}")
        if not 0 <= self.p <= 1:
            raise DomainError(f"0 <= p <= 1 violated: p={self.p}")
        if not self.C > 0:
            raise ConfigurationError(f"the constant C must be positive, got {self.C}")

    @property
    def log_inverse_delta(self) -> float:
        return math.log(1.0 / self.delta)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    trials: int
    values: Tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class RademacherEstimate(MonteCarloEstimate):
    n: int = 0
    p: float = 0.0

    @property
    def plain(self) -> float:
        """The unnormalised average p·R_{n,p}."""
        return self.value * self.p

    @property
    def scaled(self) -> float:
        """R_{n,p}·sqrt(np), flat in n when R_{n,p} scales as (np)^-1/2."""
        return self.value * math.sqrt(self.n * self.p)


@dataclass(frozen=True)
class CoverageReport:
    constant: float
    coverage: float
    trials: int
    delta: float
    statistics: Tuple[float, ...] = field(default=(), repr=False)
    bounds: Tuple[float, ...] = field(default=(), repr=False)


def _summarise(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _check_model(cls: RectClassSpec, model: StdfModel):
    if model.d != cls.d:
        raise ConfigurationError(
            f"model dimension {model.d} differs from class dimension {cls.d}"
        )
    if cls.edge > 1:
        raise DomainError(f"(k/n)·T <= 1 violated: k/n={cls.scale}, T={cls.T}")


def union_mass(cls: RectClassSpec, model: StdfModel) -> float:
    """p = P(some U^j < (k/n)T) under the model with uniform margins."""
    _check_model(cls, model)
    return float(tilde_F(model, np.full(cls.d, cls.edge)))


def union_mass_frequency(
    cls: RectClassSpec, model: StdfModel, draws: int, seed: int
) -> MonteCarloEstimate:
    _check_model(cls, model)
    seed = check_seed(seed)
    hits = 0
    for chunk, start in enumerate(range(0, draws, PAIR_CHUNK)):
        size = min(PAIR_CHUNK, draws - start)
        u = 1.0 - draw_copula(model, size, rng_for(seed, "union-mass", chunk))
        hits += int(np.any(u < cls.edge, axis=1).sum())

    mass = hits / draws
    return MonteCarloEstimate(mass, math.sqrt(mass * (1 - mass) / draws), draws)


def _check_grid(cls: RectClassSpec, grid_resolution: Optional[int]):
    if cls.d >= 3 and grid_resolution is None:
        raise ConfigurationError(
            f"d={cls.d} has no exact cell scan; declare a grid resolution"
        )
    if grid_resolution is not None and grid_resolution < 1:
        raise ConfigurationError(
            f"grid resolution must be >= 1, got {grid_resolution}"
        )


def _check_sample(
    u: PseudoUniformSample, cls: RectClassSpec, grid_resolution: Optional[int]
):
    if u.d != cls.d or u.n != cls.n:
        raise ConfigurationError(
            f"sample of shape {u.values.shape} does not match "
            f"class (n={cls.n}, d={cls.d})"
        )
    _check_grid(cls, grid_resolution)


def _mesh(axes: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _cells(u: PseudoUniformSample, cls: RectClassSpec, grid_resolution: Optional[int]):
    """Per-point entry cells, cells per axis, and lower/upper corner axes in x units."""
    positions = u.values / cls.scale
    if grid_resolution is not None:
        grid = np.linspace(0.0, cls.T, grid_resolution + 1)
        entry = np.column_stack(
            [
                np.searchsorted(grid, positions[:, j], side="right")
                for j in range(cls.d)
            ]
        )
        axes = [grid] * cls.d
        return entry, [len(grid)] * cls.d, axes, axes

    entry, sizes, lower, upper = [], [], [], []
    for j in range(cls.d):
        column = positions[:, j]
        inner = column[(column > 0) & (column < cls.T)]
        breaks = np.unique(np.concatenate([[0.0], inner, [cls.T]]))
        entry.append(np.searchsorted(breaks, column, side="left"))
        sizes.append(len(breaks) - 1)
        lower.append(breaks[:-1])
        upper.append(breaks[1:])
    return np.column_stack(entry), sizes, lower, upper


def sup_empirical_deviation(
    u: PseudoUniformSample,
    cls: RectClassSpec,
    model: StdfModel,
    grid_resolution: Optional[int] = None,
) -> float:
    """sup over x in [0,T]^d of |P(U in A_x) - P_n(U in A_x)|."""
    _check_model(cls, model)
    _check_sample(u, cls, grid_resolution)

    entry, sizes, lower, upper = _cells(u, cls, grid_resolution)
    empirical = union_counts(entry, sizes) / cls.n
    at_lower = tilde_F(model, cls.scale * _mesh(lower))
    at_upper = tilde_F(model, cls.scale * _mesh(upper))

    gaps = np.abs(empirical - at_lower).max(), np.abs(empirical - at_upper).max()
    return float(max(gaps))


def grid_discretization_bound(cls: RectClassSpec, grid_resolution: int) -> float:
    """ℓ¹ slack of the analytic mass between grid nodes, d·(k/n)·T/resolution."""
    return cls.d * cls.scale * cls.T / grid_resolution


def theorem1_bound(params: BoundParams) -> float:
    """C[sqrt(p)·sqrt((V/n) log(1/δ)) + (1/n) log(1/δ)]."""
    log_term = params.log_inverse_delta
    spread = math.sqrt(params.p) * math.sqrt(params.V / params.n * log_term)
    return params.C * (spread + log_term / params.n)


def remark2_bound(params: BoundParams) -> float:
    """C·sqrt(p)·sqrt((V/n) log(1/δ)), stated for δ >= exp(-np)."""
    floor = math.exp(-params.n * params.p)
    if params.delta < floor:
        raise PreconditionError(
            f"δ ≥ e^(-np) violated: delta={params.delta:g}, e^(-np)={floor:g}"
        )
    spread = math.sqrt(params.V / params.n * params.log_inverse_delta)
    return params.C * math.sqrt(params.p) * spread


def log_shatter_bound(n: int, V: int) -> float:
    """Sauer: log S_A(n) <= V log(en/V) once n >= V."""
    if n < V:
        raise DomainError(f"n ≥ V violated: n={n}, V={V}")
    return V * math.log(math.e * n / V)


def renormalized_vc_bound(n: int, V: int, delta: float) -> float:
    """2 sqrt((log S_A(2n) + log(4/δ))/n), the bound on sup |P - P_n|/sqrt(P)."""
    if n < V:
        raise DomainError(f"n ≥ V violated: n={n}, V={V}")
    return 2.0 * math.sqrt((log_shatter_bound(2 * n, V) + math.log(4.0 / delta)) / n)


def remark1_bound(params: BoundParams, n: Optional[int] = None) -> float:
    n = params.n if n is None else n
    return math.sqrt(params.p) * renormalized_vc_bound(n, params.V, params.delta)


def maximal_deviation_bound(
    p: float, n: int, delta: float, rademacher: float, simplified: bool = False
) -> float:
    """p[2R + (2/(3np)) log(1/δ) + 2 sqrt(log(1/δ)/(np))].

    The simplified form p[2R + 3 sqrt(log(1/δ)/(np))] needs δ >= exp(-np).
    """
    if not 0 < delta < 1:
        raise DomainError(f"0 < delta < 1 violated: delta={delta}")
    if not p > 0:
        raise DomainError(f"p > 0 violated: p={p}")

    mass = n * p
    log_term = math.log(1.0 / delta)
    if simplified:
        if delta < math.exp(-mass):
            raise PreconditionError(
                f"δ ≥ e^(-np) violated: delta={delta:g}, e^(-np)={math.exp(-mass):g}"
            )
        return p * (2 * rademacher + 3 * math.sqrt(log_term / mass))

    linear = 2 * log_term / (3 * mass)
    return p * (2 * rademacher + linear + 2 * math.sqrt(log_term / mass))


def bernstein_tail(t: float, n: int, q: float) -> float:
    return math.exp(-n * t * t / (2 * q + 2 * t / 3))


def bernstein_radius(delta: float, n: int, p: float) -> float:
    """Relative radius t/p solving bernstein_tail(t, n, 2p) = δ."""
    mass = n * p
    if not mass > 0:
        raise DomainError(f"np > 0 violated: n={n}, p={p}")
    log_term = math.log(1.0 / delta)
    linear = log_term / (3 * mass)
    return linear + math.sqrt(linear * linear + 4 * log_term / mass)


def effective_sample_size_bound(n: int, p: float, V: int, delta: float) -> float:
    """ε(np, δ) = sqrt((V/m) log(1/δ)) + (1/m) log(1/δ) with m = np."""
    mass = n * p
    if not mass > 0:
        raise DomainError(f"np > 0 violated: n={n}, p={p}")
    log_term = math.log(1.0 / delta)
    return math.sqrt(V / mass * log_term) + log_term / mass


def calibrate_constant(statistics, units, delta: float) -> float:
    """(1-δ)-quantile of statistic/unit, frozen as C for a later evaluation run."""
    statistics = np.asarray(statistics, dtype=float)
    units = np.broadcast_to(np.asarray(units, dtype=float), statistics.shape)
    if statistics.size == 0:
        raise ConfigurationError("calibration needs at least one pilot trial")
    if np.any(units <= 0):
        raise DomainError("calibration units must be positive")
    return float(np.quantile(statistics / units, 1 - delta, method="higher"))


def coverage_fraction(statistics, bounds) -> float:
    statistics = np.asarray(statistics, dtype=float)
    return float(np.mean(statistics <= np.broadcast_to(bounds, statistics.shape)))


def _draw_uniforms(
    model: StdfModel, n: int, rng: np.random.Generator
) -> PseudoUniformSample:
    return PseudoUniformSample(1.0 - draw_copula(model, n, rng))


def _rademacher_trial(task) -> float:
    model, cls, seed, trial, grid_resolution, mass = task
    rng = rng_for(seed, "rademacher", cls.n, trial)
    u = _draw_uniforms(model, cls.n, rng)
    signs = rng.integers(0, 2, size=cls.n) * 2.0 - 1.0

    entry, sizes, _, _ = _cells(u, cls, grid_resolution)
    chaos = union_counts(entry, sizes, weights=signs)
    return float(np.abs(chaos).max(initial=0.0)) / (cls.n * mass)


@start_as_current_span(tracer=tracer, span_name="relative_rademacher")
def relative_rademacher(
    model: StdfModel,
    cls: RectClassSpec,
    trials: int,
    seed: int,
    grid_resolution: Optional[int] = None,
    workers: int = 1,
    span=None,
) -> RademacherEstimate:
    """Monte Carlo E sup_x (1/np)|Σ σ_i 1{U_i in A_x}| with fresh draws per trial."""
    if trials < 2:
        raise ConfigurationError(
            f"trials >= 2 required for a standard error, got {trials}"
        )
    seed = check_seed(seed)
    _check_model(cls, model)
    _check_grid(cls, grid_resolution)

    mass = union_mass(cls, model)
    span.set_attributes(
        {
            "app.n": cls.n,
            "app.k": cls.k,
            "app.d": cls.d,
            "app.T": cls.T,
            "app.trials": trials,
        }
    )

    tasks = [
        (model, cls, seed, trial, grid_resolution, mass) for trial in range(trials)
    ]
    values = run_trials(_rademacher_trial, tasks, workers)
    value, stderr = _summarise(values)

    LOGGER.info(
        "R_{n,p} at n=%d, p=%.4g: %.4g ± %.2g (%d trials)",
        cls.n,
        mass,
        value,
        stderr,
        trials,
    )
    return RademacherEstimate(value, stderr, trials, tuple(values), n=cls.n, p=mass)


def separated(first: np.ndarray, second: np.ndarray, T: float) -> np.ndarray:
    """Whether some A_x holds exactly one of each pair, positions in units of k/n."""
    forward = np.any(first < np.minimum(second, T), axis=1)
    backward = np.any(second < np.minimum(first, T), axis=1)
    return forward | backward


def _pair_chunk(task) -> np.ndarray:
    model, cls, seed, chunk, size, coupling = task
    rng = rng_for(seed, "pairs", chunk)
    first = 1.0 - draw_copula(model, size, rng)
    second = first if coupling == "identical" else 1.0 - draw_copula(model, size, rng)
    return separated(first / cls.scale, second / cls.scale, cls.T).astype(float)


@start_as_current_span(tracer=tracer, span_name="class_complexity_q")
def class_complexity_q(
    model: StdfModel,
    cls: RectClassSpec,
    pairs: int,
    seed: int,
    coupling: str = "independent",
    workers: int = 1,
    span=None,
) -> MonteCarloEstimate:
    """Monte Carlo q = E sup_A |1{X' in A} - 1{X in A}|; `identical` sets X' = X."""
    if pairs < 2:
        raise ConfigurationError(f"at least 2 pairs required, got {pairs}")
    if coupling not in COUPLINGS:
        raise ConfigurationError(
            f"unknown coupling '{coupling}', expected one of {sorted(COUPLINGS)}"
        )
    seed = check_seed(seed)
    _check_model(cls, model)
    span.set_attributes({"app.d": cls.d, "app.T": cls.T, "app.pairs": pairs})

    tasks = [
        (model, cls, seed, chunk, min(PAIR_CHUNK, pairs - start), coupling)
        for chunk, start in enumerate(range(0, pairs, PAIR_CHUNK))
    ]
    indicators = np.concatenate(run_trials(_pair_chunk, tasks, workers))
    value, stderr = _summarise(indicators)
    return MonteCarloEstimate(value, stderr, pairs)


def _deviation_trial(task) -> float:
    model, cls, seed, label, trial, grid_resolution = task
    u = _draw_uniforms(model, cls.n, rng_for(seed, label, trial))
    return sup_empirical_deviation(u, cls, model, grid_resolution)


@start_as_current_span(tracer=tracer, span_name="theorem1_coverage")
def run_theorem1_coverage(
    cls: RectClassSpec,
    model: StdfModel,
    delta: float,
    trials: int,
    seed: int,
    pilot_seed: int,
    pilot_trials: int = 100,
    grid_resolution: Optional[int] = None,
    workers: int = 1,
    pilot_delta: Optional[float] = None,
    span=None,
) -> CoverageReport:
    """Calibrate C on a pilot run, freeze it, and count evaluation trials it covers.

    The pilot quantile sits at 1 - pilot_delta, which defaults to delta.
    """
    seed, pilot_seed = check_seed(seed), check_seed(pilot_seed)
    if seed == pilot_seed:
        raise ConfigurationError("the pilot seed must differ from the evaluation seed")
    if pilot_delta is None:
        pilot_delta = delta
    if not 0 < pilot_delta <= delta:
        raise ConfigurationError(
            f"pilot delta must lie in (0, {delta}], got {pilot_delta}"
        )

    mass = union_mass(cls, model)
    unit = theorem1_bound(BoundParams(cls.n, cls.d, cls.vc_dimension, mass, delta))
    span.set_attributes({"app.n": cls.n, "app.k": cls.k, "app.trials": trials})

    def statistics(master: int, count: int) -> np.ndarray:
        tasks = [
            (model, cls, master, "coverage", trial, grid_resolution)
            for trial in range(count)
        ]
        return np.asarray(run_trials(_deviation_trial, tasks, workers))

    constant = calibrate_constant(
        statistics(pilot_seed, pilot_trials), unit, pilot_delta
    )
    evaluation = statistics(seed, trials)
    bound = constant * unit
    coverage = coverage_fraction(evaluation, bound)

    LOGGER.info(
        "Union-class coverage %.3f with frozen C=%.4g over %d trials",
        coverage,
        constant,
        trials,
    )
    return CoverageReport(
        constant, coverage, trials, delta, tuple(evaluation), tuple([bound] * trials)
    )


def bound_comparison(
    p: float, V: int, delta: float, C: float, ns: Sequence[int]
) -> pd.DataFrame:
    """theorem1, remark1, remark2 and the remark1/theorem1 ratio over a list of n."""
    rows = []
    for n in ns:
        params = BoundParams(int(n), V, V, p, delta, C)
        try:
            simple = remark2_bound(params)
        except PreconditionError:
            simple = float("nan")
        rows.append(
            {
                "n": int(n),
                "theorem1": theorem1_bound(params),
                "remark1": remark1_bound(params),
                "remark2": simple,
            }
        )

    frame = pd.DataFrame(rows)
    frame["ratio_remark1_theorem1"] = frame["remark1"] / frame["theorem1"]
    return frame


def trial_frame(
    values: Sequence[float], cls: RectClassSpec, delta: float, statistic_name: str
) -> pd.DataFrame:
    """Per-trial long format: trial_id, n, k, d, T, delta, statistic_name, value."""
    return pd.DataFrame(
        {
            "trial_id": np.arange(len(values)),
            "n": cls.n,
            "k": cls.k,
            "d": cls.d,
            "T": cls.T,
            "delta": delta,
            "statistic_name": statistic_name,
            "value": np.asarray(values, dtype=float),
        }
    )
