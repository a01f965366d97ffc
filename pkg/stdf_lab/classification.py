"""Classification on extreme regions: conditional risks on a norm tail or an orthant.

The labeled generator draws features from a dependence model with a common margin and
labels from an axis-threshold rule with symmetric flip noise ε, so for any
axis-threshold g

    P(Y != g(X), X in R) = ε·P(R) + (1 - 2ε)·P(R and g != rule)

and the second term is a sum of copula box probabilities. Regions without a box form
(ℓ¹ and ℓ² norm tails, margins that go negative) fall back to a large reference draw.
"""
import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from opentelemetry import trace

from .concentration_lab import MonteCarloEstimate
from .decorator import start_as_current_span
from .deviation_harness import DeviationReport, STATUS_OK, fit_rate_slope
from .errors import ConfigurationError, DataError, DomainError
from .samplers import MarginTransform, draw_copula, parse_margin
from .stdf_oracles import StdfModel, box_probability, copula, diagonal_level
from .streams import check_seed, derive_seed, rng_for, run_trials

LOGGER = logging.getLogger(__name__)

tracer = trace.get_tracer(__name__)

NORM_ORDERS = {"l2": 2, "l1": 1, "linf": np.inf}
NONNEGATIVE_MARGINS = frozenset({"uniform", "exponential", "pareto"})
REFERENCE_CHUNK = 1_000_000


class AxisThreshold(namedtuple("AxisThreshold", ["coordinate", "threshold", "sign"])):
    """sign where x[coordinate] > threshold, -sign elsewhere."""

    def __call__(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(features)
        above = features[:, self.coordinate] > self.threshold
        return np.where(above, self.sign, -self.sign)


@dataclass(frozen=True)
class ClassifierFamily:
    members: Tuple[Callable, ...]
    vc_dimension: int

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ConfigurationError("a classifier family needs at least one member")

    def __len__(self) -> int:
        return len(self.members)

    def to_records(self) -> List[Dict]:
        """(coordinate, threshold, sign) triples for axis-threshold members."""
        records = []
        for index, member in enumerate(self.members):
            if not isinstance(member, AxisThreshold):
                raise ConfigurationError(
                    f"member {index} is not an axis-threshold labeler"
                )
            records.append(
                {
                    "coordinate": int(member.coordinate),
                    "threshold": float(member.threshold),
                    "sign": int(member.sign),
                }
            )
        return records

    @classmethod
    def from_records(
        cls, records: Sequence[Dict], vc_dimension: int = 2
    ) -> "ClassifierFamily":
        members = [
            AxisThreshold(
                int(record["coordinate"]),
                float(record["threshold"]),
                int(record["sign"]),
            )
            for record in records
        ]
        return cls(tuple(members), vc_dimension)


@dataclass(frozen=True, eq=False)
class LabeledSample:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels).astype(np.int64).ravel()
        if features.shape[0] != labels.shape[0]:
            raise DataError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if not np.all(np.isin(labels, (-1, 1))):
            raise DataError("labels must be -1 or +1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class TailRegionSpec:
    """Norm tail {‖x‖ > t_α} or Q = {x : some x_j > b_j} (no bounds: all of R^d)."""

    kind: str
    norm: str = "l2"
    alpha: Optional[float] = None
    bounds: Optional[Tuple[float, ...]] = None
    mass: Optional[float] = None

    def __post_init__(self):
        if self.kind == "quantile":
            if self.norm not in NORM_ORDERS:
                raise ConfigurationError(
                    f"unknown norm '{self.norm}', expected one of {sorted(NORM_ORDERS)}"
                )
            if self.alpha is None or not 0 < self.alpha < 1:
                raise DomainError(f"0 < α < 1 violated: alpha={self.alpha}")
        elif self.kind == "region":
            if self.bounds is not None:
                object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
            if self.mass is not None and not 0 < self.mass <= 1:
                raise DomainError(f"0 < q <= 1 violated: q={self.mass}")
        else:
            raise ConfigurationError(f"unknown region kind '{self.kind}'")

    @classmethod
    def quantile(cls, alpha: float, norm: str = "l2") -> "TailRegionSpec":
        return cls("quantile", norm=norm, alpha=alpha)

    @classmethod
    def region(cls, bounds=None, mass: Optional[float] = None) -> "TailRegionSpec":
        return cls("region", bounds=bounds, mass=mass)

    @property
    def level(self) -> float:
        """α for a norm tail, q for an explicit region."""
        if self.kind == "quantile":
            return self.alpha
        if self.mass is None:
            raise ConfigurationError(
                "region mass unknown; resolve it against a generator first"
            )
        return self.mass


def norms(features: np.ndarray, norm: str) -> np.ndarray:
    return np.linalg.norm(features, ord=NORM_ORDERS[norm], axis=1)


def in_region(features: np.ndarray, region: TailRegionSpec) -> np.ndarray:
    if region.bounds is None:
        return np.ones(features.shape[0], dtype=bool)
    return np.any(features > np.asarray(region.bounds), axis=1)


def _tail_mask(data: LabeledSample, region: TailRegionSpec) -> np.ndarray:
    if region.kind == "region":
        return in_region(data.features, region)

    count = int(math.floor(round(data.n * region.alpha, 9)))
    if count < 1:
        raise DomainError(f"floor(nα) >= 1 violated: n={data.n}, alpha={region.alpha}")

    values = norms(data.features, region.norm)
    ordered = np.sort(values)[::-1]
    ties = np.flatnonzero(np.diff(ordered) == 0)
    if ties.size:
        raise DataError(
            f"norm tie at value {ordered[ties[0]]!r}; norms must be distinct"
        )

    # descending order statistics, strict inequality at the floor(nα)-th largest
    return values > ordered[count - 1]


def empirical_conditional_risk(
    data: LabeledSample, g: Callable, region: TailRegionSpec
) -> float:
    errors = (g(data.features) != data.labels) & _tail_mask(data, region)
    return int(errors.sum()) / (data.n * region.level)


@dataclass(frozen=True)
class LabeledGenerator:
    model: StdfModel
    rule: AxisThreshold
    noise: float = 0.0
    margin: str = "uniform"

    def __post_init__(self):
        if not 0 <= self.noise <= 0.5:
            raise ConfigurationError(
                f"label noise must lie in [0, 1/2], got {self.noise}"
            )
        object.__setattr__(self, "rule", AxisThreshold(*self.rule))
        if not 0 <= self.rule.coordinate < self.model.d:
            raise ConfigurationError(
                f"rule coordinate {self.rule.coordinate} outside d={self.model.d}"
            )
        parse_margin(self.margin)

    @property
    def transform(self) -> MarginTransform:
        return parse_margin(self.margin)

    def sample(self, n: int, rng: np.random.Generator) -> LabeledSample:
        features = self.transform.forward(draw_copula(self.model, n, rng))
        clean = self.rule(features)
        flips = rng.random(n) < self.noise
        return LabeledSample(features, np.where(flips, -clean, clean))

    def analytic(self, region: TailRegionSpec) -> bool:
        if region.kind == "region":
            return True
        family = self.margin.split("(")[0].strip()
        return region.norm == "linf" and family in NONNEGATIVE_MARGINS

    def resolve(self, region: TailRegionSpec) -> TailRegionSpec:
        if region.kind == "region" and region.mass is None:
            return TailRegionSpec.region(region.bounds, self.region_mass(region))
        return region

    def complement_corner(self, region: TailRegionSpec) -> np.ndarray:
        """w0 with {X not in R} = {W <= w0} in copula scale."""
        d = self.model.d
        if region.kind == "quantile":
            return np.full(d, diagonal_level(self.model, 1 - region.alpha))
        if region.bounds is None:
            return np.zeros(d)
        if len(region.bounds) != d:
            raise ConfigurationError(
                f"region has {len(region.bounds)} bounds for d={d}"
            )
        return np.asarray(self.transform.cdf(np.asarray(region.bounds)), dtype=float)

    def region_mass(self, region: TailRegionSpec) -> float:
        if region.kind == "quantile":
            return region.alpha
        return 1.0 - float(copula(self.model, self.complement_corner(region)))

    def tail_threshold(self, region: TailRegionSpec) -> float:
        """t_α on the feature scale, for ℓ∞ tails of a nonnegative common margin."""
        if not self.analytic(region) or region.kind != "quantile":
            raise ConfigurationError(f"no analytic norm quantile for {region}")
        level = self.complement_corner(region)[0]
        return float(self.transform.forward(np.array([level]))[0])

    def _copula_threshold(self, g: AxisThreshold) -> float:
        return float(self.transform.cdf(np.array([g.threshold]))[0])

    def disagreement(self, g: AxisThreshold, region: TailRegionSpec) -> float:
        """P(X in R and g(X) != rule(X))."""
        d = self.model.d
        corner = self.complement_corner(region)
        pieces = {}
        for labeler in (g, self.rule):
            cut = min(max(self._copula_threshold(labeler), 0.0), 1.0)
            pieces.setdefault(labeler.coordinate, {0.0, 1.0}).add(cut)

        axes = sorted(pieces)
        edges = [np.array(sorted(pieces[axis])) for axis in axes]
        total = 0.0
        for cell in np.ndindex(*(len(edge) - 1 for edge in edges)):
            lower, upper = np.zeros(d), np.ones(d)
            for axis, edge, index in zip(axes, edges, cell):
                lower[axis], upper[axis] = edge[index], edge[index + 1]
            if np.any(upper <= lower):
                continue

            middle = (lower + upper) / 2
            if self._side(g, middle) == self._side(self.rule, middle):
                continue
            total += box_probability(self.model, lower, upper)
            total -= box_probability(self.model, lower, np.minimum(upper, corner))
        return max(total, 0.0)

    def _side(self, labeler: AxisThreshold, w: np.ndarray) -> int:
        above = w[labeler.coordinate] > self._copula_threshold(labeler)
        return labeler.sign if above else -labeler.sign

    def joint_error(self, g: AxisThreshold, region: TailRegionSpec) -> float:
        """P(Y != g(X), X in R)."""
        mass = self.region_mass(region)
        return self.noise * mass + (1 - 2 * self.noise) * self.disagreement(g, region)


def reference_risks(
    members: Sequence[Callable],
    region: TailRegionSpec,
    generator: LabeledGenerator,
    draws: int,
    seed: int,
) -> List[MonteCarloEstimate]:
    """Conditional risks of every member from one large draw at its own t_α quantile."""
    if not hasattr(generator, "sample"):
        raise ConfigurationError(f"unknown generator law {type(generator).__name__}")

    chunks = [
        generator.sample(
            min(REFERENCE_CHUNK, draws - start), rng_for(seed, "reference", index)
        )
        for index, start in enumerate(range(0, draws, REFERENCE_CHUNK))
    ]
    features = np.concatenate([chunk.features for chunk in chunks])
    labels = np.concatenate([chunk.labels for chunk in chunks])

    if region.kind == "quantile":
        values = norms(features, region.norm)
        mask = values > np.quantile(values, 1 - region.alpha)
    else:
        mask = in_region(features, region)

    inside = int(mask.sum())
    estimates = []
    for member in members:
        risk = int(((member(features) != labels) & mask).sum()) / max(inside, 1)
        stderr = math.sqrt(risk * (1 - risk) / max(inside, 1))
        estimates.append(MonteCarloEstimate(risk, stderr, draws))
    return estimates


def true_conditional_risk(
    g: Callable,
    region: TailRegionSpec,
    generator: LabeledGenerator,
    draws: int = 10**7,
    seed: int = 0,
) -> float:
    """(1/α) P(Y != g(X), X in R), analytic on box-form regions, else by reference draw."""
    if not hasattr(generator, "sample"):
        raise ConfigurationError(f"unknown generator law {type(generator).__name__}")

    if isinstance(g, AxisThreshold) and generator.analytic(region):
        return generator.joint_error(g, region) / generator.region_mass(region)

    estimate = reference_risks([g], region, generator, draws, seed)[0]
    LOGGER.info(
        "Reference risk %.5f ± %.2g from %d draws",
        estimate.value,
        estimate.stderr,
        draws,
    )
    return estimate.value


def family_risks(
    family: ClassifierFamily,
    region: TailRegionSpec,
    generator: LabeledGenerator,
    draws: int,
    seed: int,
) -> np.ndarray:
    analytic = generator.analytic(region) and all(
        isinstance(member, AxisThreshold) for member in family.members
    )
    if analytic:
        mass = generator.region_mass(region)
        return np.array(
            [generator.joint_error(member, region) / mass for member in family.members]
        )

    LOGGER.info("No box form for %s; using a %d-draw reference", region, draws)
    estimates = reference_risks(family.members, region, generator, draws, seed)
    return np.array([estimate.value for estimate in estimates])


def erm(data: LabeledSample, family: ClassifierFamily, region: TailRegionSpec) -> int:
    """Index of the empirical risk minimiser; ties go to the lowest index."""
    risks = [
        empirical_conditional_risk(data, member, region) for member in family.members
    ]
    return int(np.argmin(risks))


def tail_threshold_family(
    generator: LabeledGenerator, alpha: float, per_coordinate: int = 10
) -> ClassifierFamily:
    """Axis thresholds spread through the upper α-band of every coordinate."""
    levels = 1 - alpha * np.linspace(0.95, 0.05, per_coordinate)
    thresholds = generator.transform.forward(levels)
    members = [
        AxisThreshold(coordinate, float(threshold), 1)
        for coordinate in range(generator.model.d)
        for threshold in thresholds
    ]
    return ClassifierFamily(tuple(members), vc_dimension=2)


@dataclass(frozen=True)
class ClassificationConfig:
    generator: LabeledGenerator
    family: ClassifierFamily
    schedule: Tuple[Tuple[int, float], ...]
    trials: int
    seed: int
    norm: str = "l2"
    delta: float = 0.05
    region_bounds: Optional[Tuple[float, ...]] = None
    reference_draws: int = 10**7

    def __post_init__(self):
        object.__setattr__(self, "seed", check_seed(self.seed))
        object.__setattr__(
            self,
            "schedule",
            tuple((int(n), float(alpha)) for n, alpha in self.schedule),
        )
        if not self.schedule:
            raise ConfigurationError("the classification schedule is empty")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.norm not in NORM_ORDERS:
            raise ConfigurationError(f"unknown norm '{self.norm}'")

    def region_at(self, alpha: float) -> TailRegionSpec:
        if self.region_bounds is not None:
            return self.generator.resolve(TailRegionSpec.region(self.region_bounds))
        return TailRegionSpec.quantile(alpha, self.norm)

    def to_dict(self) -> Dict:
        generator = self.generator
        return {
            "model": {
                "variant": generator.model.variant,
                "d": generator.model.d,
                "theta": generator.model.theta,
            },
            "margin": generator.margin,
            "rule": dict(zip(AxisThreshold._fields, map(float, generator.rule))),
            "noise": generator.noise,
            "family_size": len(self.family),
            "schedule": [list(point) for point in self.schedule],
            "trials": self.trials,
            "seed": self.seed,
            "norm": self.norm,
            "delta": self.delta,
            "region_bounds": (
                None if self.region_bounds is None else list(self.region_bounds)
            ),
            "reference_draws": self.reference_draws,
        }


def _classification_trial(task) -> Dict:
    config, n, alpha, trial, truths = task
    region = config.region_at(alpha)
    row = {"n": n, "alpha": alpha, "trial": trial, "status": STATUS_OK}
    try:
        rng = rng_for(config.seed, "classify", n, alpha, trial)
        data = config.generator.sample(n, rng)
        empirical = np.array(
            [
                empirical_conditional_risk(data, member, region)
                for member in config.family.members
            ]
        )
    except (DataError, DomainError) as exception:
        LOGGER.warning(
            "Trial %d at n=%d, α=%g aborted: %s", trial, n, alpha, exception
        )
        row.update(status=f"aborted: {exception}", sup_deviation=float("nan"))
        return row

    deviation = float(np.abs(empirical - truths).max())
    chosen = int(np.argmin(empirical))
    regret = float(truths[chosen] - truths.min())
    row.update(
        sup_deviation=deviation,
        erm_index=chosen,
        erm_regret=regret,
        regret_within_bound=bool(regret <= 2 * deviation + 1e-12),
    )
    return row


@start_as_current_span(tracer=tracer, span_name="rate_experiment_classification")
def rate_experiment_classification(
    config: ClassificationConfig, workers: int = 1, span=None
) -> DeviationReport:
    """Per schedule point and trial, sup over the family of |empirical - true| risk."""
    span.set_attributes({"app.trials": config.trials, "app.family": len(config.family)})

    tasks, flagged = [], {}
    for point, (n, alpha) in enumerate(config.schedule):
        region = config.region_at(alpha)
        level = region.level
        flagged[(n, alpha)] = n * level < 10
        if flagged[(n, alpha)]:
            LOGGER.warning(
                "n·level = %.3g < 10 at n=%d, α=%g; point flagged",
                n * level,
                n,
                alpha,
            )

        truths = family_risks(
            config.family,
            region,
            config.generator,
            config.reference_draws,
            derive_seed(config.seed, "reference", point),
        )
        tasks.extend(
            (config, n, alpha, trial, truths) for trial in range(config.trials)
        )

    trials = pd.DataFrame(run_trials(_classification_trial, tasks, workers))

    rows = []
    for n, alpha in config.schedule:
        level = config.region_at(alpha).level
        selected = trials[(trials["n"] == n) & (trials["alpha"] == alpha)]
        completed = selected.loc[selected["status"] == STATUS_OK, "sup_deviation"]
        values = completed.to_numpy(dtype=float)
        median, quantile = float("nan"), float("nan")
        if len(values):
            median = float(np.median(values))
            quantile = float(np.quantile(values, 1 - config.delta))
        rows.append(
            {
                "n": n,
                "alpha": alpha,
                "n_alpha": n * level,
                "flagged": flagged[(n, alpha)],
                "completed": len(values),
                "median": median,
                "quantile": quantile,
                "median_sqrt_n_alpha": median * math.sqrt(n * level),
                "median_sqrt_n": median * math.sqrt(n),
            }
        )
        LOGGER.info("n=%d, α=%g: median sup deviation %.4g", n, alpha, median)

    summary = pd.DataFrame(rows)
    fit = None
    if len(summary) >= 2:
        fit = fit_rate_slope(summary["n_alpha"], summary["median"])
        LOGGER.info("Fitted slope against n·α: %.3f ± %.3f", fit.slope, fit.stderr)

    metadata = {"config": config.to_dict(), "x_label": "n_alpha"}
    return DeviationReport(trials, summary, fit, metadata)


@dataclass(frozen=True)
class DecompositionCheck:
    holds: bool
    lhs: float = float("nan")
    rhs: float = float("nan")
    joint_deviation: float = float("nan")
    marginal_deviation: float = float("nan")
    skipped: bool = False
    notice: str = field(default="")


def appendix_b_decomposition_check(
    data: LabeledSample,
    family: ClassifierFamily,
    region: TailRegionSpec,
    generator: LabeledGenerator,
) -> DecompositionCheck:
    """sup_g |L_n(g) - L(g)| <= (1/α)[sup_g |joint dev.| + |tail-mass dev.| + 1/n].

    Guaranteed when nα is an integer; otherwise floor(nα) can add up to 1/(nα).
    """
    if not generator.analytic(region) or not all(
        isinstance(member, AxisThreshold) for member in family.members
    ):
        notice = f"no analytic oracle for {region}; decomposition check skipped"
        LOGGER.warning(notice)
        return DecompositionCheck(holds=True, skipped=True, notice=notice)

    region = generator.resolve(region)
    level = region.level
    if region.kind == "quantile":
        inside = norms(data.features, region.norm) > generator.tail_threshold(region)
        marginal = abs(level - inside.mean())
        slack = 1.0 / data.n
    else:
        inside = in_region(data.features, region)
        marginal, slack = 0.0, 0.0

    lhs, joint = 0.0, 0.0
    for member in family.members:
        truth = generator.joint_error(member, region)
        empirical = empirical_conditional_risk(data, member, region)
        lhs = max(lhs, abs(empirical - truth / level))
        joint_empirical = ((member(data.features) != data.labels) & inside).mean()
        joint = max(joint, abs(joint_empirical - truth))

    rhs = (joint + marginal + slack) / level
    return DecompositionCheck(bool(lhs <= rhs + 1e-12), lhs, rhs, joint, marginal)
