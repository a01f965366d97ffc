"""Seeded generators of multivariate samples with a known tail dependence model.

Every generator first draws the copula vector W (uniform margins, dependence given by the model)
and then pushes each column through a strictly increasing margin transform.
"""
import logging
import re
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ConfigurationError, DataError, ParameterError
from .stdf_oracles import COMONOTONE, INDEPENDENCE, LOGISTIC, StdfModel
from .streams import check_seed

LOGGER = logging.getLogger(__name__)

MarginTransform = namedtuple("MarginTransform", ["tag", "forward", "cdf", "survival"])

MARGIN_TAG = re.compile(r"^\s*(?P<name>[a-z_]+)\s*(\(\s*(?P<arg>[^)]+)\s*\))?\s*$")
MONOTONE_PROBE = np.linspace(1e-6, 1 - 1e-6, 1001)


def _uniform() -> MarginTransform:
    return MarginTransform(
        "uniform",
        lambda u: np.asarray(u, dtype=float),
        lambda x: np.clip(x, 0.0, 1.0),
        lambda x: 1.0 - np.clip(x, 0.0, 1.0),
    )


def _exponential() -> MarginTransform:
    return MarginTransform(
        "exponential",
        lambda u: -np.log1p(-np.asarray(u, dtype=float)),
        lambda x: -np.expm1(-np.maximum(x, 0.0)),
        lambda x: np.exp(-np.maximum(x, 0.0)),
    )


def _pareto(a: float) -> MarginTransform:
    if not a > 0:
        raise ConfigurationError(f"pareto margin needs a positive index, got {a}")
    return MarginTransform(
        f"pareto({a:g})",
        lambda u: (1.0 - np.asarray(u, dtype=float)) ** (-1.0 / a),
        lambda x: 1.0 - np.maximum(x, 1.0) ** (-a),
        lambda x: np.maximum(x, 1.0) ** (-a),
    )


def _normal() -> MarginTransform:
    return MarginTransform("normal", stats.norm.ppf, stats.norm.cdf, stats.norm.sf)


BUILTIN_MARGINS: Dict[str, Callable[..., MarginTransform]] = {
    "uniform": _uniform,
    "exponential": _exponential,
    "pareto": _pareto,
    "normal": _normal,
}

CUSTOM_MARGINS: Dict[str, MarginTransform] = {}


def check_monotone(transform: MarginTransform) -> MarginTransform:
    with np.errstate(all="ignore"):
        image = np.asarray(transform.forward(MONOTONE_PROBE), dtype=float)
    if not np.all(np.isfinite(image)) or np.any(np.diff(image) <= 0):
        raise ConfigurationError(
            f"margin '{transform.tag}' is not strictly increasing on (0, 1)"
        )
    return transform


def register_margin(
    name: str, forward: Callable, cdf: Callable, survival: Callable = None
) -> MarginTransform:
    """Register a custom strictly increasing margin under `name`."""
    if name in BUILTIN_MARGINS:
        raise ConfigurationError(f"margin '{name}' is built in and cannot be replaced")

    if survival is None:
        survival = lambda x: 1.0 - cdf(x)  # noqa: E731

    transform = check_monotone(MarginTransform(name, forward, cdf, survival))
    CUSTOM_MARGINS[name] = transform
    return transform


def parse_margin(tag: Union[str, MarginTransform]) -> MarginTransform:
    if isinstance(tag, MarginTransform):
        return check_monotone(tag)

    match = MARGIN_TAG.match(str(tag))
    if not match:
        raise ConfigurationError(f"cannot parse margin tag {tag!r}")

    name, arg = match["name"], match["arg"]
    if name in CUSTOM_MARGINS and arg is None:
        return CUSTOM_MARGINS[name]
    if name not in BUILTIN_MARGINS:
        raise ConfigurationError(
            f"unknown margin '{name}', expected one of "
            f"{sorted(BUILTIN_MARGINS) + sorted(CUSTOM_MARGINS)}"
        )

    if name == "pareto":
        if arg is None:
            raise ConfigurationError("pareto margin needs an index, e.g. 'pareto(2)'")
        try:
            return _pareto(float(arg))
        except ValueError as exception:
            raise ConfigurationError(
                f"cannot parse pareto index in {tag!r}"
            ) from exception

    if arg is not None:
        raise ConfigurationError(f"margin '{name}' takes no argument, got {tag!r}")
    return BUILTIN_MARGINS[name]()


def parse_margins(tags, d: int) -> Tuple[MarginTransform, ...]:
    """One tag for every column, or a single tag broadcast to all of them."""
    if isinstance(tags, (str, MarginTransform)):
        tags = [tags]
    tags = list(tags)
    if len(tags) == 1:
        tags = tags * d
    if len(tags) != d:
        raise ConfigurationError(f"expected 1 or {d} margin tags, got {len(tags)}")
    return tuple(parse_margin(tag) for tag in tags)


@dataclass(frozen=True)
class GeneratorSpec:
    model: StdfModel
    n: int
    seed: int
    margins: Tuple[str, ...] = ("uniform",)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(
                f"sample size n must be a positive integer, got {self.n}"
            )
        object.__setattr__(self, "seed", check_seed(self.seed))
        margins = self.margins
        margins = (margins,) if isinstance(margins, str) else tuple(margins)
        object.__setattr__(self, "margins", margins)
        parse_margins(margins, self.model.d)

    @property
    def d(self) -> int:
        return self.model.d

    def transforms(self) -> Tuple[MarginTransform, ...]:
        return parse_margins(self.margins, self.d)


@dataclass(frozen=True, eq=False)
class Sample:
    values: np.ndarray
    provenance: Union[GeneratorSpec, str] = field(default="in-memory", compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"a sample is an n×d matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            row, column = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite entry at row {row}, column {column}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def draw_copula(model: StdfModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws of the copula vector W with uniform margins."""
    if model.variant == INDEPENDENCE:
        return rng.random((n, model.d))

    if model.variant == COMONOTONE:
        return np.repeat(rng.random((n, 1)), model.d, axis=1)

    if model.theta == 1.0:
        frailty = np.ones((n, 1))
    else:
        alpha = 1.0 / model.theta
        # positive stable with Laplace transform exp(-s^alpha)
        frailty = stats.levy_stable.rvs(
            alpha,
            1.0,
            loc=0.0,
            scale=np.cos(np.pi * alpha / 2.0) ** (1.0 / alpha),
            size=(n, 1),
            random_state=rng,
        )
        frailty = np.maximum(frailty, np.finfo(float).tiny)

    exponentials = rng.standard_exponential((n, model.d))
    return np.exp(-((exponentials / frailty) ** (1.0 / model.theta)))


def _check_variant(spec: GeneratorSpec, variant: str):
    if spec.model.variant != variant:
        raise ConfigurationError(
            f"generator for '{variant}' called with a '{spec.model.variant}' spec"
        )


def _finish(spec: GeneratorSpec, copula_values: np.ndarray) -> Sample:
    LOGGER.debug("Drew %d×%d sample from %s", spec.n, spec.d, spec.model.tag)
    raw = Sample(copula_values, provenance=spec)
    return apply_margins(raw, spec.margins, provenance=spec)


def sample_independence(spec: GeneratorSpec) -> Sample:
    _check_variant(spec, INDEPENDENCE)
    rng = np.random.default_rng(spec.seed)
    return _finish(spec, draw_copula(spec.model, spec.n, rng))


def sample_comonotone(spec: GeneratorSpec) -> Sample:
    _check_variant(spec, COMONOTONE)
    rng = np.random.default_rng(spec.seed)
    return _finish(spec, draw_copula(spec.model, spec.n, rng))


def sample_logistic(spec: GeneratorSpec, theta: float = None) -> Sample:
    """Marshall-Olkin draw from the Gumbel copula; theta comes from the model."""
    _check_variant(spec, LOGISTIC)
    model = spec.model
    if theta is not None:
        if not theta >= 1:
            raise ParameterError(f"logistic parameter theta must be >= 1, got {theta}")
        model = StdfModel(LOGISTIC, spec.d, float(theta))

    return _finish(spec, draw_copula(model, spec.n, np.random.default_rng(spec.seed)))


GENERATORS = {
    INDEPENDENCE: sample_independence,
    COMONOTONE: sample_comonotone,
    LOGISTIC: sample_logistic,
}


def generate(spec: GeneratorSpec) -> Sample:
    return GENERATORS[spec.model.variant](spec)


def apply_margins(sample: Sample, transforms: Sequence, provenance=None) -> Sample:
    margins = parse_margins(transforms, sample.d)
    columns = [margin.forward(sample.values[:, j]) for j, margin in enumerate(margins)]
    return Sample(np.column_stack(columns), provenance=provenance or sample.provenance)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_sample_csv(path: Union[str, Path]) -> Sample:
    """Comma-separated, one observation per line; a non-numeric first token marks a header."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            first_line = handle.readline()
    except OSError as exception:
        raise DataError(f"cannot read {path}: {exception}") from exception

    if not first_line.strip():
        raise DataError(f"{path} is empty")

    first_token = first_line.split(",")[0].strip()
    header = None if _is_number(first_token) else 0

    try:
        frame = pd.read_csv(path, header=header, dtype=float, skipinitialspace=True)
    except (ValueError, pd.errors.ParserError) as exception:
        raise DataError(f"{path}: {exception}") from exception

    if frame.isna().any().any():
        row, column = np.argwhere(frame.isna().to_numpy())[0]
        raise DataError(f"{path}: missing value at data row {row}, column {column}")

    LOGGER.info("Read %d×%d sample from %s", frame.shape[0], frame.shape[1], path)
    return Sample(frame.to_numpy(), provenance=f"file:{path}")


def write_sample_csv(
    sample: Sample, path: Union[str, Path], header: bool = False
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [f"x{j + 1}" for j in range(sample.d)]
    pd.DataFrame(sample.values, columns=columns).to_csv(
        path, header=header, index=False, float_format="%.17g", lineterminator="\n"
    )
    return path
