"""Closed-form stable tail dependence functions and the finite-t laws behind them.

Three dependence models are available, each with a closed-form l and a closed-form copula:

    independence   l(x) = sum_j x_j
    comonotone     l(x) = max_j x_j            (zero pre-limit bias)
    logistic(θ)    l(x) = (sum_j x_j^θ)^(1/θ)  (Gumbel copula, θ >= 1)

`tilde_F(model, x)` is P(U^1 <= x_1 or ... or U^d <= x_d) for the standardized variables
U^j = 1 - F_j(X^j); `pre_limit_tail` is t^-1 tilde_F(t x), which converges to l(x) as t -> 0.
"""
import itertools
import re
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

INDEPENDENCE = "independence"
COMONOTONE = "comonotone"
LOGISTIC = "logistic"
VARIANTS = frozenset({INDEPENDENCE, COMONOTONE, LOGISTIC})

MODEL_TAG = re.compile(r"^\s*(?P<variant>[a-z]+)\s*(\(\s*(?P<theta>[^)]+)\s*\))?\s*$")


@dataclass(frozen=True)
class StdfModel:
    variant: str
    d: int
    theta: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(
                f"unknown model '{self.variant}', expected one of {sorted(VARIANTS)}"
            )
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(
                f"dimension d must be a positive integer, got {self.d}"
            )
        if self.variant == LOGISTIC and not self.theta >= 1:
            raise ParameterError(
                f"logistic parameter theta must be >= 1, got {self.theta}"
            )
        if self.variant != LOGISTIC:
            object.__setattr__(self, "theta", 1.0)

    @property
    def tag(self) -> str:
        if self.variant == LOGISTIC:
            return f"{LOGISTIC}({self.theta:g})"
        return self.variant


def parse_model(tag: str, d: int, theta: float = None) -> StdfModel:
    """`independence`, `comonotone`, `logistic(2.5)`, or `logistic` plus a theta."""
    match = MODEL_TAG.match(str(tag))
    if not match:
        raise ParameterError(f"cannot parse model tag {tag!r}")

    variant = match["variant"]
    if match["theta"] is not None:
        try:
            theta = float(match["theta"])
        except ValueError as exception:
            raise ParameterError(
                f"cannot parse theta in model tag {tag!r}"
            ) from exception

    if variant == LOGISTIC and theta is None:
        raise ParameterError("logistic model needs theta, e.g. 'logistic(2)'")

    return StdfModel(variant, int(d), 1.0 if theta is None else float(theta))


def _as_points(model: StdfModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.d,):
        raise DomainError(
            f"expected points of dimension {model.d}, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("coordinates must be finite")
    return x


def eval_stdf(model: StdfModel, x) -> np.ndarray:
    """l(x) for x >= 0; vectorised over leading axes."""
    x = _as_points(model, x)
    if np.any(x < 0):
        raise DomainError(
            f"stdf is defined on the nonnegative orthant, got {x[x < 0][0]}"
        )

    if model.variant == INDEPENDENCE:
        return x.sum(axis=-1)
    if model.variant == COMONOTONE:
        return x.max(axis=-1)

    # scale by the max so large theta does not overflow
    top = x.max(axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    ratio_sum = np.sum((x / safe) ** model.theta, axis=-1)
    scaled = top[..., 0] * ratio_sum ** (1.0 / model.theta)
    return np.where(top[..., 0] > 0, scaled, 0.0)


def copula(model: StdfModel, w) -> np.ndarray:
    """C(w) = P(W <= w) for the model's copula W (uniform margins), w in [0,1]^d."""
    w = np.clip(_as_points(model, w), 0.0, 1.0)

    if model.variant == INDEPENDENCE:
        return np.prod(w, axis=-1)
    if model.variant == COMONOTONE:
        return w.min(axis=-1)

    with np.errstate(divide="ignore"):
        minus_log = -np.log(w)
    exponent = np.sum(minus_log**model.theta, axis=-1) ** (1.0 / model.theta)
    return np.exp(-exponent)


def tilde_F(model: StdfModel, x) -> np.ndarray:
    """P(U^1 <= x_1 or ... or U^d <= x_d) = 1 - C(1 - x), computed without cancellation."""
    x = np.clip(_as_points(model, x), 0.0, 1.0)

    if model.variant == COMONOTONE:
        return x.max(axis=-1)

    with np.errstate(divide="ignore"):
        minus_log = -np.log1p(-x)
    if model.variant == INDEPENDENCE:
        return -np.expm1(-minus_log.sum(axis=-1))

    exponent = np.sum(minus_log**model.theta, axis=-1) ** (1.0 / model.theta)
    return -np.expm1(-exponent)


def _check_scale(t: float, x: np.ndarray):
    if not 0 < t <= 1:
        raise DomainError(f"t must lie in (0, 1], got {t}")
    if np.any(x < 0):
        raise DomainError("x must be componentwise nonnegative")
    if np.any(t * x > 1 + 1e-12):
        raise DomainError(f"t·x_j <= 1 violated: t={t}, max x_j={x.max()}")


def pre_limit_tail(model: StdfModel, t: float, x) -> np.ndarray:
    """t^-1 tilde_F(t x), the exact finite-t value whose limit as t -> 0 is l(x)."""
    x = _as_points(model, x)
    _check_scale(t, x)

    if model.variant == COMONOTONE:
        return x.max(axis=-1)

    return tilde_F(model, t * x) / t


def bias_term(model: StdfModel, t: float, x) -> np.ndarray:
    return np.abs(pre_limit_tail(model, t, x) - eval_stdf(model, x))


def sup_bias(model: StdfModel, t: float, T: float, resolution: int = 64) -> float:
    """max over a regular grid on [0,T]^d of |t^-1 tilde_F(t x) - l(x)|."""
    if model.variant == COMONOTONE:
        return 0.0

    per_axis = max(2, min(resolution, int(round(2e6 ** (1.0 / model.d)))))
    axis = np.linspace(0.0, T, per_axis + 1)
    grid = np.stack(np.meshgrid(*([axis] * model.d), indexing="ij"), axis=-1)
    return float(bias_term(model, t, grid).max())


def box_probability(model: StdfModel, lower, upper) -> float:
    """P(lower < W <= upper) for the copula W, by inclusion-exclusion over the 2^d corners."""
    lower = np.clip(np.asarray(lower, dtype=float), 0.0, 1.0)
    upper = np.clip(np.asarray(upper, dtype=float), 0.0, 1.0)
    if np.any(upper <= lower):
        return 0.0

    total = 0.0
    for corner in itertools.product((0, 1), repeat=model.d):
        picks = np.array(corner, dtype=bool)
        point = np.where(picks, lower, upper)
        sign = -1.0 if picks.sum() % 2 else 1.0
        total += sign * float(copula(model, point))

    return max(total, 0.0)


def diagonal_level(model: StdfModel, mass: float) -> float:
    """The w with C(w, ..., w) = mass."""
    if not 0 < mass < 1:
        raise DomainError(f"diagonal level needs a mass in (0, 1), got {mass}")

    if model.variant == INDEPENDENCE:
        return mass ** (1.0 / model.d)
    if model.variant == COMONOTONE:
        return mass
    # C(w·1) = w^(d^(1/θ))
    return mass ** (model.d ** (-1.0 / model.theta))
