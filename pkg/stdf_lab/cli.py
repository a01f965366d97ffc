"""Batch command line: simulate, estimate, converge, bound, rademacher, classify.

Every run writes its outputs under --out (default $STDF_LAB_OUT_DIR) with a file stem
derived from the resolved configuration, plus a manifest that can be passed back as
--config to replay the run.
"""
import argparse
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from opentelemetry import trace
from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor

from . import classification, concentration_lab, deviation_harness
from .config import (
    DEFAULT_WORKERS,
    LOG_LEVEL,
    OTLP_ENDPOINT,
    OUT_DIR,
    load_config,
    merge_overrides,
    optional,
    otlp_headers,
    require,
)
from .decorator import start_as_current_span
from .empirical_core import (
    build_ranks,
    jitter_ties,
    lattice_index,
    lattice_surface,
    surface_counts,
)
from .errors import ConfigurationError, DomainError, StdfLabError
from .reports import RunManifest, save_json, write_deviation_report, write_frame
from .samplers import (
    GeneratorSpec,
    generate,
    parse_margin,
    read_sample_csv,
    write_sample_csv,
)
from .stdf_oracles import parse_model
from .streams import check_seed, rng_for
from .version import get_config_hash, get_version

LOGGER = logging.getLogger(__name__)

tracer = trace.get_tracer(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s  %(module)s:%(funcName)s %(message)s"
MAX_SURFACE_CELLS = 5_000_000

BOUND_KINDS = (
    "theorem1",
    "remark1",
    "remark2",
    "theorem2",
    "lemma2",
    "maximal",
    "bernstein",
    "effective",
    "compare",
)

# (inputs, outputs, resolved config)
CommandResult = Tuple[List[str], List[str], Dict[str, Any]]


def _ints(text: str) -> List[int]:
    return [int(part) for part in str(text).split(",") if part.strip()]


def _strings(text: str) -> List[str]:
    return [part.strip() for part in str(text).split(",") if part.strip()]


def _schedule(text: str) -> List[List[float]]:
    """`2000:0.05,8000:0.05` into [[2000, 0.05], [8000, 0.05]]."""
    points = []
    for item in _strings(text):
        n, _, alpha = item.partition(":")
        points.append([int(n), float(alpha)])
    return points


def _listed(config: Dict[str, Any], field: str, parse: Callable) -> Optional[List]:
    value = config.get(field)
    if value is None:
        return None
    if isinstance(value, str):
        return parse(value)
    return list(value)


def _stem(subcommand: str, resolved: Dict[str, Any]) -> str:
    digest = get_config_hash({"subcommand": subcommand, **resolved})
    return f"{subcommand}-{digest}"


def _model(config: Dict[str, Any]):
    d = require(config, "d", int)
    theta = optional(config, "theta", float, None)
    return parse_model(require(config, "model", str), d, theta)


def _model_fields(model) -> Dict[str, Any]:
    return {"model": model.variant, "d": model.d, "theta": model.theta}


@start_as_current_span(tracer=tracer, span_name="cmd_simulate")
def cmd_simulate(
    config: Dict[str, Any], out_dir: Path, workers: int, span=None
) -> CommandResult:
    model = _model(config)
    margins = _listed(config, "margins", _strings) or ["uniform"]
    spec = GeneratorSpec(
        model, require(config, "n", int), config.get("seed"), tuple(margins)
    )
    header = bool(config.get("header", False))
    span.set_attributes({"app.model": model.tag, "app.n": spec.n, "app.d": spec.d})

    resolved = {
        **_model_fields(model),
        "n": spec.n,
        "margins": list(spec.margins),
        "seed": spec.seed,
        "header": header,
    }
    path = out_dir / f"{_stem('simulate', resolved)}.csv"
    path = write_sample_csv(generate(spec), path, header)
    LOGGER.info("Simulated %d×%d %s sample", spec.n, spec.d, model.tag)
    return [], [str(path)], resolved


def _surface_frame(axes: Sequence[np.ndarray], values: np.ndarray) -> pd.DataFrame:
    mesh = np.meshgrid(*axes, indexing="ij")
    columns = {f"x{j + 1}": axis.ravel() for j, axis in enumerate(mesh)}
    columns["l_n"] = values.ravel()
    return pd.DataFrame(columns)


@start_as_current_span(tracer=tracer, span_name="cmd_estimate")
def cmd_estimate(
    config: Dict[str, Any], out_dir: Path, workers: int, span=None
) -> CommandResult:
    data = require(config, "data", str)
    k = require(config, "k", int)
    T = require(config, "T", float)
    grid = optional(config, "grid", int, None)
    jitter = optional(config, "jitter", float, None)

    sample = read_sample_csv(data)
    resolved = {"data": data, "k": k, "T": T, "grid": grid, "jitter": jitter}
    if jitter:
        resolved["seed"] = check_seed(config.get("seed"))
        sample = jitter_ties(sample, resolved["seed"], jitter)

    ranks = build_ranks(sample)
    span.set_attributes({"app.n": ranks.n, "app.d": ranks.d, "app.k": k, "app.T": T})

    if grid is None:
        top = int(lattice_index(k, T))
        if (top + 1) ** ranks.d > MAX_SURFACE_CELLS:
            raise ConfigurationError(
                f"the 1/k lattice has {(top + 1) ** ranks.d} points for d={ranks.d}; "
                "declare a coarser grid"
            )
        levels, values = lattice_surface(ranks, k, T)
        frame = _surface_frame([levels / k] * ranks.d, values)
    else:
        axis = np.linspace(0.0, T, grid + 1)
        if k * T > ranks.n:
            raise DomainError(f"k·T <= n violated: k={k}, T={T}, n={ranks.n}")
        values = surface_counts(ranks, [lattice_index(k, axis)] * ranks.d) / k
        frame = _surface_frame([axis] * ranks.d, values)

    path = write_frame(frame, out_dir / f"{_stem('estimate', resolved)}.surface.csv")
    return [data], [str(path)], resolved


def _experiment_config(config: Dict[str, Any]) -> deviation_harness.ExperimentConfig:
    return deviation_harness.ExperimentConfig(
        model=_model(config),
        n=require(config, "n", int),
        k_schedule=tuple(_listed(config, "k_schedule", _ints) or ()),
        T=require(config, "T", float),
        delta=optional(config, "delta", float, 0.05),
        trials=require(config, "trials", int),
        seed=config.get("seed"),
        grid_resolution=optional(config, "grid", int, None),
        C=optional(config, "C", float, 1.0),
        margins=tuple(_listed(config, "margins", _strings) or ["uniform"]),
    )


@start_as_current_span(tracer=tracer, span_name="cmd_converge")
def cmd_converge(
    config: Dict[str, Any], out_dir: Path, workers: int, span=None
) -> CommandResult:
    experiment = _experiment_config(config)
    pilot_seed = config.get("pilot_seed")
    pilot_trials = optional(config, "pilot_trials", int, 100)
    pilot_delta = optional(config, "pilot_delta", float, None)
    events = optional(config, "events", int, 0)
    span.set_attributes({"app.model": experiment.model.tag, "app.n": experiment.n})

    resolved = {
        **experiment.to_dict(),
        **_model_fields(experiment.model),
        "grid": experiment.grid_resolution,
        "pilot_seed": None if pilot_seed is None else check_seed(pilot_seed),
        "pilot_trials": pilot_trials,
        "pilot_delta": pilot_delta,
        "events": events,
    }
    resolved.pop("grid_resolution")
    stem = _stem("converge", resolved)

    report = deviation_harness.run_rate_experiment(experiment, workers=workers)
    outputs = write_deviation_report(report, out_dir, stem)

    if pilot_seed is not None:
        coverage = deviation_harness.run_coverage_experiment(
            experiment,
            resolved["pilot_seed"],
            pilot_trials,
            pilot_delta=pilot_delta,
            workers=workers,
        )
        frame = pd.DataFrame(
            [
                {
                    "k": k,
                    "constant": result.constant,
                    "coverage": result.coverage,
                    "trials": result.trials,
                    "delta": result.delta,
                }
                for k, result in coverage.items()
            ]
        )
        outputs.append(write_frame(frame, out_dir / f"{stem}.coverage.csv"))

        lemma = deviation_harness.run_lemma2_experiment(
            experiment,
            resolved["pilot_seed"],
            pilot_trials,
            pilot_delta=pilot_delta,
            workers=workers,
        )
        outputs.extend(write_deviation_report(lemma, out_dir, f"{stem}.lemma2"))

    if events > 0:
        frame = deviation_harness.run_event_checks(experiment, events, workers=workers)
        outputs.append(write_frame(frame, out_dir / f"{stem}.events.csv"))

    return [], [str(path) for path in outputs], resolved


def _bound_value(kind: str, config: Dict[str, Any]) -> float:
    delta = require(config, "delta", float)
    C = optional(config, "C", float, 1.0)

    if kind in ("theorem2", "lemma2"):
        k = require(config, "k", int)
        d = require(config, "d", int)
        T = require(config, "T", float)
        if kind == "theorem2":
            bias = optional(config, "bias", float, 0.0)
            return deviation_harness.theorem2_bound(k, d, T, delta, C, bias)
        return deviation_harness.lemma2_bound(k, d, T, delta, C)

    n, p = require(config, "n", int), require(config, "p", float)
    if kind == "bernstein":
        return concentration_lab.bernstein_radius(delta, n, p)
    if kind == "maximal":
        rademacher = require(config, "rademacher", float)
        return concentration_lab.maximal_deviation_bound(p, n, delta, rademacher)

    d = optional(config, "d", int, 1)
    V = optional(config, "V", int, d)
    params = concentration_lab.BoundParams(n, d, V, p, delta, C)
    if kind == "effective":
        return concentration_lab.effective_sample_size_bound(n, p, params.V, delta)
    return {
        "theorem1": concentration_lab.theorem1_bound,
        "remark1": concentration_lab.remark1_bound,
        "remark2": concentration_lab.remark2_bound,
    }[kind](params)


@start_as_current_span(tracer=tracer, span_name="cmd_bound")
def cmd_bound(
    config: Dict[str, Any], out_dir: Path, workers: int, span=None
) -> CommandResult:
    kind = require(config, "kind", str)
    if kind not in BOUND_KINDS:
        raise ConfigurationError(
            f"unknown bound kind '{kind}', expected one of {list(BOUND_KINDS)}"
        )
    span.set_attribute("app.bound", kind)

    fields = ("n", "d", "V", "p", "delta", "C", "k", "T", "bias", "rademacher", "ns")
    resolved = {"kind": kind}
    resolved.update(
        {name: config[name] for name in fields if config.get(name) is not None}
    )
    stem = _stem("bound", resolved)

    if kind == "compare":
        ns = _listed(config, "ns", _ints) or [10**2, 10**3, 10**4, 10**5]
        resolved["ns"] = ns
        stem = _stem("bound", resolved)
        frame = concentration_lab.bound_comparison(
            require(config, "p", float),
            optional(config, "V", int, optional(config, "d", int, 1)),
            require(config, "delta", float),
            optional(config, "C", float, 1.0),
            ns,
        )
        return [], [str(write_frame(frame, out_dir / f"{stem}.csv"))], resolved

    value = _bound_value(kind, config)
    LOGGER.info("%s bound = %.6g", kind, value)
    path = out_dir / f"{stem}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"{kind},{value:.17g}\n", encoding="utf-8")
    return [], [str(path)], resolved


@start_as_current_span(tracer=tracer, span_name="cmd_rademacher")
def cmd_rademacher(
    config: Dict[str, Any], out_dir: Path, workers: int, span=None
) -> CommandResult:
    model = _model(config)
    T = require(config, "T", float)
    trials = require(config, "trials", int)
    seed = check_seed(config.get("seed"))
    grid = optional(config, "grid", int, None)
    pairs = optional(config, "pairs", int, 0)
    delta = optional(config, "delta", float, 0.05)
    ns = _listed(config, "ns", _ints) or [require(config, "n", int)]
    scale = optional(config, "scale", float, None)
    pilot_seed = config.get("pilot_seed")
    pilot_trials = optional(config, "pilot_trials", int, 100)
    pilot_delta = optional(config, "pilot_delta", float, None)

    if model.d >= 3 and grid is None:
        raise ConfigurationError(
            f"d={model.d} has no exact cell scan; pass --grid with a resolution"
        )
    if scale is None:
        scale = require(config, "k", int) / ns[0]
    span.set_attributes({"app.model": model.tag, "app.trials": trials})

    resolved = {
        **_model_fields(model),
        "ns": ns,
        "scale": scale,
        "T": T,
        "trials": trials,
        "seed": seed,
        "grid": grid,
        "pairs": pairs,
        "delta": delta,
        "pilot_seed": None if pilot_seed is None else check_seed(pilot_seed),
        "pilot_trials": pilot_trials,
        "pilot_delta": pilot_delta,
    }
    stem = _stem("rademacher", resolved)

    per_trial, rows = [], []
    for n in ns:
        k = max(1, int(round(scale * n)))
        cls = concentration_lab.RectClassSpec(model.d, k, n, T)
        estimate = concentration_lab.relative_rademacher(
            model, cls, trials, seed, grid_resolution=grid, workers=workers
        )
        per_trial.append(
            concentration_lab.trial_frame(
                estimate.values, cls, delta, "relative_rademacher"
            )
        )
        row = {
            "n": n,
            "k": cls.k,
            "p": estimate.p,
            "relative_rademacher": estimate.value,
            "stderr": estimate.stderr,
            "plain_rademacher": estimate.plain,
            "scaled": estimate.scaled,
        }

        if pairs:
            q = concentration_lab.class_complexity_q(
                model, cls, pairs, seed, workers=workers
            )
            row.update(
                q=q.value,
                q_stderr=q.stderr,
                q_within=bool(q.value <= 2 * estimate.p + 3 * q.stderr),
            )

        if pilot_seed is not None:
            coverage = concentration_lab.run_theorem1_coverage(
                cls,
                model,
                delta,
                trials,
                seed,
                resolved["pilot_seed"],
                pilot_trials,
                grid_resolution=grid,
                workers=workers,
                pilot_delta=pilot_delta,
            )
            per_trial.append(
                concentration_lab.trial_frame(
                    coverage.statistics, cls, delta, "sup_deviation"
                )
            )
            row.update(constant=coverage.constant, coverage=coverage.coverage)

        rows.append(row)

    summary = pd.DataFrame(rows)
    ratio = summary["scaled"].max() / summary["scaled"].min()
    LOGGER.info("Scaled relative Rademacher max/min ratio over n: %.3f", ratio)

    outputs = [
        write_frame(
            pd.concat(per_trial, ignore_index=True), out_dir / f"{stem}.trials.csv"
        ),
        write_frame(summary, out_dir / f"{stem}.summary.csv"),
    ]
    return [], [str(path) for path in outputs], resolved


def _classification_config(
    config: Dict[str, Any]
) -> classification.ClassificationConfig:
    model = _model(config)
    margin = optional(config, "margin", str, "uniform")
    schedule = _listed(config, "schedule", _schedule)
    if not schedule:
        raise ConfigurationError(
            "config: missing required field 'schedule' (n:alpha,...)"
        )

    smallest = min(alpha for _, alpha in schedule)
    rule_level = optional(config, "rule_level", float, 1 - smallest / 2)
    threshold = float(parse_margin(margin).forward(np.array([rule_level]))[0])
    rule = classification.AxisThreshold(
        optional(config, "rule_coordinate", int, 0), threshold, 1
    )
    generator = classification.LabeledGenerator(
        model, rule, optional(config, "noise", float, 0.1), margin
    )

    family_size = optional(config, "family_size", int, 20)
    family = classification.tail_threshold_family(
        generator, smallest, per_coordinate=max(1, family_size // model.d)
    )
    bounds = _listed(
        config, "region_bounds", lambda text: [float(b) for b in _strings(text)]
    )
    return classification.ClassificationConfig(
        generator=generator,
        family=family,
        schedule=tuple(tuple(point) for point in schedule),
        trials=require(config, "trials", int),
        seed=config.get("seed"),
        norm=optional(config, "norm", str, "l2"),
        delta=optional(config, "delta", float, 0.05),
        region_bounds=None if bounds is None else tuple(bounds),
        reference_draws=optional(config, "reference_draws", int, 10**7),
    )


@start_as_current_span(tracer=tracer, span_name="cmd_classify")
def cmd_classify(
    config: Dict[str, Any], out_dir: Path, workers: int, span=None
) -> CommandResult:
    experiment = _classification_config(config)
    appendix_trials = optional(config, "appendix_b", int, 0)
    appendix_n = optional(config, "appendix_n", int, 1000)
    span.set_attributes(
        {"app.trials": experiment.trials, "app.family": len(experiment.family)}
    )

    resolved = {
        **experiment.to_dict(),
        **_model_fields(experiment.generator.model),
        "rule_coordinate": experiment.generator.rule.coordinate,
        "rule_threshold": experiment.generator.rule.threshold,
        "rule_level": config.get("rule_level"),
        "appendix_b": appendix_trials,
        "appendix_n": appendix_n,
    }
    stem = _stem("classify", resolved)

    report = classification.rate_experiment_classification(experiment, workers=workers)
    outputs = write_deviation_report(report, out_dir, stem)
    records = experiment.family.to_records()
    outputs.append(save_json(out_dir / f"{stem}.family.json", records))

    if appendix_trials > 0:
        alpha = experiment.schedule[0][1]
        region = experiment.region_at(alpha)
        pair = classification.ClassifierFamily(
            experiment.family.members[:2], vc_dimension=2
        )
        rows = []
        for trial in range(appendix_trials):
            rng = rng_for(experiment.seed, "appendix-b", trial)
            data = experiment.generator.sample(appendix_n, rng)
            check = classification.appendix_b_decomposition_check(
                data, pair, region, experiment.generator
            )
            rows.append({"trial": trial, **asdict(check)})
        path = out_dir / f"{stem}.appendix_b.csv"
        outputs.append(write_frame(pd.DataFrame(rows), path))

    return [], [str(path) for path in outputs], resolved


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "converge": cmd_converge,
    "bound": cmd_bound,
    "rademacher": cmd_rademacher,
    "classify": cmd_classify,
}


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", help="JSON run configuration or a run manifest to replay"
    )
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument(
        "--workers", type=int, help="worker processes, default all cores"
    )
    common.add_argument("--out", help="output directory, default $STDF_LAB_OUT_DIR")
    common.add_argument(
        "--verbose", action="store_true", default=None, help="debug logging"
    )
    return common


def _model_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--model", help="independence | comonotone | logistic(θ)")
    parser.add_argument("--theta", type=float)
    parser.add_argument("--d", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="stdf-lab",
        description="Empirical stable tail dependence estimation and experiments.",
    )
    parser.add_argument("--version", action="version", version=get_version())
    subcommands = parser.add_subparsers(dest="subcommand", required=True)

    simulate = subcommands.add_parser(
        "simulate", parents=[common], help="write a synthetic sample"
    )
    _model_flags(simulate)
    simulate.add_argument("--n", type=int)
    simulate.add_argument(
        "--margins", help="one tag, or one per column, comma separated"
    )
    simulate.add_argument("--header", action="store_true", default=None)

    estimate = subcommands.add_parser(
        "estimate", parents=[common], help="tabulate l_n from a CSV"
    )
    estimate.add_argument("--data")
    estimate.add_argument("--k", type=int)
    estimate.add_argument("--T", type=float)
    estimate.add_argument("--grid", type=int)
    estimate.add_argument(
        "--jitter", type=float, help="break ties at this relative scale"
    )

    converge = subcommands.add_parser(
        "converge", parents=[common], help="sup |l_n - l| across k"
    )
    _model_flags(converge)
    converge.add_argument("--n", type=int)
    converge.add_argument("--k-schedule", dest="k_schedule")
    converge.add_argument("--T", type=float)
    converge.add_argument("--delta", type=float)
    converge.add_argument("--trials", type=int)
    converge.add_argument("--grid", type=int)
    converge.add_argument("--C", type=float)
    converge.add_argument("--margins")
    converge.add_argument("--pilot-seed", dest="pilot_seed", type=int)
    converge.add_argument("--pilot-trials", dest="pilot_trials", type=int)
    converge.add_argument("--pilot-delta", dest="pilot_delta", type=float)
    converge.add_argument("--events", type=int, help="trials per k for event checks")

    bound = subcommands.add_parser(
        "bound", parents=[common], help="evaluate a deviation bound"
    )
    bound.add_argument("--kind", choices=BOUND_KINDS)
    for name, kind in (
        ("n", int),
        ("d", int),
        ("V", int),
        ("p", float),
        ("delta", float),
        ("C", float),
        ("k", int),
        ("T", float),
        ("bias", float),
        ("rademacher", float),
    ):
        bound.add_argument(f"--{name}", type=kind)
    bound.add_argument("--ns", help="comma separated n values for --kind compare")

    rademacher = subcommands.add_parser(
        "rademacher", parents=[common], help="relative Rademacher average and q"
    )
    _model_flags(rademacher)
    rademacher.add_argument("--n", type=int)
    rademacher.add_argument("--ns", help="comma separated n values")
    rademacher.add_argument("--k", type=int)
    rademacher.add_argument("--scale", type=float, help="k/n held fixed across --ns")
    rademacher.add_argument("--T", type=float)
    rademacher.add_argument("--trials", type=int)
    rademacher.add_argument("--grid", type=int)
    rademacher.add_argument("--pairs", type=int)
    rademacher.add_argument("--delta", type=float)
    rademacher.add_argument("--pilot-seed", dest="pilot_seed", type=int)
    rademacher.add_argument("--pilot-trials", dest="pilot_trials", type=int)
    rademacher.add_argument("--pilot-delta", dest="pilot_delta", type=float)

    classify = subcommands.add_parser(
        "classify", parents=[common], help="extreme classification"
    )
    _model_flags(classify)
    classify.add_argument("--margin")
    classify.add_argument("--schedule", help="n:alpha pairs, comma separated")
    classify.add_argument("--trials", type=int)
    classify.add_argument("--norm", choices=sorted(classification.NORM_ORDERS))
    classify.add_argument("--noise", type=float)
    classify.add_argument("--rule-coordinate", dest="rule_coordinate", type=int)
    classify.add_argument("--rule-level", dest="rule_level", type=float)
    classify.add_argument("--family-size", dest="family_size", type=int)
    classify.add_argument("--region-bounds", dest="region_bounds")
    classify.add_argument("--reference-draws", dest="reference_draws", type=int)
    classify.add_argument("--delta", type=float)
    classify.add_argument("--appendix-b", dest="appendix_b", type=int)
    classify.add_argument("--appendix-n", dest="appendix_n", type=int)

    return parser


RUNTIME_FLAGS = frozenset({"config", "workers", "out", "verbose", "subcommand"})


def configure_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else LOG_LEVEL, format=LOG_FORMAT
    )


def configure_tracing() -> TracerProvider:
    provider = TracerProvider()
    if OTLP_ENDPOINT:
        exporter = OTLPSpanExporter(endpoint=OTLP_ENDPOINT, headers=otlp_headers())
        provider.add_span_processor(BatchSpanProcessor(exporter))
    trace.set_tracer_provider(provider)
    return provider


def run(argv: Optional[Sequence[str]] = None) -> List[str]:
    """Parse, resolve and execute one subcommand; returns the written paths."""
    args = build_parser().parse_args(argv)
    flags = {
        key: value for key, value in vars(args).items() if key not in RUNTIME_FLAGS
    }

    config = merge_overrides(load_config(args.config), flags)
    workers = args.workers or DEFAULT_WORKERS
    out_dir = Path(args.out or config.pop("out", None) or OUT_DIR)

    started = time.monotonic()
    inputs, outputs, resolved = COMMANDS[args.subcommand](config, out_dir, workers)

    manifest = RunManifest(
        subcommand=args.subcommand,
        config=resolved,
        seed=resolved.get("seed"),
        inputs=inputs,
        outputs=outputs,
        duration_s=round(time.monotonic() - started, 3),
    )
    stem = Path(outputs[0]).name.split(".")[0] if outputs else args.subcommand
    return outputs + [str(manifest.write(out_dir, stem))]


def main(argv: Optional[Sequence[str]] = None) -> int:
    verbose = "--verbose" in (sys.argv[1:] if argv is None else argv)
    configure_logging(verbose)
    provider = configure_tracing()

    try:
        for path in run(argv):
            print(path)
        return 0
    except StdfLabError as exception:
        LOGGER.error("%s: %s", type(exception).__name__, exception)
        return exception.exit_code
    except SystemExit as exception:
        return int(exception.code or 0)
    except Exception:  # pylint: disable=broad-except
        LOGGER.exception("Internal error")
        return 1
    finally:
        provider.shutdown()
