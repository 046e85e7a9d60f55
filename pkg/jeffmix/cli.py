import argparse
from dataclasses import dataclass, field, fields
import json
import logging
import os
from pathlib import Path
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from sqlalchemy.exc import OperationalError

from .db import DEFAULT_DB_PATH, DBFisherCache
from .fisher import (
    FisherCache,
    IntegrationSpec,
    UnknownConfig,
    fisher_matrix,
    integration_methods,
    method_by_name,
)
from .formats import jsonl, read_text, write_atomic, write_json
from .harness import (
    NARROW_BENCHMARK_MODEL,
    WIDE_BENCHMARK_MODEL,
    ExperimentSpec,
    GridAxis,
    GridSpec,
    check_grid,
    compare_integrators,
    default_max_workers,
    posterior_grid,
    prior_grid,
    properness_probe,
    random_start,
    replication_seeds,
    run_experiment,
)
from .jeffmix import ConfigError
from .jeffmix import version as jeffmix_version
from .mcmc import McmcConfig, diagnose, run_rwmh
from .mixture import DataSet, MixtureModel, sample
from .posterior import LogPosterior, prior_by_name, prior_kinds
from .priors import (
    NEG_INFINITY,
    DeltaConditioning,
    conditional_delta_log_prior,
    jeffreys_log_prior,
)

logger = logging.getLogger(__name__)

PROBE_DENSITIES = ("delta-conditional", "weights-only", "standard-normal")
PATH_ARGUMENTS = ("model", "spec", "data", "grid", "output_dir")


@dataclass
class Job:
    """A validated invocation: `run` computes and returns file name -> file content"""

    run: Callable[[], Dict[str, str]]
    seeds: Dict[str, int] = field(default_factory=dict)
    compressed: Tuple[str, ...] = ()


def parse_float_list(text: str, field_name: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(field_name, f"expected comma-separated numbers, not {text!r}")
    if not values:
        raise ConfigError(field_name, "expected at least one value")
    return values


def parse_elements(text: str) -> List[Tuple[int, int]]:
    elements = []
    for pair in text.split(";"):
        parts = pair.split(",")
        if len(parts) != 2:
            raise ConfigError("elements", f"expected a;b pairs like 0,0;0,1 not {text!r}")
        try:
            elements.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ConfigError("elements", f"expected integer indices, not {pair!r}")
    return elements


def load_json(path: str, field_name: str) -> Any:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except OSError as e:
        raise ConfigError(field_name, f"cannot read {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise ConfigError(field_name, f"{path} is not valid JSON: {e!s}")


def load_model(path: Optional[str], field_name: str = "model") -> MixtureModel:
    if path is None:
        raise ConfigError(field_name, "--model is required")
    return MixtureModel.from_obj(load_json(path, field_name), field_name)


def load_config(name: Optional[str]) -> UnknownConfig:
    if name is None:
        raise ConfigError("config", "--config is required")
    try:
        return UnknownConfig.parse(name)
    except ValueError as e:
        raise ConfigError("config", str(e))


def integration_spec(
    args: argparse.Namespace, base: Optional[IntegrationSpec] = None
) -> IntegrationSpec:
    """Builds an IntegrationSpec from `base` with the command-line overrides applied"""
    if base is None:
        base = IntegrationSpec()
    overrides = {
        "points": args.points,
        "draws": args.draws,
        "rel_tol": args.rel_tol,
        "sigma_switch": args.sigma_switch,
    }
    if args.method is None:
        method_name = base.method.name
    else:
        method_name = args.method
    try:
        cls = method_by_name(method_name)
    except KeyError as e:
        raise ConfigError("method", str(e.args[0]))
    names = {f.name for f in fields(cls)}  # type: ignore
    kwargs: Dict[str, Any] = {}
    if base.method.name == method_name:
        kwargs.update(
            {f.name: getattr(base.method, f.name) for f in fields(base.method)}  # type: ignore
        )
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in names:
            raise ConfigError(key.replace("_", "-"), f"does not apply to the {method_name} method")
        kwargs[key] = value
    if args.seed is not None and "seed" in names:
        kwargs["seed"] = args.seed
    try:
        method = cls(**kwargs)  # type: ignore
        spec_kwargs: Dict[str, Any] = {"method": method}
        spec_kwargs["coverage"] = base.coverage if args.coverage is None else args.coverage
        spec_kwargs["density_floor"] = (
            base.density_floor if args.density_floor is None else args.density_floor
        )
        spec_kwargs["bounds"] = base.bounds
        return IntegrationSpec(**spec_kwargs)
    except ValueError as e:
        raise ConfigError("integration", str(e))


def load_data(args: argparse.Namespace, model: MixtureModel, seed: int) -> DataSet:
    if args.data is not None:
        try:
            return DataSet.from_csv(read_text(args.data))
        except OSError as e:
            raise ConfigError("data", f"cannot read {args.data}: {e.strerror}")
    if args.sample_size is None:
        raise ConfigError("data", "either --data or --sample-size is required")
    if args.sample_size < 0:
        raise ConfigError("sample-size", "must not be negative")
    return sample(model, args.sample_size, seed)


def grid_spec(args: argparse.Namespace) -> GridSpec:
    if args.grid is not None:
        grid = GridSpec.from_obj(load_json(args.grid, "grid"))
    elif not args.axis:
        raise ConfigError("grid", "either --grid or at least one --axis is required")
    else:
        fixed: Dict[str, float] = {}
        for item in args.fixed or ():
            name, sep, value = item.partition("=")
            if not sep:
                raise ConfigError("fixed", f"expected NAME=VALUE, not {item!r}")
            try:
                fixed[name] = float(value)
            except ValueError:
                raise ConfigError(f"fixed {name}", f"{value!r} is not a number")
        try:
            grid = GridSpec(tuple(GridAxis.parse(a) for a in args.axis), fixed, "log")
        except ValueError as e:
            raise ConfigError("grid", str(e))
    if args.scale is not None:
        try:
            grid = GridSpec(grid.axes, grid.fixed, args.scale)
        except ValueError as e:
            raise ConfigError("scale", str(e))
    return grid


def check_prior(name: str, config: UnknownConfig):
    try:
        prior_by_name(name).check(config)
    except KeyError as e:
        raise ConfigError("prior", str(e.args[0]))
    except ValueError as e:
        raise ConfigError("prior", str(e))


def prepare_fisher(args: argparse.Namespace, cache: FisherCache) -> Job:
    model = load_model(args.model)
    config = load_config(args.config)
    try:
        config.check(model)
    except ValueError as e:
        raise ConfigError("config", str(e))
    spec = integration_spec(args)

    def run() -> Dict[str, str]:
        with cache:
            fisher = fisher_matrix(model, config, spec, cache=cache)
        sys.stderr.write(f"log det = {fisher.logdet():.17g}\n")
        obj = fisher.to_obj()
        obj["logdet"] = fisher.logdet()
        obj["integration"] = spec.to_obj()
        return {"fisher.csv": fisher.to_csv(), "fisher.json": json.dumps(obj, indent=2) + "\n"}

    seeds = {"integration": spec.method.seed} if hasattr(spec.method, "seed") else {}
    return Job(run, seeds=seeds)


def prepare_grid(args: argparse.Namespace, cache: FisherCache, posterior: bool) -> Job:
    model = load_model(args.model)
    config = load_config(args.config)
    check_prior(args.prior, config)
    grid = grid_spec(args)
    spec = integration_spec(args)
    seed = 0 if args.seed is None else args.seed
    data = load_data(args, model, seed) if posterior else DataSet()
    check_grid(prior_by_name(args.prior).layout(model, config), grid)

    def run() -> Dict[str, str]:
        with cache:
            if posterior:
                result = posterior_grid(model, config, data, grid, spec, args.prior, cache)
            else:
                result = prior_grid(model, config, grid, spec, args.prior, cache)
        return {"grid.csv": result.to_csv()}

    return Job(run, seeds={"data": seed} if posterior else {})


def prepare_mcmc(args: argparse.Namespace, cache: FisherCache) -> Job:
    model = load_model(args.model)
    config = load_config(args.config)
    check_prior(args.prior, config)
    spec = integration_spec(args)
    master = 0 if args.seed is None else args.seed
    n = args.sample_size if args.data is None and args.sample_size is not None else 0
    data_seed, init_seed, chain_seed = replication_seeds(master, n, 0)
    data = load_data(args, model, data_seed)
    if data.n < 2:
        raise ConfigError("data", f"the posterior needs at least 2 observations, not {data.n}")
    try:
        mcmc = McmcConfig(
            iterations=args.iterations if args.iterations is not None else 20_000,
            burnin=args.burnin if args.burnin is not None else 5_000,
            adapt_window=args.adapt_window,
            seed=chain_seed,
        )
    except ValueError as e:
        raise ConfigError("mcmc", str(e))
    prior = prior_by_name(args.prior)
    layout = prior.layout(model, config)

    def run() -> Dict[str, str]:
        target = LogPosterior(layout, prior, data, spec)
        init = random_start(
            layout, target, data, model, np.random.default_rng(init_seed), args.init_gap
        )
        chain = run_rwmh(target, init, layout, mcmc, progress=True)
        diagnostics = diagnose(chain, layout, model, data)
        return {
            "chain.csv.gz": chain.to_csv(),
            "diagnostics.jsonl": jsonl([diagnostics.to_obj()]),
        }

    return Job(
        run,
        seeds={"master": master, "data": data_seed, "init": init_seed, "chain": chain_seed},
        compressed=("chain.csv.gz",),
    )


def prepare_replicate(args: argparse.Namespace, cache: FisherCache) -> Job:
    if args.spec is None:
        raise ConfigError("spec", "--spec is required")
    spec = ExperimentSpec.from_obj(load_json(args.spec, "spec"))
    if args.full_scale:
        spec = spec.full_scale()
    overrides: Dict[str, Any] = {}
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.sample_sizes is not None:
        sizes = parse_float_list(args.sample_sizes, "sample-sizes")
        overrides["sample_sizes"] = tuple(int(v) for v in sizes)
    mcmc_overrides = {}
    if args.iterations is not None:
        mcmc_overrides["iterations"] = args.iterations
    if args.burnin is not None:
        mcmc_overrides["burnin"] = args.burnin
    try:
        if mcmc_overrides:
            overrides["mcmc"] = McmcConfig.from_obj({**spec.mcmc.to_obj(), **mcmc_overrides})
        overrides["integration"] = integration_spec(args, spec.integration)
        spec = ExperimentSpec.from_obj({**spec.to_obj(), **_as_obj(overrides)})
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("spec", str(e))
    max_workers = args.max_workers if args.max_workers is not None else default_max_workers()

    def run() -> Dict[str, str]:
        report = run_experiment(spec, max_workers=max_workers)
        for row in report.rows:
            sys.stderr.write(
                f"n={row.sample_size}: accept {row.avg_accept_rate:.3f}, "
                f"divergent {row.prop_divergent_means:.2f}, stuck {row.prop_stuck_sigma:.2f}, "
                f"median loglik ratio {row.median_loglik_ratio:.4f}\n"
            )
        return {
            "report.csv": report.to_csv(),
            "diagnostics.jsonl": report.diagnostics_jsonl(),
            "spec.json": json.dumps(spec.to_obj(), indent=2, sort_keys=True) + "\n",
        }

    return Job(run, seeds={"master": spec.master_seed})


def _as_obj(overrides: Dict[str, Any]) -> Dict[str, Any]:
    ret = {}
    for key, value in overrides.items():
        if hasattr(value, "to_obj"):
            ret[key] = value.to_obj()
        elif isinstance(value, tuple):
            ret[key] = list(value)
        else:
            ret[key] = value
    return ret


def prepare_probe(args: argparse.Namespace, cache: FisherCache) -> Job:
    if args.boxes is None:
        raise ConfigError("boxes", "--boxes is required")
    half_widths = parse_float_list(args.boxes, "boxes")
    if any(a <= 0 for a in half_widths) or sorted(half_widths) != half_widths:
        raise ConfigError("boxes", "half-widths must be positive and increasing")
    spec = integration_spec(args)
    density = args.density
    if density == "standard-normal":
        boxes = [[(-a, a)] for a in half_widths]

        def log_density(x: np.ndarray) -> float:
            return float(stats.norm.logpdf(x[0]))

    elif density == "delta-conditional":
        try:
            fixed = DeltaConditioning(
                loc=args.mu, scale=args.tau, scale_ratio=args.sigma, weight=args.p
            )
            fixed.model(0.0)
        except ValueError as e:
            raise ConfigError("delta-conditional", str(e))
        boxes = [[(-a, a)] for a in half_widths]

        def log_density(x: np.ndarray) -> float:
            return conditional_delta_log_prior(float(x[0]), fixed, spec)

    else:
        model = load_model(args.model)
        if model.k != 2:
            raise ConfigError("model", "the weights-only probe needs a two-component model")
        if half_widths[-1] > 0.5:
            raise ConfigError("boxes", "weights-only half-widths must not exceed 0.5")
        boxes = [[(0.5 - a, 0.5 + a)] for a in half_widths]

        def log_density(x: np.ndarray) -> float:
            p = float(x[0])
            if not 0 < p < 1:
                return NEG_INFINITY
            weighted = MixtureModel(model.components, (p, 1.0 - p))
            return jeffreys_log_prior(weighted, UnknownConfig.WEIGHTS_ONLY, spec)

    def run() -> Dict[str, str]:
        result = properness_probe(
            log_density, boxes, points=args.points_per_axis, rel_tol=args.plateau_tol, progress=True
        )
        sys.stderr.write(f"{density}: {result.classification}\n")
        return {"probe.csv": result.to_csv()}

    return Job(run)


def prepare_integrators(args: argparse.Namespace, cache: FisherCache) -> Job:
    if args.model is not None:
        models = [load_model(args.model)]
    else:
        models = [WIDE_BENCHMARK_MODEL, NARROW_BENCHMARK_MODEL]
    config = load_config(args.config)
    for model in models:
        try:
            config.check(model)
        except ValueError as e:
            raise ConfigError("config", str(e))
    elements = parse_elements(args.elements) if args.elements else None
    draw_grid = [int(v) for v in parse_float_list(args.draw_grid, "draw-grid")]
    if any(v < 2 for v in draw_grid):
        raise ConfigError("draw-grid", "every draw count must be at least 2")
    if args.repeats < 2:
        raise ConfigError("repeats", "at least two repeats are needed")
    master = 0 if args.seed is None else args.seed

    def run() -> Dict[str, str]:
        lines: List[str] = []
        for i, model in enumerate(models):
            comparison = compare_integrators(
                model,
                config,
                elements,
                draw_grid,
                repeats=args.repeats,
                points=args.points if args.points is not None else 550,
                rel_tol=args.rel_tol if args.rel_tol is not None else 1e-8,
                master_seed=master,
                progress=True,
            )
            csv_lines = comparison.to_csv().splitlines()
            if not lines:
                lines.append("model," + csv_lines[0])
            lines.extend(f"{i},{line}" for line in csv_lines[1:])
        return {"integrators.csv": "\n".join(lines) + "\n"}

    return Job(run, seeds={"master": master})


PREPARE = {
    "fisher": prepare_fisher,
    "prior-grid": lambda args, cache: prepare_grid(args, cache, posterior=False),
    "posterior-grid": lambda args, cache: prepare_grid(args, cache, posterior=True),
    "mcmc": prepare_mcmc,
    "replicate": prepare_replicate,
    "probe": prepare_probe,
    "integrators": prepare_integrators,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jeffmix",
        description="Jeffreys priors, MCMC and properness diagnostics for finite Gaussian mixtures",
    )
    parser.add_argument("--version", action="store_true", help="print jeffmix's version and exit")
    parser.add_argument(
        "--list", "-l", action="store_true", help="list integration methods and prior kinds"
    )
    parser.add_argument(
        "--replay",
        type=str,
        default=None,
        metavar="META_JSON",
        help="re-run the invocation recorded in a meta.json file",
    )
    parser.add_argument(
        "--replay-output-dir",
        type=str,
        default=None,
        help="with --replay, write the outputs here instead of the recorded output directory",
    )
    parser.add_argument(
        "--database",
        "-db",
        type=str,
        nargs="?",
        default=DEFAULT_DB_PATH,
        help='alternative path to load/store the Fisher matrix cache, or ":memory:" to keep it in '
        f"memory rather than reading/writing to disk (default is {DEFAULT_DB_PATH!s})",
    )
    parser.add_argument(
        "--clear-cache",
        action="store_true",
        help="clears the database specified by `--database` "
        "(equivalent to deleting the database file)",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress information")
    parser.add_argument("--debug", action="store_true", help="log debugging information")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--output-dir", "-o", type=str, default=".", help="directory for the output files"
    )
    common.add_argument("--seed", type=int, default=None, help="master random seed")
    common.add_argument(
        "--method",
        choices=sorted(integration_methods()),
        default=None,
        help="Fisher integration backend (default is auto)",
    )
    common.add_argument("--points", type=int, default=None, help="Riemann subintervals")
    common.add_argument("--draws", type=int, default=None, help="Monte Carlo draws")
    common.add_argument("--rel-tol", type=float, default=None, help="adaptive quadrature tolerance")
    common.add_argument(
        "--coverage", type=float, default=None, help="mass of the integration region"
    )
    common.add_argument(
        "--sigma-switch",
        type=float,
        default=None,
        help="with --method auto, the smallest scale integrated by Riemann sums",
    )
    common.add_argument(
        "--density-floor", type=float, default=None, help="integrand is zero below this density"
    )
    common.add_argument(
        "--max-workers",
        "-j",
        type=int,
        default=None,
        help="maximum number of replications to run concurrently (default is $JEFFMIX_WORKERS, "
        "else # of CPUs)",
    )

    model_args = argparse.ArgumentParser(add_help=False)
    model_args.add_argument("--model", type=str, default=None, help="mixture model JSON file")
    model_args.add_argument(
        "--config",
        choices=[c.value for c in UnknownConfig],
        default=None,
        help="which parameters are unknown",
    )

    prior_args = argparse.ArgumentParser(add_help=False)
    prior_args.add_argument(
        "--prior", type=str, default="jeffreys", help="prior kind (see --list)"
    )

    data_args = argparse.ArgumentParser(add_help=False)
    data_args.add_argument("--data", type=str, default=None, help='CSV data file with header "x"')
    data_args.add_argument(
        "--sample-size", type=int, default=None, help="simulate this many points from --model"
    )

    grid_args = argparse.ArgumentParser(add_help=False)
    grid_args.add_argument("--grid", type=str, default=None, help="grid specification JSON file")
    grid_args.add_argument(
        "--axis", action="append", default=None, help="a grid axis as NAME:LO:HI:STEPS"
    )
    grid_args.add_argument(
        "--fixed", action="append", default=None, help="a fixed parameter as NAME=VALUE"
    )
    grid_args.add_argument("--scale", choices=("natural", "log"), default=None)

    mcmc_args = argparse.ArgumentParser(add_help=False)
    mcmc_args.add_argument("--iterations", type=int, default=None)
    mcmc_args.add_argument("--burnin", type=int, default=None)

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.add_parser(
        "fisher", parents=[common, model_args], help="compute a Fisher information matrix"
    )
    sub.add_parser(
        "prior-grid",
        parents=[common, model_args, prior_args, grid_args],
        help="evaluate a log prior over a grid",
    )
    sub.add_parser(
        "posterior-grid",
        parents=[common, model_args, prior_args, grid_args, data_args],
        help="evaluate a log posterior over a grid",
    )
    mcmc = sub.add_parser(
        "mcmc",
        parents=[common, model_args, prior_args, data_args, mcmc_args],
        help="run one adaptive Metropolis-Hastings chain",
    )
    mcmc.add_argument("--adapt-window", type=int, default=100)
    mcmc.add_argument(
        "--init-gap",
        type=float,
        default=20.0,
        help="starting points must have a log likelihood within this of the truth's",
    )
    replicate = sub.add_parser(
        "replicate", parents=[common, mcmc_args], help="run a replication experiment"
    )
    replicate.add_argument("--spec", type=str, default=None, help="experiment JSON file")
    replicate.add_argument("--replications", type=int, default=None)
    replicate.add_argument("--sample-sizes", type=str, default=None, help="e.g. 10,100")
    replicate.add_argument(
        "--paper-scale",
        "--full-scale",
        dest="full_scale",
        action="store_true",
        help="50 replications of 10^5 iterations with 10^4 burn-in",
    )
    probe = sub.add_parser("probe", parents=[common], help="numerical properness probe")
    probe.add_argument("--density", "--prior", choices=PROBE_DENSITIES, required=True)
    probe.add_argument(
        "--boxes", type=str, default=None, help="comma-separated increasing box half-widths"
    )
    probe.add_argument("--model", type=str, default=None, help="two-component model (weights-only)")
    probe.add_argument("--points-per-axis", type=int, default=None)
    probe.add_argument("--plateau-tol", type=float, default=0.01)
    probe.add_argument("--mu", type=float, default=0.0)
    probe.add_argument("--tau", type=float, default=1.0)
    probe.add_argument("--sigma", type=float, default=1.0)
    probe.add_argument("--p", type=float, default=0.5)
    integrators = sub.add_parser(
        "integrators", parents=[common], help="compare Fisher integration backends"
    )
    integrators.add_argument("--model", type=str, default=None)
    integrators.add_argument(
        "--config", choices=[c.value for c in UnknownConfig], default="weights-only"
    )
    integrators.add_argument("--elements", type=str, default=None, help='e.g. "0,0;0,1"')
    integrators.add_argument("--draw-grid", type=str, default="375,750,1500,3000")
    integrators.add_argument("--repeats", type=int, default=100)
    return parser


def resolve_replay(
    parser: argparse.ArgumentParser, meta_path: str, output_dir: Optional[str]
) -> Tuple[argparse.Namespace, List[str]]:
    meta = load_json(meta_path, "replay")
    if not isinstance(meta, dict) or not isinstance(meta.get("argv"), list):
        raise ConfigError("replay", f"{meta_path} is not a jeffmix meta.json file")
    argv = [str(a) for a in meta["argv"]]
    args = parser.parse_args(argv)
    cwd = Path(meta.get("cwd", "."))
    for name in PATH_ARGUMENTS:
        value = getattr(args, name, None)
        if value is not None and not Path(value).is_absolute():
            setattr(args, name, str(cwd / value))
    if output_dir is not None:
        args.output_dir = output_dir
    return args, argv


def clear_cache(database: str):
    db_path = Path(database)
    if not db_path.exists():
        return
    if sys.stderr.isatty() and sys.stdin.isatty():
        while True:
            if str(database) != str(DEFAULT_DB_PATH):
                sys.stderr.write(f"Cache file: {db_path.absolute()}\n")
            sys.stderr.write(
                "Deleting the cache will require all cached Fisher matrices to be recomputed.\n"
                "Are you sure? [yN] "
            )
            try:
                choice = input("").lower().strip()
            except KeyboardInterrupt:
                return
            if choice == "y":
                break
            elif choice == "n" or choice == "":
                return
    db_path.unlink()
    sys.stderr.write("Cache cleared.\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv

    parser = build_parser()
    args = parser.parse_args(argv[1:])
    recorded_argv = list(argv[1:])

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.version:
        sys.stderr.write("jeffmix version ")
        sys.stderr.flush()
        sys.stdout.write(str(jeffmix_version()))
        sys.stdout.flush()
        sys.stderr.write("\n")
        return 0

    if args.list:
        for name, cls in sorted(integration_methods().items()):
            sys.stdout.write(f"method  {name:<20}{cls.description}\n")
        for name, prior in sorted(prior_kinds().items()):
            sys.stdout.write(f"prior   {name:<20}{prior.description}\n")
        return 0

    # a bare `--database` keeps the cache in memory
    database = ":memory:" if args.database is None else args.database
    if args.clear_cache:
        clear_cache(database)
        if args.command is None and args.replay is None:
            return 0

    try:
        if args.replay is not None:
            args, recorded_argv = resolve_replay(parser, args.replay, args.replay_output_dir)
        if args.command is None:
            parser.print_usage(sys.stderr)
            sys.stderr.write("jeffmix: error: a command is required\n")
            return 2
        if args.max_workers is not None and args.max_workers < 1:
            raise ConfigError("max-workers", "must be at least 1")
        cache = DBFisherCache(database)
        job = PREPARE[args.command](args, cache)
    except ConfigError as e:
        sys.stderr.write(f"{e!s}\n")
        return 2
    except (KeyError, ValueError) as e:
        sys.stderr.write(f"{args.command}: {e!s}\n")
        return 2

    output_dir = Path(args.output_dir)
    started = time.time()
    try:
        outputs = job.run()
    except OperationalError as e:
        sys.stderr.write(
            f"Database error: {e!r}\n\nThis can occur if your database was created with an older "
            f"version of jeffmix. If you remove {database} or run `jeffmix --clear-cache` and try "
            "again, the database will automatically be rebuilt from scratch.\n"
        )
        return 1
    except Exception as e:
        logger.debug("command failed", exc_info=True)
        sys.stderr.write(f"{args.command} failed: {e!s}\n")
        return 1
    wall_time = time.time() - started

    for name, content in outputs.items():
        write_atomic(output_dir / name, content, compress=name in job.compressed)
    write_json(
        output_dir / "meta.json",
        {
            "command": args.command,
            "argv": recorded_argv,
            "cwd": os.getcwd(),
            "version": jeffmix_version(),
            "seeds": job.seeds,
            "wall_time_seconds": wall_time,
            "outputs": sorted(outputs),
        },
    )
    sys.stderr.write(f"Output saved to {output_dir}\n")
    return 0
