from concurrent.futures import Future, ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
import itertools
import json
import logging
import math
from multiprocessing import cpu_count
import os
from statistics import median
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .fisher import (
    AdaptiveQuadrature,
    FisherCache,
    IntegrationSpec,
    MonteCarlo,
    QuadratureError,
    Riemann,
    UnknownConfig,
    fisher_matrix,
    integration_bounds,
)
from .jeffmix import ConfigError
from .mcmc import (
    ChainDiagnostics,
    DiagnosticThresholds,
    InitializationError,
    McmcConfig,
    diagnose,
    run_rwmh,
)
from .mixture import DataSet, MixtureModel, UnsupportedFamilyError, log_likelihood, sample
from .posterior import LogPosterior, ParameterLayout, prior_by_name
from .priors import NEG_INFINITY

logger = logging.getLogger(__name__)

DESK_REPLICATIONS = 10
DESK_MCMC = McmcConfig(iterations=20_000, burnin=5_000)
FULL_REPLICATIONS = 50
FULL_MCMC = McmcConfig(iterations=100_000, burnin=10_000)

MAX_PROBE_DIMENSION = 3

# 0.5 N(-1, 1) + 0.5 N(2, 0.5): two close components with unequal scales
CLOSE_MEANS_MODEL = MixtureModel.gaussian((0.5, 0.5), (-1.0, 2.0), (1.0, 0.5))
# integrator benchmarks: one wide model, one with narrow, heavily overlapping components
WIDE_BENCHMARK_MODEL = MixtureModel.gaussian(
    (0.25, 0.10, 0.65), (-10.0, 0.0, 15.0), (1.0, 5.0, 7.0)
)
NARROW_BENCHMARK_MODEL = MixtureModel.gaussian((1 / 3,) * 3, (-1.0, 0.0, 1.0), (0.2, 0.2, 0.2))


class DimensionCapError(ValueError):
    pass


def default_max_workers() -> int:
    workers = os.environ.get("JEFFMIX_WORKERS")
    if workers:
        try:
            return max(1, int(workers))
        except ValueError:
            raise ConfigError("JEFFMIX_WORKERS", f"expected an integer, not {workers!r}")
    return cpu_count()


def replication_seeds(master_seed: int, sample_size: int, replication: int) -> Tuple[int, int, int]:
    """Independent (data, initialization, chain) seeds for one replication"""
    root = np.random.SeedSequence(master_seed, spawn_key=(sample_size, replication))
    return tuple(int(child.generate_state(1)[0]) for child in root.spawn(3))  # type: ignore


@dataclass(frozen=True)
class ExperimentSpec:
    truth: MixtureModel
    config: UnknownConfig
    prior: str = "jeffreys"
    sample_sizes: Tuple[int, ...] = (10, 100)
    replications: int = DESK_REPLICATIONS
    mcmc: McmcConfig = DESK_MCMC
    integration: IntegrationSpec = field(default_factory=IntegrationSpec)
    master_seed: int = 0
    thresholds: DiagnosticThresholds = field(default_factory=DiagnosticThresholds)
    init_loglik_gap: float = 20.0
    max_init_attempts: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        if self.replications < 1:
            raise ConfigError("replications", f"must be at least 1, not {self.replications}")
        if not self.sample_sizes:
            raise ConfigError("sample_sizes", "at least one sample size is required")
        if any(n < 2 for n in self.sample_sizes):
            raise ConfigError("sample_sizes", f"must all be at least 2: {self.sample_sizes!r}")
        if not self.init_loglik_gap > 0:
            raise ConfigError("init_loglik_gap", "must be positive")
        if self.max_init_attempts < 1:
            raise ConfigError("max_init_attempts", "must be positive")
        try:
            prior = prior_by_name(self.prior)
        except KeyError as e:
            raise ConfigError("prior", str(e.args[0]))
        try:
            prior.check(self.config)
        except ValueError as e:
            raise ConfigError("prior", str(e))
        try:
            self.config.check(self.truth)
        except ValueError as e:
            raise ConfigError("config", str(e))

    def full_scale(self) -> "ExperimentSpec":
        return replace(
            self,
            replications=FULL_REPLICATIONS,
            mcmc=replace(
                self.mcmc, iterations=FULL_MCMC.iterations, burnin=FULL_MCMC.burnin
            ),
        )

    def to_obj(self) -> Dict[str, Any]:
        return {
            "truth": self.truth.to_obj(),
            "config": self.config.value,
            "prior": self.prior,
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "mcmc": self.mcmc.to_obj(),
            "integration": self.integration.to_obj(),
            "master_seed": self.master_seed,
            "thresholds": self.thresholds.to_obj(),
            "init_loglik_gap": self.init_loglik_gap,
            "max_init_attempts": self.max_init_attempts,
        }

    @classmethod
    def from_obj(cls, obj: Dict[str, Any]) -> "ExperimentSpec":
        if not isinstance(obj, dict):
            raise ConfigError("spec", "expected an object")
        unknown = set(obj) - set(cls.__dataclass_fields__)  # type: ignore
        if unknown:
            raise ConfigError("spec", f"unexpected keys {sorted(unknown)}")
        for required in ("truth", "config"):
            if required not in obj:
                raise ConfigError(required, "is required")
        kwargs: Dict[str, Any] = {"truth": MixtureModel.from_obj(obj["truth"], "truth")}
        try:
            kwargs["config"] = UnknownConfig.parse(obj["config"])
        except (ValueError, TypeError) as e:
            raise ConfigError("config", str(e))
        if "prior" in obj:
            if not isinstance(obj["prior"], str):
                raise ConfigError("prior", "expected a string")
            try:
                prior_by_name(obj["prior"])
            except KeyError as e:
                raise ConfigError("prior", str(e.args[0]))
            kwargs["prior"] = obj["prior"]
        if "sample_sizes" in obj:
            sizes = obj["sample_sizes"]
            if not isinstance(sizes, list) or not all(
                isinstance(n, int) and not isinstance(n, bool) for n in sizes
            ):
                raise ConfigError("sample_sizes", "expected a list of integers")
            kwargs["sample_sizes"] = tuple(sizes)
        for key in ("replications", "master_seed", "max_init_attempts"):
            if key in obj:
                if isinstance(obj[key], bool) or not isinstance(obj[key], int):
                    raise ConfigError(key, "expected an integer")
                kwargs[key] = obj[key]
        if "init_loglik_gap" in obj:
            if isinstance(obj["init_loglik_gap"], bool) or not isinstance(
                obj["init_loglik_gap"], (int, float)
            ):
                raise ConfigError("init_loglik_gap", "expected a number")
            kwargs["init_loglik_gap"] = float(obj["init_loglik_gap"])
        if "mcmc" in obj:
            kwargs["mcmc"] = McmcConfig.from_obj(obj["mcmc"])
        if "integration" in obj:
            kwargs["integration"] = IntegrationSpec.from_obj(obj["integration"])
        if "thresholds" in obj:
            kwargs["thresholds"] = DiagnosticThresholds.from_obj(obj["thresholds"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path, "r") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(str(path), f"invalid JSON: {e!s}")
        return cls.from_obj(obj)


def random_start(
    layout: ParameterLayout,
    log_post: Callable[[np.ndarray], float],
    data: DataSet,
    truth: MixtureModel,
    rng: np.random.Generator,
    loglik_gap: float = 20.0,
    max_attempts: int = 10_000,
) -> np.ndarray:
    """
    Draws starting points until one has a finite log posterior and a log likelihood within
    `loglik_gap` of the truth's.
    """
    lo, hi = data.data_range
    s = float(np.std(data.values, ddof=1)) if data.n > 1 else 1.0
    if not s > 0:
        s = 1.0
    template = layout.template
    config = layout.config
    reparametrized = config is UnknownConfig.ALL_REPARAM
    threshold = log_likelihood(truth, data) - loglik_gap
    k = template.k
    vary_means = config.has_means or reparametrized
    vary_scales = config.has_scales or reparametrized
    vary_weights = config.has_weights or reparametrized
    for _ in range(max_attempts):
        locs = rng.uniform(lo, hi, k) if vary_means else template.locs
        scales = rng.uniform(0.1 * s, 2.0 * s, k) if vary_scales else template.scales
        weights = rng.dirichlet(np.ones(k)) if vary_weights else template.weight_array
        hyper = (rng.uniform(lo, hi), rng.uniform(0.1 * s, 2.0 * s))
        if np.any(weights <= 0):
            continue
        weights = list(weights[:-1]) + [1.0 - math.fsum(weights[:-1])]
        try:
            if template.is_gaussian:
                candidate = MixtureModel.gaussian(weights, locs, scales)
            else:
                candidate = MixtureModel(template.components, tuple(weights))
        except ValueError:
            continue
        if log_likelihood(candidate, data) < threshold:
            continue
        vector = layout.from_model(candidate, hyper if layout.hyperparameters else None)
        if math.isfinite(log_post(vector)):
            return vector
    raise InitializationError(
        f"no starting point within {loglik_gap} of the true log likelihood after "
        f"{max_attempts} attempts"
    )


@dataclass(frozen=True)
class ReplicationResult:
    sample_size: int
    replication: int
    seeds: Tuple[int, int, int]
    diagnostics: Optional[ChainDiagnostics] = None
    posterior_means: Optional[Tuple[float, ...]] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.diagnostics is None

    def to_obj(self) -> Dict[str, Any]:
        ret: Dict[str, Any] = {
            "sample_size": self.sample_size,
            "replication": self.replication,
            "seeds": list(self.seeds),
        }
        if self.diagnostics is not None:
            ret.update(self.diagnostics.to_obj())
            ret["posterior_means"] = list(self.posterior_means or ())
        else:
            ret["error"] = self.error
        return ret


def sorted_means_average(layout: ParameterLayout, states: np.ndarray) -> Tuple[float, ...]:
    """Average over states of the component means in ascending order"""
    if layout.config.has_means:
        indices = list(layout.block("means").indices)
        return tuple(np.mean(np.sort(states[:, indices], axis=1), axis=0))
    locs = np.array([np.sort(layout.to_model(state).locs) for state in states])
    return tuple(np.mean(locs, axis=0))


def run_replication(spec: ExperimentSpec, sample_size: int, replication: int) -> ReplicationResult:
    seeds = replication_seeds(spec.master_seed, sample_size, replication)
    data_seed, init_seed, chain_seed = seeds
    prior = prior_by_name(spec.prior)
    layout = prior.layout(spec.truth, spec.config)
    data = sample(spec.truth, sample_size, data_seed)
    log_post = LogPosterior(layout, prior, data, spec.integration)
    try:
        init = random_start(
            layout,
            log_post,
            data,
            spec.truth,
            np.random.default_rng(init_seed),
            loglik_gap=spec.init_loglik_gap,
            max_attempts=spec.max_init_attempts,
        )
    except InitializationError as e:
        logger.warning(f"n={sample_size} replication {replication}: {e!s}")
        return ReplicationResult(sample_size, replication, seeds, error=str(e))
    chain = run_rwmh(log_post, init, layout, spec.mcmc.with_seed(chain_seed))
    diagnostics = diagnose(chain, layout, spec.truth, data, spec.thresholds)
    means: Tuple[float, ...] = ()
    if spec.config.has_means or spec.config is UnknownConfig.ALL_REPARAM:
        means = sorted_means_average(layout, chain.post_burnin())
    return ReplicationResult(sample_size, replication, seeds, diagnostics, means)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else math.nan


@dataclass(frozen=True)
class ReportRow:
    sample_size: int
    replications: int
    failed: int
    avg_accept_rate: float
    prop_divergent_means: float
    prop_stuck_sigma: float
    prop_flagged: float
    mean_loglik_ratio: float
    median_loglik_ratio: float
    mean_max_loglik_ratio: float
    median_max_loglik_ratio: float
    posterior_means: Tuple[float, ...]

    @classmethod
    def aggregate(cls, sample_size: int, results: Sequence[ReplicationResult]) -> "ReportRow":
        """Proportions and ratios over the replications that produced a chain"""
        ok = [r for r in results if r.diagnostics is not None]
        diagnostics: List[ChainDiagnostics] = [r.diagnostics for r in ok]  # type: ignore
        ratios = [d.loglik_ratio for d in diagnostics]
        max_ratios = [d.max_loglik_ratio for d in diagnostics]
        flagged = [float(d.divergent_means or d.stuck_small_sigma) for d in diagnostics]
        means: Tuple[float, ...] = ()
        if ok:
            columns = zip(*(r.posterior_means or () for r in ok))
            means = tuple(_mean(column) for column in columns)
        return cls(
            sample_size=sample_size,
            replications=len(results),
            failed=len(results) - len(ok),
            avg_accept_rate=_mean([d.accept_rate for d in diagnostics]),
            prop_divergent_means=_mean([float(d.divergent_means) for d in diagnostics]),
            prop_stuck_sigma=_mean([float(d.stuck_small_sigma) for d in diagnostics]),
            prop_flagged=_mean(flagged),
            mean_loglik_ratio=_mean(ratios),
            median_loglik_ratio=median(ratios) if ratios else math.nan,
            mean_max_loglik_ratio=_mean(max_ratios),
            median_max_loglik_ratio=median(max_ratios) if max_ratios else math.nan,
            posterior_means=means,
        )


REPORT_COLUMNS = (
    "sample_size",
    "replications",
    "failed",
    "avg_accept_rate",
    "prop_divergent_means",
    "prop_stuck_sigma",
    "prop_flagged",
    "mean_loglik_ratio",
    "median_loglik_ratio",
    "mean_max_loglik_ratio",
    "median_max_loglik_ratio",
)


def _format(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


@dataclass(frozen=True)
class ReplicationReport:
    rows: Tuple[ReportRow, ...]
    results: Tuple[ReplicationResult, ...]

    def row(self, sample_size: int) -> ReportRow:
        for row in self.rows:
            if row.sample_size == sample_size:
                return row
        raise KeyError(sample_size)

    def to_csv(self) -> str:
        k = max((len(row.posterior_means) for row in self.rows), default=0)
        header = list(REPORT_COLUMNS) + [f"posterior_mean_mu{i}" for i in range(1, k + 1)]
        lines = [",".join(header)]
        for row in self.rows:
            values = [_format(getattr(row, column)) for column in REPORT_COLUMNS]
            values.extend(_format(float(m)) for m in row.posterior_means)
            values.extend("" for _ in range(k - len(row.posterior_means)))
            lines.append(",".join(values))
        return "\n".join(lines) + "\n"

    def diagnostics_jsonl(self) -> str:
        return "".join(json.dumps(r.to_obj(), sort_keys=True) + "\n" for r in self.results)


def run_experiment(
    spec: ExperimentSpec, max_workers: Optional[int] = None, progress: bool = True
) -> ReplicationReport:
    if max_workers is None:
        max_workers = default_max_workers()
    tasks = list(itertools.product(spec.sample_sizes, range(spec.replications)))
    results: Dict[Tuple[int, int], ReplicationResult] = {}

    def record(key: Tuple[int, int], get_result: Callable[[], ReplicationResult]):
        try:
            results[key] = get_result()
        except Exception as e:  # recorded as a failed replication
            logger.error(f"n={key[0]} replication {key[1]} failed: {e!s}")
            results[key] = ReplicationResult(
                key[0], key[1], replication_seeds(spec.master_seed, *key), error=str(e)
            )

    with tqdm(
        desc="replications",
        total=len(tasks),
        leave=False,
        unit=" chains",
        disable=not progress,
    ) as t:
        if max_workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=max_workers) as pool:
                futures: Dict[Future, Tuple[int, int]] = {
                    pool.submit(run_replication, spec, n, r): (n, r) for n, r in tasks
                }
                for future in as_completed(futures):
                    record(futures[future], future.result)
                    t.update(1)
        else:
            for n, r in tasks:
                record((n, r), lambda: run_replication(spec, n, r))
                t.update(1)

    ordered = tuple(results[key] for key in tasks)
    rows = tuple(
        ReportRow.aggregate(n, [results[(n, r)] for r in range(spec.replications)])
        for n in spec.sample_sizes
    )
    return ReplicationReport(rows=rows, results=ordered)


@dataclass(frozen=True)
class GridAxis:
    name: str
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError(f"axis {self.name!r} needs at least 2 steps")
        if not self.lo < self.hi:
            raise ValueError(f"axis {self.name!r} needs lo < hi")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)

    @classmethod
    def parse(cls, text: str) -> "GridAxis":
        """`name:lo:hi:steps`"""
        parts = text.split(":")
        if len(parts) != 4:
            raise ConfigError("axis", f"expected name:lo:hi:steps, not {text!r}")
        try:
            return cls(parts[0], float(parts[1]), float(parts[2]), int(parts[3]))
        except ValueError as e:
            raise ConfigError(f"axis {parts[0]}", str(e))


@dataclass(frozen=True)
class GridSpec:
    axes: Tuple[GridAxis, ...]
    fixed: Dict[str, float] = field(default_factory=dict)
    scale: str = "log"

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not self.axes:
            raise ValueError("a grid needs at least one axis")
        if self.scale not in ("natural", "log"):
            raise ValueError(f"scale must be natural or log, not {self.scale!r}")
        names = [axis.name for axis in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate grid axes: {names!r}")
        overlap = set(names) & set(self.fixed)
        if overlap:
            raise ValueError(f"parameters {sorted(overlap)} are both varied and fixed")

    def to_obj(self) -> Dict[str, Any]:
        return {
            "axes": [
                {"name": a.name, "lo": a.lo, "hi": a.hi, "steps": a.steps} for a in self.axes
            ],
            "fixed": dict(self.fixed),
            "scale": self.scale,
        }

    @classmethod
    def from_obj(cls, obj: Dict[str, Any]) -> "GridSpec":
        if not isinstance(obj, dict) or not isinstance(obj.get("axes"), list):
            raise ConfigError("grid.axes", "expected a list of axes")
        axes = []
        for i, axis in enumerate(obj["axes"]):
            try:
                axes.append(
                    GridAxis(
                        str(axis["name"]), float(axis["lo"]), float(axis["hi"]), int(axis["steps"])
                    )
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"grid.axes[{i}]", str(e))
        fixed = obj.get("fixed", {})
        if not isinstance(fixed, dict):
            raise ConfigError("grid.fixed", "expected an object")
        try:
            return cls(
                tuple(axes),
                {str(k): float(v) for k, v in fixed.items()},
                str(obj.get("scale", "log")),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError("grid", str(e))


@dataclass(frozen=True)
class GridResult:
    axes: Tuple[GridAxis, ...]
    log_values: np.ndarray
    scale: str = "log"

    @property
    def values(self) -> np.ndarray:
        if self.scale == "natural":
            return np.exp(self.log_values)
        return self.log_values

    def to_csv(self) -> str:
        lines = [",".join([axis.name for axis in self.axes] + ["value"])]
        values = self.values
        points = [axis.points() for axis in self.axes]
        for index in itertools.product(*(range(axis.steps) for axis in self.axes)):
            coordinates = [axis_points[i] for axis_points, i in zip(points, index)]
            cells = [f"{c:.17g}" for c in coordinates] + [f"{values[index]:.17g}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def check_grid(layout: ParameterLayout, grid: GridSpec):
    """Raises ConfigError if `grid` names a parameter `layout` does not have"""
    for name in list(grid.fixed) + [axis.name for axis in grid.axes]:
        if name not in layout.labels:
            raise ConfigError(
                f"grid.{name}", f"not a free parameter; expected one of {', '.join(layout.labels)}"
            )
    if layout.hyperparameters:
        for name in ("mu0", "zeta0"):
            if name not in grid.fixed and name not in [a.name for a in grid.axes]:
                raise ConfigError(f"grid.{name}", "hyperparameters must be fixed or varied")


def _grid_vectors(
    layout: ParameterLayout, template: MixtureModel, grid: GridSpec
) -> Iterable[Tuple[Tuple[int, ...], np.ndarray]]:
    check_grid(layout, grid)
    base = np.zeros(layout.dimension)
    if layout.hyperparameters:
        base[:] = layout.from_model(template, (0.0, 1.0))
    else:
        base[:] = layout.from_model(template)
    for name, value in grid.fixed.items():
        base[layout.labels.index(name)] = value
    positions = [layout.labels.index(axis.name) for axis in grid.axes]
    points = [axis.points() for axis in grid.axes]
    for index in itertools.product(*(range(axis.steps) for axis in grid.axes)):
        vector = base.copy()
        for position, axis_points, i in zip(positions, points, index):
            vector[position] = axis_points[i]
        yield index, vector


def _evaluate_grid(
    template: MixtureModel,
    config: UnknownConfig,
    grid: GridSpec,
    spec: Optional[IntegrationSpec],
    prior: str,
    data: DataSet,
    cache: Optional[FisherCache],
    with_likelihood: bool,
) -> GridResult:
    kind = prior_by_name(prior)
    layout = kind.layout(template, config)
    target = LogPosterior(layout, kind, data, spec, cache)
    values = np.full(tuple(axis.steps for axis in grid.axes), NEG_INFINITY)
    cells = list(_grid_vectors(layout, template, grid))
    for index, vector in tqdm(cells, desc="grid", leave=False, unit=" cells"):
        values[index] = target(vector) if with_likelihood else target.log_prior(vector)
    return GridResult(grid.axes, values, grid.scale)


def prior_grid(
    template: MixtureModel,
    config: UnknownConfig,
    grid: GridSpec,
    spec: Optional[IntegrationSpec] = None,
    prior: str = "jeffreys",
    cache: Optional[FisherCache] = None,
) -> GridResult:
    """Log prior over a Cartesian grid; cells outside the parameter space are -inf"""
    return _evaluate_grid(template, config, grid, spec, prior, DataSet(), cache, False)


def posterior_grid(
    template: MixtureModel,
    config: UnknownConfig,
    data: DataSet,
    grid: GridSpec,
    spec: Optional[IntegrationSpec] = None,
    prior: str = "jeffreys",
    cache: Optional[FisherCache] = None,
) -> GridResult:
    return _evaluate_grid(template, config, grid, spec, prior, data, cache, True)


Box = Sequence[Tuple[float, float]]


@dataclass(frozen=True)
class ProbeResult:
    boxes: Tuple[Tuple[Tuple[float, float], ...], ...]
    masses: Tuple[float, ...]
    plateau: bool
    rel_tol: float

    @property
    def classification(self) -> str:
        return "plateau" if self.plateau else "diverging"

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.masses, self.masses[1:]))

    def to_csv(self) -> str:
        d = len(self.boxes[0])
        header = [f"{side}{i}" for i in range(1, d + 1) for side in ("lo", "hi")] + ["mass"]
        lines = [",".join(header)]
        for box, mass in zip(self.boxes, self.masses):
            cells = [f"{v:.17g}" for interval in box for v in interval] + [f"{mass:.17g}"]
            lines.append(",".join(cells))
        lines.append(f"# classification={self.classification}")
        return "\n".join(lines) + "\n"


DEFAULT_PROBE_POINTS = {1: 400, 2: 100, 3: 40}


def properness_probe(
    log_density: Callable[[np.ndarray], float],
    boxes: Sequence[Box],
    points: Optional[int] = None,
    rel_tol: float = 0.01,
    progress: bool = False,
) -> ProbeResult:
    """Mass of exp(log_density) over growing boxes by a tensorized midpoint rule"""
    if not boxes:
        raise ValueError("the probe needs at least one box")
    d = len(boxes[0])
    if d > MAX_PROBE_DIMENSION:
        raise DimensionCapError(
            f"tensorized quadrature is capped at {MAX_PROBE_DIMENSION} dimensions, not {d}"
        )
    if any(len(box) != d for box in boxes):
        raise ValueError("every box must have the same dimension")
    if points is None:
        points = DEFAULT_PROBE_POINTS[d]
    rule = Riemann(points=points)
    masses: List[float] = []
    for box in tqdm(boxes, desc="probe", leave=False, unit=" boxes", disable=not progress):
        nodes = [rule.nodes(interval) for interval in box]
        volume = math.prod((hi - lo) / points for lo, hi in box)
        total = math.fsum(
            math.exp(value) if value > NEG_INFINITY else 0.0
            for value in (log_density(np.array(x)) for x in itertools.product(*nodes))
        )
        masses.append(total * volume)
    plateau = len(masses) >= 2 and abs(masses[-1] - masses[-2]) <= rel_tol * abs(masses[-1])
    return ProbeResult(
        boxes=tuple(tuple((float(lo), float(hi)) for lo, hi in box) for box in boxes),
        masses=tuple(masses),
        plateau=plateau,
        rel_tol=rel_tol,
    )


@dataclass(frozen=True)
class IntegratorComparisonRow:
    element: str
    a: int
    b: int
    draws: int
    riemann: float
    quad: float
    mc_mean: float
    mc_sd: float
    repeats: int


@dataclass(frozen=True)
class IntegratorComparison:
    model: MixtureModel
    config: UnknownConfig
    rows: Tuple[IntegratorComparisonRow, ...]

    def to_csv(self) -> str:
        columns = ("element", "a", "b", "draws", "riemann", "quad", "mc_mean", "mc_sd", "repeats")
        lines = [",".join(columns)]
        for row in self.rows:
            lines.append(",".join(_format(getattr(row, column)) for column in columns))
        return "\n".join(lines) + "\n"


def compare_integrators(
    model: MixtureModel,
    config: UnknownConfig,
    elements: Optional[Sequence[Tuple[int, int]]] = None,
    mc_draw_grid: Sequence[int] = (375, 750, 1500, 3000),
    repeats: int = 100,
    points: int = 550,
    rel_tol: float = 1e-8,
    master_seed: int = 0,
    coverage: float = 0.99999,
    progress: bool = False,
) -> IntegratorComparison:
    """Riemann and adaptive quadrature values next to Monte Carlo means and spreads"""
    if repeats < 2:
        raise ValueError("at least two Monte Carlo repeats are needed for a spread")
    d = config.dimension(model.k)
    if elements is None:
        elements = [(a, a) for a in range(d)]
    for a, b in elements:
        if not (0 <= a < d and 0 <= b < d):
            raise ValueError(f"element ({a}, {b}) is outside a {d}x{d} Fisher matrix")
    labels = config.labels(model.k)
    base = IntegrationSpec(coverage=coverage)

    try:
        riemann = fisher_matrix(model, config, base.with_method(Riemann(points=points))).entries
    except UnsupportedFamilyError as e:
        logger.warning(str(e))
        riemann = np.full((d, d), math.nan)
    try:
        quad = fisher_matrix(
            model, config, base.with_method(AdaptiveQuadrature(rel_tol=rel_tol))
        ).entries
    except QuadratureError as e:
        logger.warning(f"adaptive quadrature failed for {model!s}: {e!s}")
        quad = np.full((d, d), math.nan)

    seeds = np.random.SeedSequence(master_seed).spawn(len(mc_draw_grid) * repeats)
    rows: List[IntegratorComparisonRow] = []
    with tqdm(
        desc="monte carlo",
        total=len(mc_draw_grid) * repeats,
        leave=False,
        unit=" matrices",
        disable=not progress,
    ) as t:
        for g, draws in enumerate(mc_draw_grid):
            estimates = []
            for r in range(repeats):
                seed = int(seeds[g * repeats + r].generate_state(1)[0])
                method = MonteCarlo(draws=draws, seed=seed)
                estimates.append(
                    method.expected_outer(
                        model, config, integration_bounds(model, base), base.density_floor
                    )
                )
                t.update(1)
            stacked = np.array(estimates)
            for a, b in elements:
                a, b = min(a, b), max(a, b)
                rows.append(
                    IntegratorComparisonRow(
                        element=f"{labels[a]}/{labels[b]}",
                        a=a,
                        b=b,
                        draws=draws,
                        riemann=float(riemann[a, b]),
                        quad=float(quad[a, b]),
                        mc_mean=float(np.mean(stacked[:, a, b])),
                        mc_sd=float(np.std(stacked[:, a, b], ddof=1)),
                        repeats=repeats,
                    )
                )
    return IntegratorComparison(model, config, tuple(rows))
