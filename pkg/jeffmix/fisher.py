from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields, replace
from enum import Enum
import functools
import hashlib
import json
import logging
import math
from threading import Lock
from typing import (
    Any,
    Callable,
    ClassVar,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Type,
    Union,
)

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import logsumexp

from .jeffmix import ConfigError
from .mixture import MixtureModel, UnsupportedFamilyError, coverage_interval, envelope, sample
from .reparam import natural_to_reparam, reparam_jacobian, reparam_labels

logger = logging.getLogger(__name__)

DEFAULT_COVERAGE = 0.99999
DEFAULT_DENSITY_FLOOR = 1e-300
SINGULAR_TOLERANCE = 1e-12


class IncompatibleConfigError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


class UnknownConfig(Enum):
    """Which parameter blocks of a mixture are unknown; selects the Fisher matrix layout"""

    WEIGHTS_ONLY = "weights-only"
    MEANS_ONLY = "means-only"
    SCALES_ONLY = "scales-only"
    MEANS_WEIGHTS = "means-weights"
    ALL = "all"
    ALL_REPARAM = "all-reparam"

    @classmethod
    def parse(cls, name: str) -> "UnknownConfig":
        for config in cls:
            if config.value == name:
                return config
        raise ValueError(
            f"{name!r} is not a known configuration; expected one of "
            f"{', '.join(c.value for c in cls)}"
        )

    @property
    def requires_gaussian(self) -> bool:
        return self is not UnknownConfig.WEIGHTS_ONLY

    @property
    def has_weights(self) -> bool:
        return self in (UnknownConfig.WEIGHTS_ONLY, UnknownConfig.MEANS_WEIGHTS, UnknownConfig.ALL)

    @property
    def has_means(self) -> bool:
        return self in (UnknownConfig.MEANS_ONLY, UnknownConfig.MEANS_WEIGHTS, UnknownConfig.ALL)

    @property
    def has_scales(self) -> bool:
        return self in (UnknownConfig.SCALES_ONLY, UnknownConfig.ALL)

    def min_components(self) -> int:
        if self in (
            UnknownConfig.WEIGHTS_ONLY,
            UnknownConfig.MEANS_ONLY,
            UnknownConfig.ALL_REPARAM,
        ):
            return 2
        return 1

    def dimension(self, k: int) -> int:
        if self is UnknownConfig.ALL_REPARAM:
            return 3 * k - 1
        return (k if self.has_means else 0) + (k if self.has_scales else 0) + (
            k - 1 if self.has_weights else 0
        )

    def labels(self, k: int) -> List[str]:
        if self is UnknownConfig.ALL_REPARAM:
            return reparam_labels(k)
        labels: List[str] = []
        if self.has_means:
            labels.extend(f"mu{i}" for i in range(1, k + 1))
        if self.has_scales:
            labels.extend(f"sigma{i}" for i in range(1, k + 1))
        if self.has_weights:
            labels.extend(f"p{i}" for i in range(1, k))
        return labels

    def check(self, model: MixtureModel):
        if self.requires_gaussian and not model.is_gaussian:
            raise IncompatibleConfigError(
                f"the {self.value} configuration requires all-Gaussian components"
            )
        if model.k < self.min_components():
            raise IncompatibleConfigError(
                f"the {self.value} configuration requires at least {self.min_components()} "
                f"components, but the model has {model.k}"
            )


def scores(
    model: MixtureModel,
    config: UnknownConfig,
    xs: Union[float, Sequence[float], np.ndarray],
    density_floor: float = DEFAULT_DENSITY_FLOOR,
) -> np.ndarray:
    """
    Returns the (d, N) matrix of d log g(x) / d theta at every x.

    Scores are zero wherever the mixture density falls below `density_floor`.
    """
    config.check(model)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    log_f = model.component_logpdfs(xs)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weight_array)
    log_g = logsumexp(log_f + log_w[:, None], axis=0)
    valid = log_g >= math.log(density_floor)
    # f_i / g, capped so zero-weight components cannot overflow
    ratios = np.where(valid, np.exp(np.minimum(log_f - log_g, 700.0)), 0.0)

    blocks: List[np.ndarray] = []
    if config.has_means or config.has_scales or config is UnknownConfig.ALL_REPARAM:
        locs, scales = model.locs[:, None], model.scales[:, None]
        weighted = model.weight_array[:, None] * ratios
        z = (xs - locs) / scales
        mean_scores = weighted * z / scales
        scale_scores = weighted * (z * z - 1.0) / scales
    weight_scores = ratios[:-1] - ratios[-1]

    if config is UnknownConfig.ALL_REPARAM:
        natural = np.vstack((mean_scores, scale_scores, weight_scores))
        jacobian = reparam_jacobian(natural_to_reparam(model))
        return jacobian.T @ natural
    if config.has_means:
        blocks.append(mean_scores)
    if config.has_scales:
        blocks.append(scale_scores)
    if config.has_weights:
        blocks.append(weight_scores)
    return np.vstack(blocks)


def score(
    model: MixtureModel,
    config: UnknownConfig,
    x: float,
    density_floor: float = DEFAULT_DENSITY_FLOOR,
) -> np.ndarray:
    return scores(model, config, [x], density_floor)[:, 0]


def _weighted_density(model: MixtureModel, xs: np.ndarray, density_floor: float) -> np.ndarray:
    g = model.pdf(xs)
    return np.where(g >= density_floor, g, 0.0)


def _mirror_upper(entries: np.ndarray) -> np.ndarray:
    """Exactly symmetric copy built from the upper triangle"""
    return np.triu(entries) + np.triu(entries, 1).T


class IntegrationMethod(ABC):
    name: ClassVar[str]
    description: ClassVar[str]

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if getattr(cls, "name", None) is None:
            raise TypeError(f"{cls.__name__} must define a `name` class member")
        elif getattr(cls, "description", None) is None:
            raise TypeError(f"{cls.__name__} must define a `description` class member")
        integration_methods.cache_clear()

    def resolve(self, model: MixtureModel) -> "IntegrationMethod":
        """The concrete method used for `model`"""
        return self

    @abstractmethod
    def integrate(self, f: Callable[[np.ndarray], Any], interval: Tuple[float, float]) -> Any:
        raise NotImplementedError()

    @abstractmethod
    def expected_outer(
        self,
        model: MixtureModel,
        config: UnknownConfig,
        interval: Tuple[float, float],
        density_floor: float,
    ) -> np.ndarray:
        """E_g[s s^T] for the score vector s of `config`"""
        raise NotImplementedError()

    def to_obj(self) -> Dict[str, Any]:
        ret: Dict[str, Any] = {"name": self.name}
        ret.update({f.name: getattr(self, f.name) for f in fields(self)})  # type: ignore
        return ret

    def __str__(self):
        args = ", ".join(
            f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)  # type: ignore
        )
        return f"{self.name}({args})"


@functools.lru_cache()
def integration_methods() -> Dict[str, Type[IntegrationMethod]]:
    """All known integration methods, by name"""
    return {cls.name: cls for cls in IntegrationMethod.__subclasses__()}


def method_by_name(name: str) -> Type[IntegrationMethod]:
    try:
        return integration_methods()[name]
    except KeyError:
        raise KeyError(f"{name!r} is not a known integration method") from None


def method_from_obj(obj: Dict[str, Any], field_name: str = "method") -> IntegrationMethod:
    if not isinstance(obj, dict) or "name" not in obj:
        raise ConfigError(field_name, "expected an object with a `name`")
    try:
        cls = method_by_name(obj["name"])
    except KeyError as e:
        raise ConfigError(f"{field_name}.name", str(e.args[0]))
    known = {f.name: f for f in fields(cls)}  # type: ignore
    kwargs: Dict[str, Any] = {}
    for key, value in obj.items():
        if key == "name":
            continue
        if key not in known:
            raise ConfigError(f"{field_name}.{key}", f"not a parameter of {cls.name}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{field_name}.{key}", "expected a number")
        if known[key].type in (int, "int") and not float(value).is_integer():
            raise ConfigError(f"{field_name}.{key}", "expected an integer")
        kwargs[key] = int(value) if known[key].type in (int, "int") else float(value)
    try:
        return cls(**kwargs)  # type: ignore
    except ValueError as e:
        raise ConfigError(field_name, str(e))


@dataclass(frozen=True)
class Riemann(IntegrationMethod):
    name: ClassVar[str] = "riemann"
    description: ClassVar[str] = "midpoint rule on equal subintervals of the integration region"

    points: int = 550

    def __post_init__(self):
        if self.points < 2:
            raise ValueError(f"a Riemann sum needs at least 2 points, not {self.points}")

    def nodes(self, interval: Tuple[float, float]) -> np.ndarray:
        lo, hi = interval
        h = (hi - lo) / self.points
        return lo + h * (np.arange(self.points) + 0.5)

    def integrate(self, f, interval):
        lo, hi = interval
        xs = self.nodes(interval)
        values = np.asarray(f(xs), dtype=float)
        if values.shape[-1:] != xs.shape:
            values = np.broadcast_to(values[..., None], values.shape + xs.shape)
        return np.mean(values, axis=-1) * (hi - lo)

    def expected_outer(self, model, config, interval, density_floor):
        lo, hi = interval
        xs = self.nodes(interval)
        s = scores(model, config, xs, density_floor)
        g = _weighted_density(model, xs, density_floor)
        return (s * g) @ s.T * ((hi - lo) / self.points)


@dataclass(frozen=True)
class AdaptiveQuadrature(IntegrationMethod):
    name: ClassVar[str] = "quad"
    description: ClassVar[str] = "adaptive Gauss-Kronrod quadrature (scipy quad_vec)"

    rel_tol: float = 1e-8
    limit: int = 2000
    abs_tol: float = 1e-12

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, not {self.rel_tol!r}")
        if self.limit < 1:
            raise ValueError(f"limit must be positive, not {self.limit!r}")

    def _quad(self, f, interval, points=None):
        lo, hi = interval
        if points is not None:
            points = [p for p in points if lo < p < hi] or None
        result, error, info = quad_vec(
            f,
            lo,
            hi,
            epsabs=self.abs_tol,
            epsrel=self.rel_tol,
            limit=self.limit,
            points=points,
            full_output=True,
        )
        if info.status != 0 or not np.all(np.isfinite(result)):
            raise QuadratureError(
                f"adaptive quadrature over ({lo:g}, {hi:g}) failed after {info.intervals.shape[0]} "
                f"subdivisions: {info.message} (error estimate {np.max(error):g})"
            )
        return result

    def integrate(self, f, interval):
        return self._quad(lambda x: np.asarray(f(x), dtype=float), interval)

    def expected_outer(self, model, config, interval, density_floor):
        d = config.dimension(model.k)
        upper = np.triu_indices(d)

        def integrand(x):
            s = scores(model, config, [x], density_floor)[:, 0]
            g = _weighted_density(model, np.array([x]), density_floor)[0]
            return np.outer(s, s)[upper] * g

        values = self._quad(integrand, interval, points=sorted(model.locs))
        entries = np.zeros((d, d))
        entries[upper] = values
        return entries


@dataclass(frozen=True)
class MonteCarlo(IntegrationMethod):
    name: ClassVar[str] = "mc"
    description: ClassVar[str] = "sample average over draws from the mixture itself"

    draws: int = 1500
    seed: int = 0

    def __post_init__(self):
        if self.draws < 2:
            raise ValueError(f"Monte Carlo needs at least 2 draws, not {self.draws}")

    def integrate(self, f, interval):
        lo, hi = interval
        rng = np.random.default_rng(self.seed)
        xs = rng.uniform(lo, hi, self.draws)
        values = np.asarray(f(xs), dtype=float)
        if values.shape[-1:] != xs.shape:
            values = np.broadcast_to(values[..., None], values.shape + xs.shape)
        return np.mean(values, axis=-1) * (hi - lo)

    def expected_outer(self, model, config, interval, density_floor):
        # one shared draw for every entry keeps the estimate positive semi-definite
        xs = sample(model, self.draws, self.seed).values
        s = scores(model, config, xs, density_floor)
        return s @ s.T / self.draws


@dataclass(frozen=True)
class Auto(IntegrationMethod):
    name: ClassVar[str] = "auto"
    description: ClassVar[str] = (
        "Riemann sums unless a component scale is below `sigma_switch`, then Monte Carlo; "
        "adaptive quadrature for heavy-tailed components"
    )

    sigma_switch: float = 1e-2
    points: int = 550
    draws: int = 1500
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_switch > 0:
            raise ValueError(f"sigma_switch must be positive, not {self.sigma_switch!r}")

    def resolve(self, model: MixtureModel) -> IntegrationMethod:
        if not model.is_gaussian:
            return AdaptiveQuadrature()
        if float(np.min(model.scales)) >= self.sigma_switch:
            return Riemann(points=self.points)
        return MonteCarlo(draws=self.draws, seed=self.seed)

    def integrate(self, f, interval):
        return Riemann(points=self.points).integrate(f, interval)

    def expected_outer(self, model, config, interval, density_floor):
        return self.resolve(model).expected_outer(model, config, interval, density_floor)


@dataclass(frozen=True)
class IntegrationSpec:
    method: IntegrationMethod = field(default_factory=Auto)
    coverage: float = DEFAULT_COVERAGE
    density_floor: float = DEFAULT_DENSITY_FLOOR
    bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not 0 < self.coverage < 1:
            raise ValueError(f"coverage must be in (0, 1), not {self.coverage!r}")
        if not self.density_floor > 0:
            raise ValueError(f"density_floor must be positive, not {self.density_floor!r}")
        if self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"integration bounds must be finite with lo < hi: {self.bounds!r}")
            object.__setattr__(self, "bounds", (lo, hi))

    def with_method(self, method: IntegrationMethod) -> "IntegrationSpec":
        return replace(self, method=method)

    def to_obj(self) -> Dict[str, Any]:
        return {
            "method": self.method.to_obj(),
            "coverage": self.coverage,
            "density_floor": self.density_floor,
            "bounds": None if self.bounds is None else list(self.bounds),
        }

    @classmethod
    def from_obj(cls, obj: Dict[str, Any], field_name: str = "integration") -> "IntegrationSpec":
        if not isinstance(obj, dict):
            raise ConfigError(field_name, "expected an object")
        unknown = set(obj) - {"method", "coverage", "density_floor", "bounds"}
        if unknown:
            raise ConfigError(field_name, f"unexpected keys {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        if "method" in obj:
            kwargs["method"] = method_from_obj(obj["method"], f"{field_name}.method")
        for key in ("coverage", "density_floor"):
            if key in obj:
                if isinstance(obj[key], bool) or not isinstance(obj[key], (int, float)):
                    raise ConfigError(f"{field_name}.{key}", "expected a number")
                kwargs[key] = float(obj[key])
        bounds = obj.get("bounds")
        if bounds is not None:
            if not isinstance(bounds, list) or len(bounds) != 2:
                raise ConfigError(f"{field_name}.bounds", "expected [lo, hi]")
            kwargs["bounds"] = tuple(bounds)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(field_name, str(e))


def integration_bounds(model: MixtureModel, spec: IntegrationSpec) -> Tuple[float, float]:
    if spec.bounds is not None:
        return spec.bounds
    if model.is_gaussian:
        return coverage_interval(model, spec.coverage)
    return envelope(model, spec.coverage)


def fisher_region(
    model: MixtureModel, spec: IntegrationSpec, method: IntegrationMethod
) -> Tuple[float, float]:
    """The interval `method` integrates the Fisher entries of `model` over"""
    if isinstance(method, Riemann) and not model.is_gaussian and spec.bounds is None:
        # equal subintervals over a heavy-tailed envelope step over the unit-scale components
        raise UnsupportedFamilyError(
            f"Riemann sums need explicit integration bounds for the non-Gaussian model {model!s}; "
            "pass bounds or use the quad or auto method"
        )
    return integration_bounds(model, spec)


def integrate(
    f: Callable[[np.ndarray], Any], interval: Tuple[float, float], spec: IntegrationSpec
) -> float:
    lo, hi = interval
    if not lo < hi:
        raise ValueError(f"invalid integration interval ({lo!r}, {hi!r})")
    return float(spec.method.integrate(f, (lo, hi)))


@dataclass(frozen=True)
class FisherMatrix:
    labels: Tuple[str, ...]
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (len(self.labels), len(self.labels)):
            raise DimensionMismatchError(
                f"a Fisher matrix over {len(self.labels)} parameters cannot have shape "
                f"{entries.shape}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def d(self) -> int:
        return len(self.labels)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def logdet(self, tolerance: float = SINGULAR_TOLERANCE) -> float:
        """log det, or -inf when the smallest eigenvalue is below `tolerance` times the largest"""
        if not np.all(np.isfinite(self.entries)):
            return -math.inf
        eigenvalues = self.eigenvalues()
        largest = eigenvalues[-1]
        if not largest > 0 or eigenvalues[0] < tolerance * largest:
            return -math.inf
        return float(np.sum(np.log(eigenvalues)))

    def det(self) -> float:
        return float(np.linalg.det(self.entries))

    def submatrix(self, labels: Sequence[str]) -> "FisherMatrix":
        indices = [self.labels.index(label) for label in labels]
        return FisherMatrix(tuple(labels), self.entries[np.ix_(indices, indices)])

    def to_obj(self) -> Dict[str, Any]:
        return {"labels": list(self.labels), "entries": self.entries.tolist()}

    @classmethod
    def from_obj(cls, obj: Dict[str, Any]) -> "FisherMatrix":
        return cls(tuple(obj["labels"]), np.array(obj["entries"], dtype=float))

    def to_csv(self) -> str:
        rows = [",".join(self.labels)]
        rows.extend(",".join(f"{v:.17g}" for v in row) for row in self.entries)
        return "\n".join(rows) + "\n"

    def __eq__(self, other):
        return (
            isinstance(other, FisherMatrix)
            and self.labels == other.labels
            and np.array_equal(self.entries, other.entries)
        )

    def __hash__(self):
        return hash((self.labels, self.entries.tobytes()))


def transform_fisher(
    fisher: FisherMatrix, jacobian: np.ndarray, labels: Optional[Sequence[str]] = None
) -> FisherMatrix:
    """J^T F J, for the Jacobian d(old coordinates)/d(new coordinates)"""
    jacobian = np.asarray(jacobian, dtype=float)
    if jacobian.shape != (fisher.d, fisher.d):
        raise DimensionMismatchError(
            f"expected a {fisher.d}x{fisher.d} Jacobian but got shape {jacobian.shape}"
        )
    if labels is None:
        labels = fisher.labels
    elif len(labels) != fisher.d:
        raise DimensionMismatchError(f"expected {fisher.d} labels but got {len(labels)}")
    return FisherMatrix(tuple(labels), _mirror_upper(jacobian.T @ fisher.entries @ jacobian))


def cache_key(model: MixtureModel, config: UnknownConfig, spec: IntegrationSpec) -> str:
    canonical = json.dumps(
        {"model": model.to_obj(), "config": config.value, "integration": spec.to_obj()},
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class FisherCache(ABC):
    """An abstract base class for a store of computed Fisher matrices"""

    def __init__(self):
        self._entries: int = 0

    def open(self):
        pass

    def close(self):
        pass

    def __enter__(self):
        if self._entries == 0:
            self.open()
        self._entries += 1
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self._entries -= 1
        if self._entries == 0:
            self.close()

    @abstractmethod
    def __len__(self) -> int:
        raise NotImplementedError()

    @abstractmethod
    def __iter__(self) -> Iterator[str]:
        """Iterates over the keys of this cache"""
        raise NotImplementedError()

    @abstractmethod
    def get(self, key: str) -> Optional[FisherMatrix]:
        raise NotImplementedError()

    @abstractmethod
    def put(self, key: str, fisher: FisherMatrix):
        raise NotImplementedError()

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None


class InMemoryFisherCache(FisherCache):
    def __init__(self):
        super().__init__()
        self._matrices: Dict[str, FisherMatrix] = {}
        self._lock = Lock()

    def __len__(self):
        return len(self._matrices)

    def __iter__(self):
        with self._lock:
            keys = list(self._matrices)
        yield from keys

    def get(self, key):
        with self._lock:
            return self._matrices.get(key)

    def put(self, key, fisher):
        with self._lock:
            self._matrices[key] = fisher


def _compute_entries(
    model: MixtureModel, config: UnknownConfig, spec: IntegrationSpec
) -> np.ndarray:
    method = spec.method.resolve(model)
    interval = fisher_region(model, spec, method)
    try:
        entries = method.expected_outer(model, config, interval, spec.density_floor)
    except QuadratureError as e:
        fallback = MonteCarlo(seed=getattr(spec.method, "seed", 0))
        logger.warning(f"{e!s}; falling back to {fallback!s} for {model!s}")
        entries = fallback.expected_outer(model, config, interval, spec.density_floor)
        if not np.all(np.isfinite(entries)):
            raise QuadratureError(f"the Monte Carlo fallback for {model!s} is not finite")
    return _mirror_upper(entries)


def fisher_matrix(
    model: MixtureModel,
    config: UnknownConfig,
    spec: Optional[IntegrationSpec] = None,
    cache: Optional[FisherCache] = None,
) -> FisherMatrix:
    if spec is None:
        spec = IntegrationSpec()
    config.check(model)
    key: Optional[str] = None
    if cache is not None:
        key = cache_key(model, config, spec)
        cached = cache.get(key)
        if cached is not None:
            return cached
    fisher = FisherMatrix(tuple(config.labels(model.k)), _compute_entries(model, config, spec))
    if cache is not None and key is not None:
        cache.put(key, fisher)
    return fisher


def fisher_element(
    model: MixtureModel,
    config: UnknownConfig,
    a: int,
    b: int,
    spec: Optional[IntegrationSpec] = None,
) -> float:
    """
    A single Fisher entry. Unlike `fisher_matrix`, a failing adaptive quadrature raises
    `QuadratureError` so the caller can choose its own fallback.
    """
    if spec is None:
        spec = IntegrationSpec()
    config.check(model)
    d = config.dimension(model.k)
    if not (0 <= a < d and 0 <= b < d):
        raise IndexError(f"element ({a}, {b}) is outside a {d}x{d} Fisher matrix")
    method = spec.method.resolve(model)
    entries = method.expected_outer(
        model, config, fisher_region(model, spec, method), spec.density_floor
    )
    a, b = min(a, b), max(a, b)
    return float(entries[a, b])
