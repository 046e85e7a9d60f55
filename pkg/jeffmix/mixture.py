from dataclasses import dataclass, field
from enum import Enum
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .jeffmix import ConfigError

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-12
MAX_ALLOCATIONS = 10 ** 6

ArrayLike = Union[float, Sequence[float], np.ndarray]


class CombinatorialBudgetError(ValueError):
    pass


class UnsupportedFamilyError(ValueError):
    pass


class Family(Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student-t"

    @classmethod
    def parse(cls, name: str) -> "Family":
        for family in cls:
            if family.value == name.lower():
                return family
        raise ValueError(f"{name!r} is not a known component family")


@dataclass(frozen=True)
class Component:
    """A location-scale component: Gaussian, or Student-t with `scale` as a scale factor"""

    loc: float
    scale: float
    family: Family = Family.GAUSSIAN
    df: Optional[float] = None

    def __post_init__(self):
        if not math.isfinite(self.loc):
            raise ValueError(f"component location must be finite, not {self.loc!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"component scale must be positive, not {self.scale!r}")
        if self.family is Family.STUDENT_T:
            if self.df is None or not self.df > 0:
                raise ValueError(f"a student-t component needs df > 0, not {self.df!r}")
        elif self.df is not None:
            raise ValueError("only student-t components take a `df`")

    @property
    def is_gaussian(self) -> bool:
        return self.family is Family.GAUSSIAN

    def logpdf(self, x: ArrayLike) -> np.ndarray:
        if self.is_gaussian:
            return stats.norm.logpdf(x, loc=self.loc, scale=self.scale)
        return stats.t.logpdf(x, self.df, loc=self.loc, scale=self.scale)

    def pdf(self, x: ArrayLike) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf(self, x: ArrayLike) -> np.ndarray:
        if self.is_gaussian:
            return stats.norm.cdf(x, loc=self.loc, scale=self.scale)
        return stats.t.cdf(x, self.df, loc=self.loc, scale=self.scale)

    def interval(self, coverage: float) -> Tuple[float, float]:
        """Central interval holding `coverage` of this component's mass"""
        if self.is_gaussian:
            lo, hi = stats.norm.interval(coverage, loc=self.loc, scale=self.scale)
        else:
            lo, hi = stats.t.interval(coverage, self.df, loc=self.loc, scale=self.scale)
        return float(lo), float(hi)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.is_gaussian:
            z = rng.standard_normal(size)
        else:
            z = rng.standard_t(self.df, size)
        return self.loc + self.scale * z

    def to_obj(self) -> Dict[str, Any]:
        ret: Dict[str, Any] = {"family": self.family.value, "loc": self.loc, "scale": self.scale}
        if self.df is not None:
            ret["df"] = self.df
        return ret

    @classmethod
    def from_obj(cls, obj: Dict[str, Any], field_name: str = "component") -> "Component":
        if not isinstance(obj, dict):
            raise ConfigError(field_name, "expected an object")
        unknown = set(obj) - {"family", "loc", "scale", "df"}
        if unknown:
            raise ConfigError(field_name, f"unexpected keys {sorted(unknown)}")
        try:
            family = Family.parse(obj.get("family", Family.GAUSSIAN.value))
        except (ValueError, AttributeError) as e:
            raise ConfigError(f"{field_name}.family", str(e))
        for key in ("loc", "scale"):
            if not isinstance(obj.get(key), (int, float)) or isinstance(obj.get(key), bool):
                raise ConfigError(f"{field_name}.{key}", "expected a number")
        df = obj.get("df")
        if df is not None and not isinstance(df, (int, float)):
            raise ConfigError(f"{field_name}.df", "expected a number")
        try:
            return cls(
                loc=float(obj["loc"]),
                scale=float(obj["scale"]),
                family=family,
                df=None if df is None else float(df),
            )
        except ValueError as e:
            raise ConfigError(field_name, str(e))


def gaussian(loc: float, scale: float) -> Component:
    return Component(loc=float(loc), scale=float(scale))


def student_t(df: float, loc: float, scale: float) -> Component:
    return Component(loc=float(loc), scale=float(scale), family=Family.STUDENT_T, df=float(df))


@dataclass(frozen=True)
class MixtureModel:
    components: Tuple[Component, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.components) < 1:
            raise ValueError("a mixture needs at least one component")
        if len(self.weights) != len(self.components):
            raise ValueError(
                f"expected {len(self.components)} weights but got {len(self.weights)}"
            )
        if any(not (w >= 0) for w in self.weights):
            raise ValueError(f"mixture weights must be non-negative: {self.weights!r}")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"mixture weights must sum to 1, not {total!r}")

    @classmethod
    def gaussian(
        cls, weights: Iterable[float], locs: Iterable[float], scales: Iterable[float]
    ) -> "MixtureModel":
        return cls(
            components=tuple(gaussian(m, s) for m, s in zip(locs, scales)), weights=tuple(weights)
        )

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def is_gaussian(self) -> bool:
        return all(c.is_gaussian for c in self.components)

    @property
    def locs(self) -> np.ndarray:
        return np.array([c.loc for c in self.components])

    @property
    def scales(self) -> np.ndarray:
        return np.array([c.scale for c in self.components])

    @property
    def weight_array(self) -> np.ndarray:
        return np.array(self.weights)

    def component_logpdfs(self, xs: ArrayLike) -> np.ndarray:
        """Returns a (k, N) array of per-component log densities"""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return np.stack([c.logpdf(xs) for c in self.components])

    def logpdf(self, xs: ArrayLike) -> np.ndarray:
        with np.errstate(divide="ignore"):
            log_weights = np.log(self.weight_array)
        return logsumexp(self.component_logpdfs(xs) + log_weights[:, None], axis=0)

    def pdf(self, xs: ArrayLike) -> np.ndarray:
        return np.exp(self.logpdf(xs))

    def cdf(self, xs: ArrayLike) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return sum(w * c.cdf(xs) for w, c in zip(self.weights, self.components))

    def permuted(self, order: Sequence[int]) -> "MixtureModel":
        if sorted(order) != list(range(self.k)):
            raise ValueError(f"{order!r} is not a permutation of {self.k} components")
        return MixtureModel(
            components=tuple(self.components[i] for i in order),
            weights=tuple(self.weights[i] for i in order),
        )

    def shifted(self, offset: float) -> "MixtureModel":
        return MixtureModel(
            components=tuple(
                Component(c.loc + offset, c.scale, c.family, c.df) for c in self.components
            ),
            weights=self.weights,
        )

    def to_obj(self) -> Dict[str, Any]:
        return {"components": [c.to_obj() for c in self.components], "weights": list(self.weights)}

    def dumps(self) -> str:
        return json.dumps(self.to_obj())

    @classmethod
    def from_obj(cls, obj: Dict[str, Any], field_name: str = "model") -> "MixtureModel":
        if not isinstance(obj, dict):
            raise ConfigError(field_name, "expected an object")
        components = obj.get("components")
        weights = obj.get("weights")
        if not isinstance(components, list) or not components:
            raise ConfigError(f"{field_name}.components", "expected a non-empty list")
        if not isinstance(weights, list) or not all(
            isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights
        ):
            raise ConfigError(f"{field_name}.weights", "expected a list of numbers")
        parsed = [
            Component.from_obj(c, f"{field_name}.components[{i}]")
            for i, c in enumerate(components)
        ]
        try:
            return cls(components=tuple(parsed), weights=tuple(float(w) for w in weights))
        except ValueError as e:
            raise ConfigError(f"{field_name}.weights", str(e))

    @classmethod
    def loads(cls, text: str) -> "MixtureModel":
        return cls.from_obj(json.loads(text))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MixtureModel":
        with open(path, "r") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(str(path), f"invalid JSON: {e!s}")
        return cls.from_obj(obj)

    def __str__(self):
        parts = []
        for w, c in zip(self.weights, self.components):
            if c.is_gaussian:
                parts.append(f"{w:g}·N({c.loc:g},{c.scale:g})")
            else:
                parts.append(f"{w:g}·t({c.df:g},{c.loc:g},{c.scale:g})")
        return " + ".join(parts)


@dataclass(frozen=True)
class DataSet:
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: Optional[int] = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if values.ndim != 1:
            raise ValueError("a data set is a one-dimensional sequence of values")
        if not np.all(np.isfinite(values)):
            raise ValueError("data values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return self.n

    @property
    def data_range(self) -> Tuple[float, float]:
        if self.n == 0:
            raise ValueError("an empty data set has no range")
        return float(np.min(self.values)), float(np.max(self.values))

    def to_csv(self) -> str:
        return "x\n" + "".join(f"{v:.17g}\n" for v in self.values)

    @classmethod
    def from_csv(cls, text: str) -> "DataSet":
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines or lines[0] != "x":
            raise ConfigError("data", 'expected a single-column CSV with header "x"')
        try:
            values = [float(line) for line in lines[1:]]
        except ValueError as e:
            raise ConfigError("data", str(e))
        return cls(np.array(values))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DataSet":
        with open(path, "r") as f:
            return cls.from_csv(f.read())


def density(model: MixtureModel, x: float) -> float:
    return float(model.pdf(x)[0])


def log_likelihood(model: MixtureModel, data: DataSet) -> float:
    if data.n == 0:
        return 0.0
    return float(np.sum(model.logpdf(data.values)))


def allocation_likelihood(model: MixtureModel, data: DataSet) -> float:
    """The likelihood as an explicit sum over all k^n allocations of observations to components"""
    n = data.n
    if model.k ** n > MAX_ALLOCATIONS:
        raise CombinatorialBudgetError(
            f"{model.k}^{n} allocations exceeds the budget of {MAX_ALLOCATIONS}"
        )
    if n == 0:
        return 1.0
    weighted = model.weight_array[:, None] * np.exp(model.component_logpdfs(data.values))
    if model.k == 1:
        return math.prod(weighted[0])
    # every allocation z in {0..k-1}^n, one per row
    allocations = np.indices((model.k,) * n).reshape(n, -1).T
    terms = weighted[allocations, np.arange(n)].prod(axis=1)
    return math.fsum(terms)


def sample(model: MixtureModel, n: int, seed: Optional[int] = None) -> DataSet:
    if n < 0:
        raise ValueError(f"cannot draw {n} samples")
    rng = np.random.default_rng(seed)
    labels = rng.choice(model.k, size=n, p=model.weight_array)
    values = np.empty(n)
    for i, component in enumerate(model.components):
        mask = labels == i
        values[mask] = component.draw(rng, int(mask.sum()))
    return DataSet(values, seed=seed)


def coverage_interval(model: MixtureModel, coverage: float) -> Tuple[float, float]:
    if not 0 < coverage < 1:
        raise ValueError(f"coverage must be in (0, 1), not {coverage!r}")
    if not model.is_gaussian:
        raise UnsupportedFamilyError(
            "coverage intervals are only defined for Gaussian mixtures; pass explicit bounds"
        )
    return envelope(model, coverage)


def envelope(model: MixtureModel, coverage: float) -> Tuple[float, float]:
    """Smallest interval containing every component's central `coverage` interval"""
    intervals: List[Tuple[float, float]] = [c.interval(coverage) for c in model.components]
    return min(lo for lo, _ in intervals), max(hi for _, hi in intervals)
