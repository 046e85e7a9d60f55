"""
Flat parameter vectors for the unknown blocks of a mixture, and the prior kinds that score them.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
import functools
import math
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fisher import FisherCache, IntegrationSpec, UnknownConfig
from .mixture import DataSet, MixtureModel, log_likelihood
from .priors import (
    NEG_INFINITY,
    HierarchicalParams,
    hierarchical_log_prior,
    jeffreys_log_prior,
    jeffreys_rm_sigma_log_prior,
)
from .reparam import ReparamParams, natural_to_reparam, reparam_to_natural


class BlockKind(Enum):
    LOCATION = "location"
    SCALE = "scale"
    SIMPLEX = "simplex"
    UNIT = "unit"


@dataclass(frozen=True)
class Block:
    name: str
    kind: BlockKind
    indices: Tuple[int, ...]


class ParameterLayout:
    """Maps a flat vector over the unknown parameters of `config` onto a mixture"""

    def __init__(
        self, template: MixtureModel, config: UnknownConfig, hyperparameters: bool = False
    ):
        config.check(template)
        self.template: MixtureModel = template
        self.config: UnknownConfig = config
        self.hyperparameters: bool = hyperparameters
        k = template.k
        self.labels: List[str] = config.labels(k)
        blocks: List[Block] = []
        if config is UnknownConfig.ALL_REPARAM:
            m = k - 1
            blocks.append(Block("mu", BlockKind.LOCATION, (0,)))
            blocks.append(Block("tau", BlockKind.SCALE, (1,)))
            blocks.append(Block("offsets", BlockKind.LOCATION, tuple(range(2, 2 + m))))
            blocks.append(Block("scale_ratios", BlockKind.SCALE, tuple(range(2 + m, 2 + 2 * m))))
            blocks.append(Block("sticks", BlockKind.UNIT, tuple(range(2 + 2 * m, 2 + 3 * m))))
        else:
            start = 0
            for name, kind, present, size in (
                ("means", BlockKind.LOCATION, config.has_means, k),
                ("scales", BlockKind.SCALE, config.has_scales, k),
                ("weights", BlockKind.SIMPLEX, config.has_weights, k - 1),
            ):
                if present:
                    blocks.append(Block(name, kind, tuple(range(start, start + size))))
                    start += size
        if hyperparameters:
            d = len(self.labels)
            blocks.append(Block("hyper_mean", BlockKind.LOCATION, (d,)))
            blocks.append(Block("hyper_scale", BlockKind.SCALE, (d + 1,)))
            self.labels.extend(["mu0", "zeta0"])
        self.blocks: Tuple[Block, ...] = tuple(blocks)

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def block(self, name: str) -> Block:
        for block in self.blocks:
            if block.name == name:
                return block
        raise KeyError(name)

    def in_support(self, vector: Sequence[float]) -> bool:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dimension,) or not np.all(np.isfinite(vector)):
            return False
        for block in self.blocks:
            values = vector[list(block.indices)]
            if block.kind is BlockKind.SCALE and np.any(values <= 0):
                return False
            elif block.kind is BlockKind.UNIT and np.any((values <= 0) | (values >= 1)):
                return False
            elif block.kind is BlockKind.SIMPLEX and (
                np.any(values <= 0) or math.fsum(values) >= 1.0
            ):
                return False
        return True

    def _values(self, vector: np.ndarray, name: str) -> np.ndarray:
        return vector[list(self.block(name).indices)]

    def to_model(self, vector: Sequence[float]) -> MixtureModel:
        vector = np.asarray(vector, dtype=float)
        if not self.in_support(vector):
            raise ValueError(f"{vector!r} is outside the parameter space")
        if self.config is UnknownConfig.ALL_REPARAM:
            m = self.template.k - 1
            return reparam_to_natural(ReparamParams.from_vector(vector[: 2 + 3 * m]))
        template = self.template
        locs = self._values(vector, "means") if self.config.has_means else template.locs
        scales = self._values(vector, "scales") if self.config.has_scales else template.scales
        if self.config.has_weights:
            free = list(self._values(vector, "weights"))
            weights = free + [1.0 - math.fsum(free)]
        else:
            weights = list(template.weights)
        if template.is_gaussian:
            return MixtureModel.gaussian(weights, locs, scales)
        # only the weights of non-Gaussian templates can vary
        return MixtureModel(components=template.components, weights=tuple(weights))

    def hyper(self, vector: Sequence[float]) -> Tuple[float, float]:
        if not self.hyperparameters:
            raise ValueError("this layout has no hyperparameters")
        return float(vector[-2]), float(vector[-1])

    def from_model(
        self, model: MixtureModel, hyper: Optional[Tuple[float, float]] = None
    ) -> np.ndarray:
        if self.config is UnknownConfig.ALL_REPARAM:
            values = list(natural_to_reparam(model).to_vector())
        else:
            values = []
            if self.config.has_means:
                values.extend(model.locs)
            if self.config.has_scales:
                values.extend(model.scales)
            if self.config.has_weights:
                values.extend(model.weights[:-1])
        if self.hyperparameters:
            if hyper is None:
                raise ValueError("this layout needs hyperparameter values")
            values.extend(hyper)
        return np.array(values, dtype=float)


class PriorKind(ABC):
    name: ClassVar[str]
    description: ClassVar[str]
    needs_hyperparameters: ClassVar[bool] = False

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if getattr(cls, "name", None) is None:
            raise TypeError(f"{cls.__name__} must define a `name` class member")
        elif getattr(cls, "description", None) is None:
            raise TypeError(f"{cls.__name__} must define a `description` class member")
        prior_kinds.cache_clear()

    def supports(self, config: UnknownConfig) -> bool:
        return True

    def check(self, config: UnknownConfig):
        if not self.supports(config):
            raise ValueError(
                f"the {self.name} prior does not support the {config.value} configuration"
            )

    def layout(self, template: MixtureModel, config: UnknownConfig) -> ParameterLayout:
        self.check(config)
        return ParameterLayout(template, config, hyperparameters=self.needs_hyperparameters)

    @abstractmethod
    def log_prior(
        self,
        layout: ParameterLayout,
        vector: np.ndarray,
        model: MixtureModel,
        spec: IntegrationSpec,
        cache: Optional[FisherCache] = None,
    ) -> float:
        raise NotImplementedError()


@functools.lru_cache()
def prior_kinds() -> Dict[str, PriorKind]:
    """The default instance of every known prior kind, by name"""
    return {cls.name: cls() for cls in PriorKind.__subclasses__()}  # type: ignore


def prior_by_name(name: str) -> PriorKind:
    try:
        return prior_kinds()[name]
    except KeyError:
        raise KeyError(
            f"{name!r} is not a known prior; expected one of {', '.join(sorted(prior_kinds()))}"
        ) from None


class JeffreysPrior(PriorKind):
    name: ClassVar[str] = "jeffreys"
    description: ClassVar[str] = "square root of the Fisher information determinant"

    def log_prior(self, layout, vector, model, spec, cache=None):
        return jeffreys_log_prior(model, layout.config, spec, cache=cache)


class ConstantMeansPrior(PriorKind):
    name: ClassVar[str] = "constant-means"
    description: ClassVar[str] = "flat prior on the component means"

    def supports(self, config):
        return config is UnknownConfig.MEANS_ONLY

    def log_prior(self, layout, vector, model, spec, cache=None):
        return 0.0


class HierarchicalPrior(PriorKind):
    name: ClassVar[str] = "hierarchical"
    description: ClassVar[str] = (
        "normal means and half-uniform/half-inverse-uniform scales around shared hyperparameters"
    )
    needs_hyperparameters: ClassVar[bool] = True

    def supports(self, config):
        return config is UnknownConfig.ALL

    def log_prior(self, layout, vector, model, spec, cache=None):
        hyper_mean, hyper_scale = layout.hyper(vector)
        params = HierarchicalParams.from_model(model, hyper_mean, hyper_scale)
        return hierarchical_log_prior(params)


class JeffreysRmSigmaPrior(PriorKind):
    name: ClassVar[str] = "jeffreys-rm-sigma"
    description: ClassVar[str] = (
        "proper prior on the scale ratios with the conditional Jeffreys prior on the rest"
    )

    def supports(self, config):
        return config is UnknownConfig.ALL_REPARAM

    def log_prior(self, layout, vector, model, spec, cache=None):
        return jeffreys_rm_sigma_log_prior(model, spec, cache=cache)


class LogPosterior:
    """Callable log posterior over the flat vectors of `layout`"""

    def __init__(
        self,
        layout: ParameterLayout,
        prior: PriorKind,
        data: DataSet,
        spec: Optional[IntegrationSpec] = None,
        cache: Optional[FisherCache] = None,
    ):
        prior.check(layout.config)
        if prior.needs_hyperparameters and not layout.hyperparameters:
            raise ValueError(f"the {prior.name} prior needs a layout with hyperparameters")
        self.layout: ParameterLayout = layout
        self.prior: PriorKind = prior
        self.data: DataSet = data
        self.spec: IntegrationSpec = IntegrationSpec() if spec is None else spec
        self.cache: Optional[FisherCache] = cache

    def log_prior(self, vector: Sequence[float]) -> float:
        vector = np.asarray(vector, dtype=float)
        if not self.layout.in_support(vector):
            return NEG_INFINITY
        try:
            model = self.layout.to_model(vector)
        except ValueError:
            # overflowing locations or scales in the reference coordinates
            return NEG_INFINITY
        value = self.prior.log_prior(self.layout, vector, model, self.spec, self.cache)
        return value if not math.isnan(value) else NEG_INFINITY

    def log_likelihood(self, vector: Sequence[float]) -> float:
        return log_likelihood(self.layout.to_model(vector), self.data)

    def __call__(self, vector: Sequence[float]) -> float:
        log_prior = self.log_prior(vector)
        if log_prior == NEG_INFINITY:
            return NEG_INFINITY
        return log_prior + self.log_likelihood(vector)
