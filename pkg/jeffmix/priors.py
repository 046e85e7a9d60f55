from dataclasses import dataclass
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .fisher import (
    FisherCache,
    IntegrationSpec,
    QuadratureError,
    UnknownConfig,
    fisher_element,
    fisher_matrix,
)
from .mixture import DataSet, MixtureModel, log_likelihood
from .reparam import ReparamParams, natural_to_reparam, reparam_labels, reparam_to_natural

logger = logging.getLogger(__name__)

NEG_INFINITY = -math.inf
LOG_HALF = math.log(0.5)


def jeffreys_log_prior(
    model: MixtureModel,
    config: UnknownConfig,
    spec: Optional[IntegrationSpec] = None,
    cache: Optional[FisherCache] = None,
) -> float:
    """Unnormalized log Jeffreys prior, 1/2 log det I(theta)"""
    try:
        fisher = fisher_matrix(model, config, spec, cache=cache)
    except (QuadratureError, np.linalg.LinAlgError) as e:
        logger.warning(f"Fisher information failed at {model!s}: {e!s}")
        return NEG_INFINITY
    return 0.5 * fisher.logdet()


@dataclass(frozen=True)
class DeltaConditioning:
    """The fixed parameters of a two-component mixture when only the offset varies"""

    loc: float = 0.0
    scale: float = 1.0
    scale_ratio: float = 1.0
    weight: float = 0.5

    def model(self, delta: float) -> MixtureModel:
        return reparam_to_natural(
            ReparamParams(
                loc=self.loc,
                scale=self.scale,
                offsets=(delta,),
                scale_ratios=(self.scale_ratio,),
                stick_weights=(self.weight,),
            )
        )


DELTA_INDEX = reparam_labels(2).index("delta")


def conditional_delta_log_prior(
    delta: float, fixed: DeltaConditioning, spec: Optional[IntegrationSpec] = None
) -> float:
    """1/2 log I_delta,delta: the Jeffreys prior on the offset with everything else held fixed"""
    model = fixed.model(delta)
    try:
        information = fisher_element(
            model, UnknownConfig.ALL_REPARAM, DELTA_INDEX, DELTA_INDEX, spec
        )
    except QuadratureError as e:
        logger.warning(f"Fisher information failed at delta={delta!r}: {e!s}")
        return NEG_INFINITY
    if not information > 0:
        return NEG_INFINITY
    return 0.5 * math.log(information)


def rm_sigma_log_prior(sigma: float) -> float:
    """log of 1/2 U(0, 1) + 1/2 (1/U(0, 1)), a proper prior on a scale ratio"""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, not {sigma!r}")
    if sigma <= 1.0:
        return LOG_HALF
    return LOG_HALF - 2.0 * math.log(sigma)


def hierarchical_sigma_log_prior(sigma: float, zeta: float) -> float:
    """Uniform on (0, zeta] with mass 1/2, density zeta / sigma^2 above zeta with mass 1/2"""
    if not (sigma > 0 and zeta > 0):
        return NEG_INFINITY
    if sigma <= zeta:
        return LOG_HALF - math.log(zeta)
    return LOG_HALF + math.log(zeta) - 2.0 * math.log(sigma)


def log_dirichlet(weights: Sequence[float], alpha: float = 0.5) -> float:
    """Dirichlet(alpha, ..., alpha) log density with respect to the first k - 1 weights"""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0) or abs(math.fsum(w) - 1.0) > 1e-12:
        return NEG_INFINITY
    k = len(w)
    return float(gammaln(k * alpha) - k * gammaln(alpha) + (alpha - 1.0) * np.sum(np.log(w)))


@dataclass(frozen=True)
class HierarchicalParams:
    weights: Tuple[float, ...]
    means: Tuple[float, ...]
    sds: Tuple[float, ...]
    hyper_mean: float
    hyper_scale: float

    def __post_init__(self):
        for name in ("weights", "means", "sds"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (len(self.weights) == len(self.means) == len(self.sds)):
            raise ValueError("weights, means and sds must all have length k")

    @property
    def k(self) -> int:
        return len(self.means)

    def in_support(self) -> bool:
        return (
            all(w > 0 for w in self.weights)
            and abs(math.fsum(self.weights) - 1.0) <= 1e-12
            and all(s > 0 for s in self.sds)
            and self.hyper_scale > 0
            and math.isfinite(self.hyper_mean)
        )

    def to_model(self) -> MixtureModel:
        return MixtureModel.gaussian(self.weights, self.means, self.sds)

    @classmethod
    def from_model(
        cls, model: MixtureModel, hyper_mean: float, hyper_scale: float
    ) -> "HierarchicalParams":
        return cls(
            weights=model.weights,
            means=tuple(model.locs),
            sds=tuple(model.scales),
            hyper_mean=hyper_mean,
            hyper_scale=hyper_scale,
        )


def hierarchical_log_prior(params: HierarchicalParams) -> float:
    if not params.in_support():
        return NEG_INFINITY
    zeta = params.hyper_scale
    means = np.asarray(params.means)
    log_prior = float(np.sum(stats.norm.logpdf(means, loc=params.hyper_mean, scale=zeta)))
    log_prior += math.fsum(hierarchical_sigma_log_prior(s, zeta) for s in params.sds)
    log_prior += log_dirichlet(params.weights, 0.5)
    # pi(mu0, zeta0) proportional to 1 / zeta0
    return log_prior - math.log(zeta)


def hierarchical_log_posterior(params: HierarchicalParams, data: DataSet) -> float:
    if data.n < 1:
        raise ValueError("the hierarchical posterior needs at least one observation")
    log_prior = hierarchical_log_prior(params)
    if log_prior == NEG_INFINITY:
        return NEG_INFINITY
    return log_prior + log_likelihood(params.to_model(), data)


def jeffreys_rm_sigma_log_prior(
    model: MixtureModel,
    spec: Optional[IntegrationSpec] = None,
    cache: Optional[FisherCache] = None,
) -> float:
    """
    Proper scale-ratio prior times the Jeffreys prior of the remaining reference coordinates
    conditional on the scale ratios.
    """
    ratios = natural_to_reparam(model).scale_ratios
    try:
        fisher = fisher_matrix(model, UnknownConfig.ALL_REPARAM, spec, cache=cache)
    except (QuadratureError, np.linalg.LinAlgError) as e:
        logger.warning(f"Fisher information failed at {model!s}: {e!s}")
        return NEG_INFINITY
    free = [label for label in fisher.labels if not label.startswith("sigma")]
    return math.fsum(rm_sigma_log_prior(r) for r in ratios) + 0.5 * fisher.submatrix(
        free
    ).logdet()
