from dataclasses import dataclass, field, replace
import logging
import math
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import ndtr
from tqdm import tqdm

from .fisher import UnknownConfig
from .jeffmix import ConfigError
from .mixture import DataSet, MixtureModel, log_likelihood
from .posterior import BlockKind, ParameterLayout

logger = logging.getLogger(__name__)

DEFAULT_INITIAL_SCALES: Dict[BlockKind, float] = {
    BlockKind.LOCATION: 0.5,
    BlockKind.SCALE: 0.2,
    BlockKind.SIMPLEX: 0.1,
    BlockKind.UNIT: 0.1,
}


class InitializationError(ValueError):
    pass


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 100_000
    burnin: int = 10_000
    adapt_window: int = 100
    accept_band: Tuple[float, float] = (0.2, 0.4)
    seed: int = 0
    initial_scales: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "accept_band", tuple(float(v) for v in self.accept_band))
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, not {self.iterations!r}")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError(
                f"burnin ({self.burnin}) must be non-negative and below iterations "
                f"({self.iterations})"
            )
        if self.adapt_window < 1:
            raise ValueError(f"adapt_window must be positive, not {self.adapt_window!r}")
        lo, hi = self.accept_band
        if not 0 < lo < hi < 1:
            raise ValueError(f"the acceptance band {self.accept_band!r} must lie within (0, 1)")
        for name, scale in self.initial_scales.items():
            if not scale > 0:
                raise ValueError(f"the initial scale of block {name!r} must be positive")

    def with_seed(self, seed: int) -> "McmcConfig":
        return replace(self, seed=seed)

    def to_obj(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "burnin": self.burnin,
            "adapt_window": self.adapt_window,
            "accept_band": list(self.accept_band),
            "seed": self.seed,
            "initial_scales": dict(self.initial_scales),
        }

    @classmethod
    def from_obj(cls, obj: Dict[str, Any], field_name: str = "mcmc") -> "McmcConfig":
        if not isinstance(obj, dict):
            raise ConfigError(field_name, "expected an object")
        unknown = set(obj) - {
            "iterations",
            "burnin",
            "adapt_window",
            "accept_band",
            "seed",
            "initial_scales",
        }
        if unknown:
            raise ConfigError(field_name, f"unexpected keys {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        for key in ("iterations", "burnin", "adapt_window", "seed"):
            if key in obj:
                value = obj[key]
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{field_name}.{key}", "expected an integer")
                if not float(value).is_integer():
                    raise ConfigError(f"{field_name}.{key}", "expected an integer")
                kwargs[key] = int(value)
        if "accept_band" in obj:
            band = obj["accept_band"]
            if not isinstance(band, list) or len(band) != 2:
                raise ConfigError(f"{field_name}.accept_band", "expected [low, high]")
            kwargs["accept_band"] = tuple(band)
        if "initial_scales" in obj:
            if not isinstance(obj["initial_scales"], dict):
                raise ConfigError(f"{field_name}.initial_scales", "expected an object")
            kwargs["initial_scales"] = {k: float(v) for k, v in obj["initial_scales"].items()}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(field_name, str(e))


@dataclass(frozen=True)
class Chain:
    labels: Tuple[str, ...]
    states: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    updated_block: np.ndarray
    block_names: Tuple[str, ...]
    block_scales: np.ndarray
    burnin: int

    @property
    def iterations(self) -> int:
        return len(self.log_post)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def post_burnin(self) -> np.ndarray:
        return self.states[self.burnin :]

    def accept_rate(self, post_burnin: bool = True) -> float:
        accepted = self.accepted[self.burnin :] if post_burnin else self.accepted
        if len(accepted) == 0:
            return 0.0
        return float(np.mean(accepted))

    def to_csv(self) -> str:
        rows = [",".join(["iteration", *self.labels, "log_post", "accepted"])]
        for i in range(self.iterations):
            values = ",".join(f"{v:.17g}" for v in self.states[i])
            rows.append(f"{i},{values},{self.log_post[i]:.17g},{int(self.accepted[i])}")
        return "\n".join(rows) + "\n"


def adapt_scales(scales, recent_accept_rate: float, band: Tuple[float, float]):
    lo, hi = band
    if recent_accept_rate < lo:
        return scales * 0.9
    elif recent_accept_rate > hi:
        return scales * 1.1
    return scales


def _log_truncation_mass(center: np.ndarray, scale: float) -> np.ndarray:
    """log of the N(center, scale) mass on (0, 1)"""
    return np.log(ndtr((1.0 - center) / scale) - ndtr(-center / scale))


def _propose(
    kind: BlockKind, current: np.ndarray, scale: float, rng: np.random.Generator
) -> Tuple[Optional[np.ndarray], float]:
    """A proposal for one block and its log proposal-density correction, or None if outside"""
    if kind is BlockKind.LOCATION:
        return current + scale * rng.standard_normal(current.shape), 0.0
    elif kind is BlockKind.SCALE:
        proposed = current * np.exp(scale * rng.standard_normal(current.shape))
        # log-normal proposal: q(x | x') / q(x' | x) = x' / x
        return proposed, float(np.sum(np.log(proposed) - np.log(current)))
    proposed = stats.truncnorm.rvs(
        a=-current / scale,
        b=(1.0 - current) / scale,
        loc=current,
        scale=scale,
        size=current.shape,
        random_state=rng,
    )
    proposed = np.atleast_1d(proposed)
    if np.any(proposed <= 0) or np.any(proposed >= 1):
        return None, 0.0
    if kind is BlockKind.SIMPLEX and math.fsum(proposed) >= 1.0:
        return None, 0.0
    correction = float(
        np.sum(_log_truncation_mass(current, scale) - _log_truncation_mass(proposed, scale))
    )
    return proposed, correction


def run_rwmh(
    log_target: Callable[[np.ndarray], float],
    init: Sequence[float],
    layout: ParameterLayout,
    config: McmcConfig,
    progress: bool = False,
) -> Chain:
    """Adaptive random-walk Metropolis-Hastings updating one block per iteration, in turn"""
    current = np.array(init, dtype=float)
    if current.shape != (layout.dimension,):
        raise ValueError(f"expected an initial state of length {layout.dimension}")
    current_lp = log_target(current)
    if not math.isfinite(current_lp):
        raise InitializationError(f"the log target is {current_lp} at the initial state")

    rng = np.random.default_rng(config.seed)
    blocks = layout.blocks
    scales = np.array(
        [config.initial_scales.get(b.name, DEFAULT_INITIAL_SCALES[b.kind]) for b in blocks]
    )
    window_attempts = np.zeros(len(blocks), dtype=int)
    window_accepts = np.zeros(len(blocks), dtype=int)

    states = np.empty((config.iterations, layout.dimension))
    log_post = np.empty(config.iterations)
    accepted = np.zeros(config.iterations, dtype=bool)
    updated_block = np.empty(config.iterations, dtype=int)
    block_scales = np.empty((config.iterations, len(blocks)))

    with tqdm(
        total=config.iterations,
        desc="sampling",
        leave=False,
        unit=" iterations",
        disable=not progress,
    ) as t:
        for it in range(config.iterations):
            b = it % len(blocks)
            block = blocks[b]
            indices = list(block.indices)
            proposal, correction = _propose(block.kind, current[indices], scales[b], rng)
            log_u = math.log(rng.uniform())
            window_attempts[b] += 1
            if proposal is not None:
                candidate = current.copy()
                candidate[indices] = proposal
                candidate_lp = log_target(candidate)
                if math.isfinite(candidate_lp) and log_u < candidate_lp - current_lp + correction:
                    current, current_lp = candidate, candidate_lp
                    accepted[it] = True
                    window_accepts[b] += 1
            states[it] = current
            log_post[it] = current_lp
            updated_block[it] = b
            block_scales[it] = scales
            if it < config.burnin and (it + 1) % config.adapt_window == 0:
                for j in range(len(blocks)):
                    if window_attempts[j] > 0:
                        scales[j] = adapt_scales(
                            scales[j], window_accepts[j] / window_attempts[j], config.accept_band
                        )
                window_attempts[:] = 0
                window_accepts[:] = 0
            t.update(1)

    return Chain(
        labels=tuple(layout.labels),
        states=states,
        log_post=log_post,
        accepted=accepted,
        updated_block=updated_block,
        block_names=tuple(block.name for block in blocks),
        block_scales=block_scales,
        burnin=config.burnin,
    )


@dataclass(frozen=True)
class DiagnosticThresholds:
    sigma_stuck: float = 0.05
    mean_escape_factor: float = 10.0

    def to_obj(self) -> Dict[str, float]:
        return {"sigma_stuck": self.sigma_stuck, "mean_escape_factor": self.mean_escape_factor}

    @classmethod
    def from_obj(
        cls, obj: Dict[str, Any], field_name: str = "thresholds"
    ) -> "DiagnosticThresholds":
        if not isinstance(obj, dict) or set(obj) - {"sigma_stuck", "mean_escape_factor"}:
            raise ConfigError(field_name, "expected {sigma_stuck, mean_escape_factor}")
        try:
            return cls(**{k: float(v) for k, v in obj.items()})
        except (TypeError, ValueError) as e:
            raise ConfigError(field_name, str(e))


@dataclass(frozen=True)
class ChainDiagnostics:
    accept_rate: float
    stuck_small_sigma: bool
    divergent_means: bool
    loglik_ratio: float
    max_loglik_ratio: float

    def to_obj(self) -> Dict[str, Any]:
        return {
            "accept_rate": self.accept_rate,
            "stuck_small_sigma": self.stuck_small_sigma,
            "divergent_means": self.divergent_means,
            "loglik_ratio": self.loglik_ratio,
            "max_loglik_ratio": self.max_loglik_ratio,
        }


def diagnose(
    chain: Chain,
    layout: ParameterLayout,
    true_model: MixtureModel,
    data: DataSet,
    thresholds: Optional[DiagnosticThresholds] = None,
) -> ChainDiagnostics:
    if thresholds is None:
        thresholds = DiagnosticThresholds()
    if chain.iterations == 0 or data.n == 0:
        raise ValueError("diagnostics need a non-empty chain and data set")
    final = layout.to_model(chain.final_state)
    config = layout.config
    reparametrized = config is UnknownConfig.ALL_REPARAM

    stuck = bool(
        (config.has_scales or reparametrized)
        and np.any(final.scales < thresholds.sigma_stuck)
    )
    lo, hi = data.data_range
    reach = thresholds.mean_escape_factor * (hi - lo)
    divergent = bool(
        (config.has_means or reparametrized)
        and np.any((final.locs < lo - reach) | (final.locs > hi + reach))
    )

    true_loglik = log_likelihood(true_model, data)
    # the state only changes on acceptance
    visited = [chain.burnin] if chain.burnin < chain.iterations else [chain.iterations - 1]
    visited.extend(int(i) for i in np.flatnonzero(chain.accepted[chain.burnin :]) + chain.burnin)
    max_loglik = max(log_likelihood(layout.to_model(chain.states[i]), data) for i in visited)
    return ChainDiagnostics(
        accept_rate=chain.accept_rate(),
        stuck_small_sigma=stuck,
        divergent_means=divergent,
        loglik_ratio=log_likelihood(final, data) / true_loglik,
        max_loglik_ratio=max_loglik / true_loglik,
    )


def effective_sample_size(samples: Sequence[float]) -> float:
    """Autocorrelation-based ESS, truncated at the first non-positive pair of lags"""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    x = x - np.mean(x)
    variance = np.dot(x, x) / n
    if variance == 0:
        return float(n)
    spectrum = np.fft.rfft(x, 2 * n)
    autocorrelation = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / (n * variance)
    tau = -1.0
    for lag in range(0, n - 1, 2):
        pair = autocorrelation[lag] + autocorrelation[lag + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))
