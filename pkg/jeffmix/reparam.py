"""
Reference location/scale coordinates for Gaussian mixtures.

Component 1 carries the reference location ``mu`` and scale ``tau``. Each following component is
expressed relative to its predecessor: ``m[i+1] = m[i] + s[i] * theta[i]`` and
``s[i+1] = s[i] * sigma[i]``. Weights are stick-breaking fractions ``(p, q1, ..., q[k-2])``.
"""
from dataclasses import dataclass
import math
from typing import List, Sequence, Tuple

import numpy as np

from .mixture import MixtureModel


@dataclass(frozen=True)
class ReparamParams:
    loc: float
    scale: float
    offsets: Tuple[float, ...]
    scale_ratios: Tuple[float, ...]
    stick_weights: Tuple[float, ...]

    def __post_init__(self):
        for name in ("offsets", "scale_ratios", "stick_weights"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not (len(self.offsets) == len(self.scale_ratios) == len(self.stick_weights)):
            raise ValueError("offsets, scale ratios and stick weights must all have length k - 1")
        if not self.scale > 0:
            raise ValueError(f"the reference scale must be positive, not {self.scale!r}")
        if any(not r > 0 for r in self.scale_ratios):
            raise ValueError(f"scale ratios must be positive: {self.scale_ratios!r}")
        if any(not 0 < v < 1 for v in self.stick_weights):
            raise ValueError(f"stick weights must lie in (0, 1): {self.stick_weights!r}")

    @property
    def k(self) -> int:
        return len(self.offsets) + 1

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.loc, self.scale, *self.offsets, *self.scale_ratios, *self.stick_weights]
        )

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "ReparamParams":
        if len(vector) < 5 or (len(vector) - 2) % 3 != 0:
            raise ValueError(f"{len(vector)} is not a valid reparametrized dimension")
        m = (len(vector) - 2) // 3
        return cls(
            loc=float(vector[0]),
            scale=float(vector[1]),
            offsets=tuple(vector[2 : 2 + m]),
            scale_ratios=tuple(vector[2 + m : 2 + 2 * m]),
            stick_weights=tuple(vector[2 + 2 * m :]),
        )


def reparam_labels(k: int) -> List[str]:
    if k < 2:
        raise ValueError("the reparametrization needs at least two components")
    if k == 2:
        return ["mu", "tau", "delta", "sigma", "p"]
    return (
        ["mu", "tau"]
        + [f"theta{i}" for i in range(1, k)]
        + [f"sigma{i}" for i in range(1, k)]
        + ["p"]
        + [f"q{i}" for i in range(1, k - 1)]
    )


def _scales(rp: ReparamParams) -> np.ndarray:
    return rp.scale * np.concatenate(([1.0], np.cumprod(rp.scale_ratios)))


def _stick_remainders(sticks: Sequence[float]) -> np.ndarray:
    """remainders[j] = prod_{l<j} (1 - v_l)"""
    return np.concatenate(([1.0], np.cumprod(1.0 - np.asarray(sticks))))


def reparam_to_natural(rp: ReparamParams) -> MixtureModel:
    scales = _scales(rp)
    locs = rp.loc + np.concatenate(([0.0], np.cumsum(scales[:-1] * np.asarray(rp.offsets))))
    remainders = _stick_remainders(rp.stick_weights)
    weights = list(np.asarray(rp.stick_weights) * remainders[:-1]) + [remainders[-1]]
    # absorb rounding so the weights pass the simplex check
    weights[-1] = 1.0 - math.fsum(weights[:-1])
    return MixtureModel.gaussian(weights, locs, scales)


def natural_to_reparam(model: MixtureModel) -> ReparamParams:
    if not model.is_gaussian:
        raise ValueError("only Gaussian mixtures can be reparametrized")
    if model.k < 2:
        raise ValueError("the reparametrization needs at least two components")
    locs, scales, weights = model.locs, model.scales, model.weight_array
    sticks = []
    remaining = 1.0
    for w in weights[:-1]:
        if not remaining > 0:
            raise ValueError(f"weights {model.weights!r} leave no mass for later components")
        sticks.append(w / remaining)
        remaining -= w
    return ReparamParams(
        loc=float(locs[0]),
        scale=float(scales[0]),
        offsets=tuple((locs[1:] - locs[:-1]) / scales[:-1]),
        scale_ratios=tuple(scales[1:] / scales[:-1]),
        stick_weights=tuple(sticks),
    )


def reparam_jacobian(rp: ReparamParams) -> np.ndarray:
    """
    d(natural)/d(reparametrized), a (3k-1) x (3k-1) matrix.

    Rows follow the natural order (means, scales, first k-1 weights); columns follow
    `reparam_labels`.
    """
    k = rp.k
    m = k - 1
    dim = 3 * k - 1
    col_tau, col_theta, col_sigma, col_stick = 1, 2, 2 + m, 2 + 2 * m
    row_scale, row_weight = k, 2 * k
    scales = _scales(rp)
    theta = np.asarray(rp.offsets)
    ratios = np.asarray(rp.scale_ratios)
    sticks = np.asarray(rp.stick_weights)
    jac = np.zeros((dim, dim))

    for i in range(k):
        # scales: s_i = tau * prod_{l<i} sigma_l
        jac[row_scale + i, col_tau] = scales[i] / rp.scale
        for l in range(i):
            jac[row_scale + i, col_sigma + l] = scales[i] / ratios[l]
        # means: m_i = mu + sum_{j<i} s_j * theta_j
        jac[i, 0] = 1.0
        for j in range(i):
            jac[i, col_theta + j] = scales[j]
            jac[i, col_tau] += theta[j] * scales[j] / rp.scale
            for l in range(j):
                jac[i, col_sigma + l] += theta[j] * scales[j] / ratios[l]

    remainders = _stick_remainders(sticks)
    for j in range(m):
        w_j = sticks[j] * remainders[j]
        jac[row_weight + j, col_stick + j] = remainders[j]
        for l in range(j):
            jac[row_weight + j, col_stick + l] = -w_j / (1.0 - sticks[l])
    return jac
