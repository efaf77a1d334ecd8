"""Shifted-Weibull particle radii by inverse-CDF sampling.

Radii are in micrometres, matching the usual way size distributions are
reported; callers convert to SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class WeibullParams:
    lambda_: float
    k: float
    x0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lambda_) and self.lambda_ > 0):
            raise ValueError(f"Weibull scale must be positive, got {self.lambda_}")
        if not (math.isfinite(self.k) and self.k > 0):
            raise ValueError(f"Weibull shape must be positive, got {self.k}")
        if not (math.isfinite(self.x0) and self.x0 >= 0):
            raise ValueError(f"Weibull shift must be non-negative, got {self.x0}")

    @property
    def mean(self) -> float:
        return self.lambda_ * math.gamma(1 + 1 / self.k) + self.x0


def cdf(x, params: WeibullParams):
    z = np.maximum(np.asarray(x, dtype=float) - params.x0, 0.0) / params.lambda_
    return -np.expm1(-(z**params.k))


def pdf(x, params: WeibullParams):
    x = np.asarray(x, dtype=float)
    z = np.maximum(x - params.x0, 0.0) / params.lambda_
    out = params.k / params.lambda_ * z ** (params.k - 1) * np.exp(-(z**params.k))
    return np.where(x >= params.x0, out, 0.0)


def quantile(y, params: WeibullParams):
    """Inverse CDF ``lambda * (-ln(1 - y))**(1/k) + x0`` for y in [0, 1)."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y >= 1) | ~np.isfinite(y)):
        raise ValueError("quantile needs probabilities in [0, 1)")
    out = params.lambda_ * (-np.log1p(-y)) ** (1 / params.k) + params.x0
    return float(out) if out.ndim == 0 else out


def sample_radii(n: int, params: WeibullParams, seed: int) -> np.ndarray:
    """``n`` radii drawn with a PCG64 stream seeded by ``seed``."""
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    rng = np.random.default_rng(seed)
    y = rng.random(n)
    # random() can return 0 exactly, which maps to x0; nudge so every radius exceeds the shift
    y = np.where(y == 0.0, np.finfo(float).tiny, y)
    return params.lambda_ * (-np.log1p(-y)) ** (1 / params.k) + params.x0


def write_radii_csv(path: str | Path, radii_um) -> None:
    with open(path, "w") as fh:
        fh.write("index,radius_um\n")
        for i, r in enumerate(radii_um):
            fh.write(f"{i},{float(r)!r}\n")
