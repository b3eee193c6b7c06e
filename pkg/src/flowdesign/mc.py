"""Indicator-based Monte Carlo estimation and space-filling sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned design box with the affine map to flow base coordinates.

    Base coordinates place the box at +-3 standard deviations of the flow's
    Gaussian base, so nearly all base mass lands inside the box.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("box must satisfy lower < upper in every coordinate")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        inside = (X >= self.lower) & (X <= self.upper)
        return inside.all(axis=-1)

    def from_base(self, Z):
        """Map base coordinates (box spans +-3) to input coordinates."""
        return self.center + np.asarray(Z, dtype=float) * (self.half_width / 3.0)

    def to_base(self, X):
        return (np.asarray(X, dtype=float) - self.center) / self.half_width * 3.0


@dataclass(frozen=True)
class McEstimate:
    """Failure-probability estimate p = failures / n with its standard error."""

    estimate: float
    n: int
    failures: int
    standard_error: float

    @classmethod
    def from_counts(cls, failures: int, n: int) -> "McEstimate":
        p = failures / n
        return cls(estimate=p, n=n, failures=failures,
                   standard_error=float(np.sqrt(p * (1.0 - p) / n)))


def indicator(y):
    """1 where y <= 0 (failure), 0 where y > 0. Scalar in, int out; array in, array out."""
    arr = np.asarray(y)
    out = (arr <= 0).astype(int)
    if np.ndim(y) == 0:
        return int(out)
    return out


def mc_failure_probability(evaluator, sampler, n: int, seed: int) -> McEstimate:
    """Plain Monte Carlo estimate of P(evaluator(x) <= 0).

    `sampler(count, seed)` yields a (count, d) array; `evaluator` maps it to a
    (count,) array of limit-state values.
    """
    if n < 1:
        raise ValueError("sample count must be at least 1")
    X = sampler(n, seed)
    vals = np.asarray(evaluator(X), dtype=float).ravel()
    bad = ~np.isfinite(vals)
    if bad.any():
        raise ValueError(f"evaluator returned a non-finite value at sample {int(np.argmax(bad))}")
    return McEstimate.from_counts(int(np.sum(vals <= 0.0)), n)


def lhs_sample(n: int, box: Box, seed: int) -> np.ndarray:
    """Latin hypercube sample: per coordinate, one point in each of n bins."""
    if n < 1:
        raise ValueError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    pts = np.empty((n, box.dim))
    width = box.upper - box.lower
    for j in range(box.dim):
        bins = rng.permutation(n)
        offsets = rng.uniform(size=n)
        pts[:, j] = box.lower[j] + (bins + offsets) / n * width[j]
    return pts


def gaussian_sample(n: int, d: int, seed: int) -> np.ndarray:
    """n i.i.d. standard-normal vectors of dimension d."""
    if n < 1:
        raise ValueError("sample count must be at least 1")
    return np.random.default_rng(seed).standard_normal((n, d))
