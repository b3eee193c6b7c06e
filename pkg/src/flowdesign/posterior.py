"""Unnormalized posterior of the limit state under the current surrogate.

The density exp(-|G(x)|/lambda) concentrates on the surrogate's zero level
set; it is restricted to the design box (the level set is unbounded on R^d)
and is the target the normalizing flow is fitted to at each iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mc import Box
from .surrogate import SurrogateModel

LAMBDA_FLOOR = 1e-6
OUTSIDE_PENALTY = -1.0e6  # finite stand-in for -inf during flow training


@dataclass
class LimitStatePosterior:
    surrogate: SurrogateModel
    lam: float
    box: Box

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("scale parameter lambda must be positive")

    def log_unnormalized(self, x):
        """-|G(x)|/lambda inside the box, -inf outside. Scalar or batch."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        vals = -np.abs(self.surrogate.evaluate_batch(X)) / self.lam
        out = np.where(self.box.contains(X), vals, -np.inf)
        return float(out[0]) if np.ndim(x) == 1 else out

    def flow_target(self):
        """Taped target over flow base coordinates for free-energy training.

        Base points map affinely onto the box (+-3 spans it); points that
        still land outside contribute a large finite penalty so gradients
        stay defined.
        """
        scale = self.box.half_width / 3.0
        center = self.box.center
        neg_inv_lam = -1.0 / self.lam

        def target(z):
            x = z * scale + center
            g = self.surrogate.taped_batch(x)
            logp = ad.absolute(g) * neg_inv_lam
            inside = self.box.contains(ad.value_of(x))
            return ad.where(inside, logp, OUTSIDE_PENALTY)

        return target


def default_lambda(surrogate: SurrogateModel, sampler, n: int, seed: int = 0,
                   frac: float = 0.05) -> float:
    """Scale rule: frac of the surrogate's output spread over prior samples.

    Floored at 1e-6 (with a warning) when the surrogate output is degenerate.
    """
    if n < 100:
        raise ValueError("lambda calibration needs at least 100 samples")
    vals = surrogate.evaluate_batch(sampler(n, seed))
    lam = frac * float(np.std(vals))
    if lam < LAMBDA_FLOOR:
        warnings.warn("surrogate output spread is degenerate; lambda floored",
                      RuntimeWarning, stacklevel=2)
        return LAMBDA_FLOOR
    return lam
