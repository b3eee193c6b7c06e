"""Design-point selection from flow samples.

Three criteria: plain flow sampling, sampling with a fixed minimum separation
from the data (an L-infinity radius eps0), and sampling with a separation
threshold that adapts to the input density so high-probability regions get
denser coverage than the tails.

Acceptance keeps candidates that are at least the threshold away from every
existing point (data plus the batch accepted so far); crowding a neighborhood
that is already sampled adds nothing to the surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import NormalizingFlow
from .mc import Box
from .surrogate import Dataset

PROPOSAL_CAP = 10_000
CALIBRATION_SAMPLES = 1024
_CHUNK = 256


@dataclass
class DesignBatch:
    """Accepted design points plus bookkeeping of the rejection process."""

    points: np.ndarray                 # (k, d)
    proposals_used: int
    thresholds: np.ndarray | None = None  # per-point separation used (adaptive rule)
    shortfall: bool = False

    def __len__(self):
        return len(self.points)


def rho(z, data) -> float:
    """Minimum L-infinity distance from z to the rows of data."""
    X = _data_inputs(data)
    if len(X) == 0:
        raise ValueError("distance to an empty dataset is undefined")
    z = np.asarray(z, dtype=float)
    return float(np.abs(X - z).max(axis=1).min())


def _data_inputs(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.inputs
    return np.atleast_2d(np.asarray(data, dtype=float))


def _proposals(flow: NormalizingFlow, box: Box, rng, cap: int):
    """Stream of (x, draws_so_far) pairs from the box-mapped flow."""
    drawn = 0
    while drawn < cap:
        k = min(_CHUNK, cap - drawn)
        z0 = rng.standard_normal((k, flow.dim))
        z, _ = flow.forward(z0)
        x = box.from_base(z)
        for row in x:
            drawn += 1
            yield row, drawn


def nfbd_select(flow: NormalizingFlow, n: int, box: Box, seed: int,
                cap: int = PROPOSAL_CAP) -> DesignBatch:
    """First n flow samples inside the box; no separation filtering."""
    if n < 1:
        raise ValueError("batch size must be at least 1")
    rng = np.random.default_rng(seed)
    accepted = []
    used = 0
    for x, used in _proposals(flow, box, rng, cap):
        if box.contains(x):
            accepted.append(x)
            if len(accepted) == n:
                return DesignBatch(np.array(accepted), used)
    raise RuntimeError(f"proposal cap {cap} exhausted with {len(accepted)}/{n} in-box samples")


def nfbd_fg_select(flow: NormalizingFlow, data, n: int, eps0: float, box: Box,
                   seed: int, cap: int = PROPOSAL_CAP) -> DesignBatch:
    """Accept proposals at L-infinity distance >= eps0 from data and batch.

    Returns a short batch with `shortfall=True` when the cap runs out before
    n points are accepted.
    """
    if n < 1 or eps0 <= 0:
        raise ValueError("need n >= 1 and eps0 > 0")
    reference = _data_inputs(data)
    rng = np.random.default_rng(seed)
    accepted = []
    used = 0
    for x, used in _proposals(flow, box, rng, cap):
        if not box.contains(x):
            continue
        if np.abs(reference - x).max(axis=1).min() < eps0:
            continue
        accepted.append(x)
        reference = np.vstack([reference, x[None, :]])
        if len(accepted) == n:
            return DesignBatch(np.array(accepted), used)
    pts = np.array(accepted) if accepted else np.empty((0, box.dim))
    return DesignBatch(pts, used, shortfall=True)


def adaptive_threshold(z, eps0: float, beta: float, p_x_pdf, d: int) -> float:
    """Density-adaptive separation: clamp(beta * p(z)^(-2/d), [0.1, 10] * eps0)."""
    p = float(np.asarray(p_x_pdf(np.atleast_2d(np.asarray(z, dtype=float))))[0])
    if p < 0:
        raise ValueError("input density must be non-negative")
    if p == 0.0:
        return 10.0 * eps0
    return float(np.clip(beta * p ** (-2.0 / d), 0.1 * eps0, 10.0 * eps0))


def calibrate_beta(flow: NormalizingFlow, box: Box, eps0: float, p_x_pdf, rng,
                   n_calibration: int = CALIBRATION_SAMPLES) -> float:
    """beta = eps0 * p(z_median)^(2/d) over a calibration batch of flow samples."""
    z0 = rng.standard_normal((n_calibration, flow.dim))
    z, _ = flow.forward(z0)
    pdf_vals = np.asarray(p_x_pdf(box.from_base(z)), dtype=float)
    median_idx = np.argsort(pdf_vals)[len(pdf_vals) // 2]
    return eps0 * float(pdf_vals[median_idx]) ** (2.0 / flow.dim)


def nfbd_ag_select(flow: NormalizingFlow, data, n: int, eps0: float, p_x_pdf,
                   box: Box, seed: int, cap: int = PROPOSAL_CAP) -> DesignBatch:
    """Fixed-separation rule with a per-candidate density-adaptive threshold."""
    if n < 1 or eps0 <= 0:
        raise ValueError("need n >= 1 and eps0 > 0")
    rng = np.random.default_rng(seed)
    beta = calibrate_beta(flow, box, eps0, p_x_pdf, rng)
    reference = _data_inputs(data)
    accepted, thresholds = [], []
    used = 0
    for x, used in _proposals(flow, box, rng, cap):
        if not box.contains(x):
            continue
        eps_x = adaptive_threshold(x, eps0, beta, p_x_pdf, flow.dim)
        if np.abs(reference - x).max(axis=1).min() < eps_x:
            continue
        accepted.append(x)
        thresholds.append(eps_x)
        reference = np.vstack([reference, x[None, :]])
        if len(accepted) == n:
            return DesignBatch(np.array(accepted), used, np.array(thresholds))
    pts = np.array(accepted) if accepted else np.empty((0, box.dim))
    thr = np.array(thresholds) if thresholds else np.empty(0)
    return DesignBatch(pts, used, thr, shortfall=True)


def select(criterion: str, flow: NormalizingFlow, data, n: int, eps0: float,
           p_x_pdf, box: Box, seed: int, cap: int = PROPOSAL_CAP) -> DesignBatch:
    """Dispatch on the criterion tag: nfbd, nfbd-fg or nfbd-ag."""
    if criterion == "nfbd":
        return nfbd_select(flow, n, box, seed, cap)
    if criterion == "nfbd-fg":
        return nfbd_fg_select(flow, data, n, eps0, box, seed, cap)
    if criterion == "nfbd-ag":
        return nfbd_ag_select(flow, data, n, eps0, p_x_pdf, box, seed, cap)
    raise ValueError(f"unknown criterion {criterion!r}")
