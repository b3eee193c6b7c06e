"""Reliability benchmark problems and the metered problem interface."""

from __future__ import annotations

import threading

import numpy as np

from .mc import Box, gaussian_sample

_SQRT2 = np.sqrt(2.0)


def four_branch_g(x):
    """Minimum of the four branch limit states; vectorized over rows.

    The fourth branch carries a +7/sqrt(2) offset, mirroring the third, which
    reproduces the standard benchmark failure probability of about 2e-3.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    x1, x2 = X[:, 0], X[:, 1]
    quad = 3.0 + 0.1 * (x1 - x2) ** 2
    branches = np.stack([
        quad - (x1 + x2) / _SQRT2,
        quad + (x1 + x2) / _SQRT2,
        (x1 - x2) + 7.0 / _SQRT2,
        (x2 - x1) + 7.0 / _SQRT2,
    ])
    g = branches.min(axis=0)
    return float(g[0]) if np.ndim(x) == 1 else g


def iso_probability_g(x, b=5.0, k=0.5, e=0.1):
    """Parabolic limit state b - x2 - k (x1 - e)^2."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    g = b - X[:, 1] - k * (X[:, 0] - e) ** 2
    return float(g[0]) if np.ndim(x) == 1 else g


class Problem:
    """A reliability problem: metered limit state, input law and design box.

    Every limit-state evaluation counts against the meter; the meter is the
    simulation budget the sequential design loop must respect.
    """

    def __init__(self, name, dim, box: Box, g_batch, sampler=None, log_pdf=None):
        self.name = name
        self.dim = dim
        self.box = box
        self._g_batch = g_batch
        self._sampler = sampler or (lambda n, seed: gaussian_sample(n, dim, seed))
        self._log_pdf = log_pdf or self._standard_normal_log_pdf
        self._calls = 0
        self._lock = threading.Lock()

    def _standard_normal_log_pdf(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return -0.5 * self.dim * np.log(2.0 * np.pi) - 0.5 * np.sum(X * X, axis=1)

    @property
    def calls(self) -> int:
        return self._calls

    def g(self, x) -> float:
        x = np.asarray(x, dtype=float)
        with self._lock:
            self._calls += 1
        return float(self._g_batch(x[None, :])[0])

    def g_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        with self._lock:
            self._calls += len(X)
        return np.asarray(self._g_batch(X), dtype=float)

    def sample_inputs(self, n, seed) -> np.ndarray:
        return self._sampler(n, seed)

    def input_log_pdf(self, X) -> np.ndarray:
        return self._log_pdf(X)

    def input_pdf(self, X) -> np.ndarray:
        return np.exp(self._log_pdf(X))


_ALIASES = {"iso": "iso-probability", "four_branch": "four-branch"}
PROBLEM_NAMES = ("four-branch", "iso-probability", "darcy")


def make_problem(name: str, darcy_resolution: int = 31) -> Problem:
    """Construct a built-in benchmark problem by name."""
    name = _ALIASES.get(name, name)
    if name == "four-branch":
        problem = Problem(name, 2, Box(np.array([-10.0, -10.0]), np.array([10.0, 10.0])),
                          four_branch_g)
    elif name == "iso-probability":
        problem = Problem(name, 2, Box(np.array([-10.0, -10.0]), np.array([10.0, 10.0])),
                          iso_probability_g)
    elif name == "darcy":
        from . import darcy

        limit_state = darcy.DarcyLimitState(n_modes=4, resolution=darcy_resolution)
        problem = Problem(name, 4, Box(np.full(4, -5.0), np.full(4, 5.0)),
                          limit_state.g_batch)
    else:
        raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEM_NAMES}")

    _check_box_mass(problem)
    return problem


def _check_box_mass(problem: Problem, n: int = 4096, seed: int = 0) -> None:
    # the design box must capture essentially all input mass
    frac = float(np.mean(problem.box.contains(problem.sample_inputs(n, seed))))
    if frac < 0.999:
        raise ValueError(f"design box of {problem.name} holds only {frac:.4f} of input mass")
