"""Darcy-flow benchmark: KL log-normal diffusion field, finite-difference
solve of -div(a grad u) = 1 on the unit square, max-pressure limit state.

The random log-field uses the spectral covariance (-Laplace + 9 I)^{-2} with
zero Neumann boundary conditions, whose eigenpairs on [0,1]^2 are tensorized
cosines, theta_{jk} = (pi^2 (j^2 + k^2) + 9)^{-2}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

PRESSURE_THRESHOLD = 0.082


@dataclass(frozen=True)
class KlBasis:
    """Leading KL modes, sorted by eigenvalue descending ((j, k) breaks ties)."""

    eigenvalues: np.ndarray   # (d,)
    modes: tuple              # d pairs (j, k)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def eval_modes(self, nodes: np.ndarray) -> np.ndarray:
        """Eigenfunctions on the tensor grid nodes x nodes, shape (d, n, n)."""
        fields = np.empty((self.n_modes, nodes.size, nodes.size))
        for i, (j, k) in enumerate(self.modes):
            fields[i] = np.outer(_cos_mode(j, nodes), _cos_mode(k, nodes))
        return fields


def _cos_mode(j: int, t: np.ndarray) -> np.ndarray:
    if j == 0:
        return np.ones_like(t)
    return np.sqrt(2.0) * np.cos(j * np.pi * t)


def kl_basis(d: int) -> KlBasis:
    """The d largest-eigenvalue Neumann cosine modes of (-Laplace + 9 I)^{-2}."""
    if not 1 <= d <= 16:
        raise ValueError("mode count must lie in 1..16")
    pairs = [(j, k) for j in range(6) for k in range(6)]
    pairs.sort(key=lambda jk: (-_eigenvalue(*jk), jk))
    chosen = pairs[:d]
    return KlBasis(np.array([_eigenvalue(j, k) for j, k in chosen]), tuple(chosen))


def _eigenvalue(j: int, k: int) -> float:
    return (np.pi ** 2 * (j ** 2 + k ** 2) + 9.0) ** -2


@dataclass(frozen=True)
class DarcyGrid:
    """Uniform node grid on [0,1]^2 with m interior nodes per axis."""

    m: int

    def __post_init__(self):
        if self.m < 8:
            raise ValueError("grid needs at least 8 interior nodes per axis")

    @property
    def h(self) -> float:
        return 1.0 / (self.m + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m + 2)


def kl_expand(x, basis: KlBasis, grid: DarcyGrid) -> np.ndarray:
    """Log-diffusivity ln a = sum_i sqrt(theta_i) phi_i(xi) x_i on grid nodes."""
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.n_modes,):
        raise ValueError(f"coefficient vector must have length {basis.n_modes}")
    fields = basis.eval_modes(grid.nodes)
    return np.tensordot(np.sqrt(basis.eigenvalues) * x, fields, axes=1)


def darcy_solve(a: np.ndarray, grid: DarcyGrid, f: float = 1.0) -> np.ndarray:
    """Solve -div(a grad u) = f with zero Dirichlet boundary.

    Five-point finite differences with harmonic interface averaging of `a`;
    conjugate gradients with diagonal preconditioning to 1e-10 relative
    residual. Returns u on the full node grid (zero on the boundary).
    """
    m, h = grid.m, grid.h
    a = np.asarray(a, dtype=float)
    if a.shape != (m + 2, m + 2):
        raise ValueError(f"field must be given on the full node grid {(m + 2, m + 2)}")
    if not np.all(a > 0.0):
        raise ValueError("diffusion field must be strictly positive")

    def harmonic(p, q):
        return 2.0 * p * q / (p + q)

    core = a[1:-1, 1:-1]
    w_n = harmonic(core, a[:-2, 1:-1])   # neighbor at i-1 (first axis)
    w_s = harmonic(core, a[2:, 1:-1])
    w_w = harmonic(core, a[1:-1, :-2])   # neighbor at j-1 (second axis)
    w_e = harmonic(core, a[1:-1, 2:])

    n = m * m
    idx = np.arange(n).reshape(m, m)
    diag = (w_n + w_s + w_w + w_e).ravel()

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    data = [diag]
    links = (
        (w_n[1:, :], idx[1:, :], idx[:-1, :]),
        (w_s[:-1, :], idx[:-1, :], idx[1:, :]),
        (w_w[:, 1:], idx[:, 1:], idx[:, :-1]),
        (w_e[:, :-1], idx[:, :-1], idx[:, 1:]),
    )
    for w, r, c in links:
        rows.append(r.ravel())
        cols.append(c.ravel())
        data.append(-w.ravel())
    A = sp.csr_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    b = np.full(n, f * h * h)

    precond = sp.diags(1.0 / diag)
    u_int, info = cg(A, b, rtol=1e-12, atol=0.0, maxiter=20 * n, M=precond)
    if info != 0:
        raise RuntimeError(f"conjugate gradients did not converge (info={info})")
    rel_res = np.linalg.norm(A @ u_int - b) / np.linalg.norm(b)
    if rel_res > 1e-10:
        raise RuntimeError(f"linear solve residual {rel_res:.2e} above 1e-10")

    u = np.zeros((m + 2, m + 2))
    u[1:-1, 1:-1] = u_int.reshape(m, m)
    return u


class DarcyLimitState:
    """Metered-ready limit state g(x) = threshold - max(u(x)).

    Failure (g <= 0) means the peak pressure reaches the threshold; small
    diffusivities drive the pressure up, so failures sit in the joint lower
    tail of the field coefficients.
    """

    def __init__(self, n_modes: int = 4, resolution: int = 31,
                 threshold: float = PRESSURE_THRESHOLD):
        self.basis = kl_basis(n_modes)
        self.grid = DarcyGrid(resolution)
        self.threshold = threshold
        # mode fields scaled by sqrt(theta), reused across evaluations
        self._scaled_modes = (np.sqrt(self.basis.eigenvalues)[:, None, None]
                              * self.basis.eval_modes(self.grid.nodes))

    def log_field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.tensordot(x, self._scaled_modes, axes=1)

    def solve(self, x) -> np.ndarray:
        return darcy_solve(np.exp(self.log_field(x)), self.grid)

    def g(self, x) -> float:
        return self.threshold - float(self.solve(x).max())

    def g_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.g(row) for row in X])


def darcy_limit_state(x, n_modes: int = 4, resolution: int = 31) -> float:
    """One-shot evaluation of the Darcy limit state (builds its own grid)."""
    return DarcyLimitState(n_modes, resolution).g(x)


def export_grid_csv(values: np.ndarray, grid: DarcyGrid, path) -> None:
    """Write a node field as (xi1, xi2, value) rows for external plotting."""
    nodes = grid.nodes
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi1", "xi2", "value"])
        for i, t1 in enumerate(nodes):
            for j, t2 in enumerate(nodes):
                writer.writerow([repr(float(t1)), repr(float(t2)),
                                 repr(float(values[i, j]))])
