"""Simplex-constrained quadratic programming for the reaction (weight) step.

The weight update of the splitting scheme minimizes

    lambda * MMD^2(mu_beta, target) + MMD^2(mu_beta, mu_prev)

over the simplex, which expands to the quadratic 0.5 beta^T Q beta + c^T beta
(up to an additive constant) with Q = 2 (1 + lambda) K_XX and
c = -(2 lambda / m) K_XY 1 - 2 K_XXbar alpha_prev. Three solvers live here:
an accelerated projected-gradient exact solver, the single projected-gradient
step used inside the fast flow loop, and a brute-force grid oracle for tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GramBundle
from .measures import simplex_project

_SYMMETRY_TOL = 1e-12


class QpConvergenceError(RuntimeError):
    """Exact solver ran out of iterations; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class SimplexQp:
    """Objective 0.5 beta^T q beta + c^T beta over the probability simplex."""

    q: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"q must be square, got shape {q.shape}")
        if c.shape != (q.shape[0],):
            raise ValueError(f"c has shape {c.shape}, expected ({q.shape[0]},)")
        if np.max(np.abs(q - q.T)) > _SYMMETRY_TOL:
            raise ValueError("q must be symmetric")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)

    @property
    def size(self) -> int:
        return self.c.size

    def objective(self, beta: np.ndarray) -> float:
        beta = np.asarray(beta, dtype=float)
        return float(0.5 * beta @ self.q @ beta + self.c @ beta)

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        return self.q @ beta + self.c


def assemble_mmd_step_qp(
    bundle: GramBundle, alpha_prev: np.ndarray, tradeoff: float, m: int
) -> SimplexQp:
    """Build the weight-step QP from one step's Gram matrices.

    ``tradeoff`` is the energy weight lambda relative to a unit prox weight:
    the assembled objective equals lambda * MMD^2(mu_beta, pi)
    + MMD^2(mu_beta, mu_prev) up to terms constant in beta.
    """
    alpha_prev = np.asarray(alpha_prev, dtype=float)
    n = bundle.kxx.shape[0]
    if alpha_prev.shape != (n,):
        raise ValueError(f"alpha_prev has shape {alpha_prev.shape}, expected ({n},)")
    if bundle.kxy.shape != (n, m):
        raise ValueError(f"kxy has shape {bundle.kxy.shape}, expected ({n}, {m})")
    if tradeoff < 0:
        raise ValueError("tradeoff must be nonnegative")
    q = 2.0 * (1.0 + tradeoff) * bundle.kxx
    c = -(2.0 * tradeoff / m) * bundle.kxy.sum(axis=1) - 2.0 * (bundle.kx_old @ alpha_prev)
    return SimplexQp(q, c)


def _largest_eigenvalue(q: np.ndarray, iterations: int = 50) -> float:
    """Power iteration with a deterministic start; q is PSD here."""
    n = q.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    value = 0.0
    for _ in range(iterations):
        w = q @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        value = float(v @ (q @ v))
    return value


def qp_pgd_step(qp: SimplexQp, beta: np.ndarray, step: float) -> np.ndarray:
    """One projected-gradient step: project(beta - step * grad)."""
    if step <= 0:
        raise ValueError("step must be positive")
    beta = np.asarray(beta, dtype=float)
    return simplex_project(beta - step * qp.gradient(beta))


def solve_qp_exact(
    qp: SimplexQp,
    beta0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10000,
) -> np.ndarray:
    """Accelerated projected gradient (with restarts) to fixed-point residual tol.

    The step size is 1/L with L from power iteration; convergence is declared
    when ||beta - project(beta - s * grad(beta))|| <= tol. Raises
    QpConvergenceError carrying the last iterate if max_iter is exhausted.
    """
    beta = np.asarray(beta0, dtype=float)
    if beta.shape != (qp.size,):
        raise ValueError(f"beta0 has shape {beta.shape}, expected ({qp.size},)")
    lip = _largest_eigenvalue(qp.q)
    step = 1.0 / max(lip, 1e-12)

    x = simplex_project(beta)
    y = x.copy()
    t = 1.0
    f_prev = qp.objective(x)
    residual = np.inf
    for _ in range(max_iter):
        x_next = simplex_project(y - step * qp.gradient(y))
        f_next = qp.objective(x_next)
        if f_next > f_prev:
            # Momentum overshot: restart from the last monotone iterate.
            y = x
            t = 1.0
            x_next = simplex_project(y - step * qp.gradient(y))
            f_next = qp.objective(x_next)
        residual = float(np.linalg.norm(x_next - simplex_project(x_next - step * qp.gradient(x_next))))
        if residual <= tol:
            return x_next
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        x, t, f_prev = x_next, t_next, f_next
    raise QpConvergenceError(
        f"no convergence to tol={tol} in {max_iter} iterations (residual {residual:.3e})",
        last_iterate=x,
        residual=residual,
    )


def brute_force_simplex(qp: SimplexQp, resolution: float) -> np.ndarray:
    """Grid minimizer over the simplex at the given resolution (test oracle).

    Enumerates all weight vectors with entries that are multiples of
    1/round(1/resolution), in lexicographic order of the leading coordinates,
    and returns the first grid point attaining the minimal objective. Guarded
    to n <= 4: the grid has C(N + n - 1, n - 1) points and explodes beyond
    that.
    """
    n = qp.size
    if n > 4:
        raise ValueError(f"brute force supports at most 4 variables, got {n}")
    if not (0 < resolution <= 1):
        raise ValueError("resolution must lie in (0, 1]")
    levels = int(round(1.0 / resolution))

    best_value = np.inf
    best_point = None
    for counts in _composition_blocks(levels, n):
        grid = counts / levels
        values = 0.5 * np.einsum("ij,jk,ik->i", grid, qp.q, grid) + grid @ qp.c
        i = int(np.argmin(values))  # argmin returns the first minimizer
        if values[i] < best_value:
            best_value = float(values[i])
            best_point = grid[i]
    return best_point


def _composition_blocks(total: int, parts: int, block: int = 200_000):
    """Yield arrays of integer compositions of ``total`` into ``parts`` parts.

    Lexicographic in the leading coordinates; each yielded block preserves
    that order so first-minimum selection stays deterministic.
    """
    if parts == 1:
        yield np.array([[total]])
        return
    if parts == 2:
        first = np.arange(total + 1)
        yield np.column_stack([first, total - first])
        return
    buffer = []
    buffered_rows = 0
    for head in range(total + 1):
        for tail in _composition_blocks(total - head, parts - 1, block):
            rows = np.column_stack([np.full(tail.shape[0], head), tail])
            buffer.append(rows)
            buffered_rows += rows.shape[0]
            if buffered_rows >= block:
                yield np.concatenate(buffer)
                buffer, buffered_rows = [], 0
    if buffer:
        yield np.concatenate(buffer)
