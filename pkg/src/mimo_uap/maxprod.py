"""Max-prod SINR power allocation under per-cell sum-power budgets.

The production solver runs projected gradient ascent on the log-power
variables u = log(rho), where the objective sum_jk log gamma_jk is concave,
with a per-cell scaling projection onto {sum_k rho_jk <= p_max} and a
backtracking line search that only accepts non-decreasing steps. A grid
brute-force solver is kept alongside as the verification oracle for tiny
instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .scenario import GainProfile


class NonConvergence(RuntimeError):
    """Solver failed to reach the requested tolerance."""


class InstanceTooLarge(ValueError):
    """Brute-force oracle guard: grid enumeration only up to L*K = 4."""


@dataclass
class PowerAllocation:
    rho: np.ndarray   # (L, K) mW

    def validate(self, p_max: float, tol: float = 1e-9) -> None:
        if np.any(self.rho < 0):
            raise ValueError("powers must be nonnegative")
        cell_sums = self.rho.sum(axis=1)
        if np.any(cell_sums > p_max * (1.0 + tol) + tol):
            raise ValueError("per-cell power budget exceeded")


@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 2000
    step_size: float = 1.0      # initial step in log-power space
    rel_tol: float = 1e-9

    def validate(self) -> None:
        if self.max_iters < 1 or self.step_size <= 0 or self.rel_tol <= 0:
            raise ValueError("invalid solver settings")


def sinr(rho, gains: GainProfile, j: int, k: int) -> float:
    """gamma_jk = rho_jk * a_jk / (sum_li rho_li * b_lijk + sigma2)."""
    r = rho.rho if isinstance(rho, PowerAllocation) else np.asarray(rho, dtype=float)
    denom = float(np.sum(r[:, :, None, None] * gains.b, axis=(0, 1))[j, k]) + gains.sigma2
    return float(r[j, k] * gains.a[j, k]) / denom


def all_sinr(rho: np.ndarray, gains: GainProfile) -> np.ndarray:
    """SINR of every user, shape (L, K)."""
    denom = np.tensordot(rho, gains.b, axes=([0, 1], [0, 1])) + gains.sigma2
    return rho * gains.a / denom


def log_product_sinr(rho: np.ndarray, gains: GainProfile) -> float:
    """sum_jk log gamma_jk; -inf when any power is zero."""
    g = all_sinr(rho, gains)
    if np.any(g <= 0):
        return -np.inf
    return float(np.sum(np.log(g)))


@dataclass
class MaxProdResult:
    allocation: PowerAllocation
    objective: float                       # sum_jk log gamma_jk at the solution
    n_iters: int
    converged: bool
    objective_history: list = field(default_factory=list)


def _project(rho: np.ndarray, p_max: float, floor: float) -> np.ndarray:
    """Floor powers and scale each cell down onto its budget."""
    rho = np.maximum(rho, floor)
    sums = rho.sum(axis=1, keepdims=True)
    scale = np.minimum(1.0, p_max / sums)
    return rho * scale


def solve_maxprod(gains: GainProfile, p_max: float,
                  settings: SolverSettings | None = None) -> MaxProdResult:
    """Maximize prod gamma_jk subject to sum_k rho_jk <= p_max per cell.

    Gradient in u = log rho is 1 - rho * sum_jk b[.,.,j,k]/D[j,k], with
    D the interference-plus-noise denominators. Powers are floored at
    1e-9*p_max so the log objective stays finite.
    """
    settings = settings or SolverSettings()
    settings.validate()
    gains.validate()
    L, K = gains.a.shape
    floor = 1e-9 * p_max

    rho = np.full((L, K), p_max / K)
    obj = log_product_sinr(rho, gains)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, settings.max_iters + 1):
        denom = np.tensordot(rho, gains.b, axes=([0, 1], [0, 1])) + gains.sigma2
        grad_u = 1.0 - rho * np.tensordot(gains.b, 1.0 / denom, axes=([2, 3], [0, 1]))

        step = settings.step_size
        accepted = False
        for _ in range(30):
            cand = _project(rho * np.exp(step * grad_u), p_max, floor)
            cand_obj = log_product_sinr(cand, gains)
            if cand_obj >= obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True   # no ascent direction left at line-search resolution
            break
        improvement = cand_obj - obj
        rho, obj = cand, cand_obj
        history.append(obj)
        if improvement <= settings.rel_tol * max(1.0, abs(obj)):
            converged = True
            break

    allocation = PowerAllocation(rho=rho)
    allocation.validate(p_max)
    return MaxProdResult(allocation=allocation, objective=obj, n_iters=it,
                         converged=converged, objective_history=history)


def brute_force_maxprod(gains: GainProfile, p_max: float, grid_points: int) -> PowerAllocation:
    """Best allocation on the grid {0, p_max/g, ..., p_max}^(L*K) meeting the budgets.

    Exhaustive oracle; guarded to L*K <= 4. Cells are enumerated over their
    feasible per-cell tuples and combined, so memory stays modest even at
    ~100 grid points per dimension.
    """
    gains.validate()
    L, K = gains.a.shape
    if L * K > 4:
        raise InstanceTooLarge(f"L*K={L * K} exceeds the brute-force guard of 4")
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")

    levels = np.arange(grid_points + 1) * (p_max / grid_points)
    # per-cell candidate tuples with sum <= p_max (same list for every cell)
    cell_tuples = np.array([t for t in itertools.product(levels, repeat=K)
                            if sum(t) <= p_max * (1 + 1e-12)])
    n = len(cell_tuples)

    b_flat = gains.b.reshape(L * K, L * K)     # rows: interferer (l,i); cols: target (j,k)
    a_flat = gains.a.reshape(L * K)
    best_obj, best_rho = -np.inf, None
    chunk = 200_000
    index_iter = itertools.product(*([range(n)] * L))
    while True:
        block = list(itertools.islice(index_iter, chunk))
        if not block:
            break
        idx = np.asarray(block)
        rho = cell_tuples[idx].reshape(len(block), L * K)
        denom = rho @ b_flat + gains.sigma2
        with np.errstate(divide="ignore"):
            logg = np.log(rho * a_flat) - np.log(denom)
        obj = logg.sum(axis=1)
        i = int(np.argmax(obj))
        if obj[i] > best_obj:
            best_obj = float(obj[i])
            best_rho = rho[i].reshape(L, K).copy()

    if best_rho is None or not np.isfinite(best_obj):
        # every interior grid point was degenerate; fall back to the best single sample
        best_rho = np.zeros((L, K))
    allocation = PowerAllocation(rho=best_rho)
    allocation.validate(p_max)
    return allocation
