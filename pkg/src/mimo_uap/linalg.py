"""First principal direction of a dense matrix by power iteration.

Only the top right-singular vector is ever needed, so the production path
iterates v <- X^T X v / ||.|| from a seeded random start instead of running
a full SVD. The matrix is factored as-is (no mean centering). The returned
direction is unique only up to sign; callers must treat +-v as equivalent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ZeroMatrix(ValueError):
    """The matrix has no nonzero entries."""


@dataclass
class PrincipalDirection:
    vector: np.ndarray
    iterations: int
    converged: bool
    rayleigh_history: list = field(default_factory=list)   # ||Xv||^2 per iterate


def first_principal_direction(X: np.ndarray, iters: int = 1000, tol: float = 1e-12,
                              seed: int = 0) -> PrincipalDirection:
    """Unit vector v maximizing ||Xv||; converged when successive iterates
    differ by less than tol in l2 after sign alignment."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be a 2-D matrix with at least one row")
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    if not np.any(X):
        raise ZeroMatrix("cannot take the principal direction of an all-zero matrix")

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    history = []
    converged = False
    it = 0
    for it in range(1, iters + 1):
        w = X.T @ (X @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector happened to lie in the null space; restart
            v = rng.standard_normal(X.shape[1])
            v /= np.linalg.norm(v)
            continue
        history.append(float(v @ w))   # Rayleigh quotient ||Xv||^2 at the current unit v
        v_new = w / norm
        if v_new @ v < 0:
            v_new = -v_new
        if np.linalg.norm(v_new - v) < tol:
            v = v_new
            converged = True
            break
        v = v_new
    return PrincipalDirection(vector=v, iterations=it, converged=converged,
                              rayleigh_history=history)
