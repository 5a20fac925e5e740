"""Small dense linear-algebra kernel.

Every matrix in ddl is a 2-D float64 ``numpy.ndarray``; this module holds the
handful of operations the learners need on top of plain numpy.
"""

from __future__ import annotations

import numpy as np

from ddl.exceptions import ConvergenceError, ShapeError, SingularGramError

ZERO_TOL = 1e-12
UNIT_TOL = 8 * np.finfo(np.float64).eps


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return `m` as a finite 2-D float64 array, raising otherwise."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def power_iteration(
    m, tol: float = 1e-10, max_iters: int = 1000, seed: int = 0
) -> tuple[float, np.ndarray]:
    """Top eigenpair of a symmetric PSD matrix by power iteration.

    Returns ``(lam, v)`` with ``v`` unit-norm. The start vector is drawn from
    ``numpy.random.default_rng(seed)`` so results are reproducible.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0 or not np.any(m):
        return 0.0, np.eye(max(n, 1), 1)[:n, 0]

    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = float(v @ m @ v)
    for _ in range(max_iters):
        w = m @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # start vector landed in the null space; PSD input means the
            # Rayleigh quotient was 0 too, so restart along a basis vector
            v = np.zeros(n)
            v[int(np.argmax(np.diag(m)))] = 1.0
            continue
        v = w / norm_w
        lam_new = float(v @ m @ v)
        if abs(lam_new - lam) <= tol * max(abs(lam_new), np.finfo(float).tiny):
            return lam_new, v
        lam = lam_new
    raise ConvergenceError(
        f"power iteration did not reach tol={tol:g} in {max_iters} iterations"
    )


def largest_eigenvalue_spd(
    m, tol: float = 1e-10, max_iters: int = 1000, seed: int = 0
) -> float:
    """Largest eigenvalue of a symmetric PSD matrix (e.g. a Gram matrix)."""
    lam, _ = power_iteration(m, tol=tol, max_iters=max_iters, seed=seed)
    return max(lam, 0.0)


def solve_gram(g, b, ridge: float = 0.0) -> np.ndarray:
    """Solve ``M @ (g + ridge*I) = b`` for M.

    `g` is K x K symmetric PSD (typically ``X @ X.T``), `b` is p x K. Uses a
    Cholesky factorisation; a singular system raises SingularGramError.
    """
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"gram must be square, got shape {g.shape}")
    if b.ndim != 2 or b.shape[1] != g.shape[0]:
        raise ShapeError(f"rhs shape {b.shape} does not match gram {g.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")

    k = g.shape[0]
    h = g + ridge * np.eye(k)
    try:
        chol = np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError("gram matrix is not positive definite") from exc
    piv = np.diag(chol) ** 2
    # rank-deficient PSD input can factor with tiny round-off pivots
    if piv.min() <= k * np.finfo(float).eps * max(piv.max(), 1e-300):
        raise SingularGramError("gram matrix is numerically singular")
    # M h = b  <=>  h M^T = b^T  (h symmetric)
    y = np.linalg.solve(chol, b.T)
    return np.linalg.solve(chol.T, y).T


def column_norms(m) -> np.ndarray:
    return np.linalg.norm(np.asarray(m, dtype=np.float64), axis=0)


def normalize_columns(m, zero_tol: float = ZERO_TOL) -> tuple[np.ndarray, list[int]]:
    """Scale every column to unit L2 norm.

    Columns whose norm is at most `zero_tol` are left untouched and their
    indices returned; repairing them is up to the caller. Columns already
    within a few ulp of unit norm are not rescaled, which makes repeated
    normalization a bit-exact no-op.
    """
    out = np.array(m, dtype=np.float64, copy=True)
    norms = column_norms(out)
    dead = norms <= zero_tol
    live = ~dead & (np.abs(norms - 1.0) > UNIT_TOL)
    out[:, live] /= norms[live]
    return out, [int(i) for i in np.flatnonzero(dead)]
