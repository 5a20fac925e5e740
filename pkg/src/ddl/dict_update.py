"""Dictionary half of the alternating minimisation.

Given codes ``X`` the dictionary is moved either by one gradient step on
``1/2 ||Y - D X||_F^2`` or replaced by the exact least-squares solution
(method of optimal directions). Atoms are renormalised afterwards and
collapsed atoms can be reseeded from local observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ddl.exceptions import ConvergenceError, ShapeError, SingularGramError, StepSizeError
from ddl.linalg import (
    ZERO_TOL,
    column_norms,
    frobenius_norm,
    largest_eigenvalue_spd,
    normalize_columns,
    solve_gram,
)

RULES = ("gradient", "mod")
DEAD_ATOM_POLICIES = ("reseed_from_data", "keep")


@dataclass(frozen=True)
class DictUpdateConfig:
    """Dictionary-step settings.

    ``eta=None`` means automatic: ``eta_scale * max_eta(X)`` recomputed at
    every outer iteration. ``ridge=None`` lets the MOD rule fall back to a
    tiny trace-scaled ridge only when the Gram matrix is singular.
    """

    eta: float | None = None
    eta_scale: float = 0.5
    rule: str = "gradient"
    zero_tol: float = ZERO_TOL
    dead_atom_policy: str = "reseed_from_data"
    ridge: float | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}, got {self.rule!r}")
        if self.dead_atom_policy not in DEAD_ATOM_POLICIES:
            raise ValueError(
                f"dead_atom_policy must be one of {DEAD_ATOM_POLICIES}, "
                f"got {self.dead_atom_policy!r}"
            )
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 < self.eta_scale < 1:
            raise ValueError("eta_scale must lie in (0, 1)")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def _check(Y, D, X):
    if D.shape[0] != Y.shape[0] or X.shape != (D.shape[1], Y.shape[1]):
        raise ShapeError(f"shapes do not conform: Y {Y.shape}, D {D.shape}, X {X.shape}")


def dict_gradient(Y, D, X) -> np.ndarray:
    """Gradient of ``1/2 ||Y - D X||_F^2`` with respect to D."""
    return -(Y - D @ X) @ X.T


def max_eta(X) -> float:
    """``2 / lambda_max(X X^T)``, the open upper bound on the gradient step."""
    X = np.asarray(X, dtype=np.float64)
    if not np.any(X):
        raise StepSizeError("all-zero codes give an unbounded dictionary step")
    # both Gram matrices share their nonzero spectrum; use the smaller one
    gram = X @ X.T if X.shape[0] <= X.shape[1] else X.T @ X
    try:
        lam = largest_eigenvalue_spd(gram, tol=1e-10, max_iters=2000)
    except ConvergenceError:
        lam = frobenius_norm(gram)
    return 2.0 / lam


def gradient_dict_step(Y, D, X, eta: float) -> np.ndarray:
    """``D + eta (Y - D X) X^T``, un-normalised."""
    Y, D, X = (np.asarray(a, dtype=np.float64) for a in (Y, D, X))
    _check(Y, D, X)
    bound = max_eta(X)
    if not 0.0 < eta < bound:
        raise StepSizeError(f"eta={eta:g} outside (0, {bound:g})")
    return D + eta * ((Y - D @ X) @ X.T)


def mod_update(Y, X, ridge: float = 0.0) -> np.ndarray:
    """``Y X^T (X X^T + ridge I)^-1``, the least-squares dictionary for fixed X."""
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"Y {Y.shape} and X {X.shape} disagree on sample count")
    return solve_gram(X @ X.T, Y @ X.T, ridge)


def auto_ridge(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    return 1e-10 * float(np.sum(X * X)) / X.shape[0]


def adapt_dictionary(Y, D, X, cfg: DictUpdateConfig) -> np.ndarray:
    """One local dictionary update (no normalisation)."""
    if cfg.rule == "mod":
        if cfg.ridge is not None:
            return mod_update(Y, X, cfg.ridge)
        try:
            return mod_update(Y, X, 0.0)
        except SingularGramError:
            ridge = auto_ridge(X)
            if ridge == 0.0:
                raise
            return mod_update(Y, X, ridge)
    if cfg.eta is not None:
        return gradient_dict_step(Y, D, X, cfg.eta)
    if not np.any(X):
        # nothing was coded, so the gradient vanishes
        return np.array(D, dtype=np.float64, copy=True)
    eta = cfg.eta_scale * max_eta(X)
    return D + eta * ((Y - D @ X) @ X.T)


def reseed_columns(D, idx, Y_local, rng: np.random.Generator) -> np.ndarray:
    """Replace columns `idx` of `D` with random normalised columns of `Y_local`."""
    Y_local = np.asarray(Y_local, dtype=np.float64)
    if Y_local.size == 0:
        raise ValueError("cannot reseed atoms from empty local data")
    norms = column_norms(Y_local)
    usable = np.flatnonzero(norms > ZERO_TOL)
    if usable.size == 0:
        raise ValueError("cannot reseed atoms: every local observation is zero")
    out = np.array(D, dtype=np.float64, copy=True)
    for k in idx:
        j = usable[rng.integers(usable.size)]
        out[:, k] = Y_local[:, j] / norms[j]
    return out


def finish_update(D_raw, Y_local, cfg: DictUpdateConfig, rng: np.random.Generator) -> np.ndarray:
    """Normalise atoms and repair collapsed ones per ``cfg.dead_atom_policy``."""
    if cfg.dead_atom_policy == "reseed_from_data" and np.asarray(Y_local).size == 0:
        raise ValueError("reseed_from_data needs nonempty local observations")
    D, dead = normalize_columns(D_raw, cfg.zero_tol)
    if dead and cfg.dead_atom_policy == "reseed_from_data":
        D = reseed_columns(D, dead, Y_local, rng)
    return D
