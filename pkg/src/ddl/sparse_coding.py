"""L1-penalised sparse coding by iterated soft thresholding.

Solves ``min_X 1/2 ||Y - D X||_F^2 + lam ||X||_1`` for a fixed dictionary with
forward-backward splitting: a gradient step on the quadratic term followed
by entrywise soft thresholding.

Two update operators are available. The textbook one (default) takes a
gradient step of size ``mu`` and thresholds at ``lam*mu``. The alternative
(``standard_ista=False``) scales the gradient step by ``lam*mu`` as well,
which leaves the threshold-to-step ratio at 1: it minimises the objective
with unit penalty and ``lam`` acts only as a step multiplier.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from ddl.exceptions import ShapeError, StepSizeError
from ddl.linalg import frobenius_norm

AUTO_STEP_FRACTION = 0.99


@dataclass(frozen=True)
class SparseCodingConfig:
    lam: float = 0.2
    mu: float | None = None
    inner_iters: int = 30
    mu_auto: bool = True
    standard_ista: bool = True
    early_stop_tol: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if not self.mu_auto and (self.mu is None or self.mu <= 0):
            raise ValueError("an explicit positive mu is required when mu_auto is off")
        if self.early_stop_tol < 0:
            raise ValueError("early_stop_tol must be >= 0")


def soft_threshold(x, tau: float):
    """``sign(x) * max(|x| - tau, 0)``, entrywise for arrays."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    if np.isscalar(x):
        return float(np.sign(x) * max(abs(x) - tau, 0.0))
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def _check_shapes(Y, D, X) -> None:
    if Y.ndim != 2 or D.ndim != 2 or X.ndim != 2:
        raise ShapeError("Y, D and X must all be 2-D")
    p, q = Y.shape
    if D.shape[0] != p or X.shape != (D.shape[1], q):
        raise ShapeError(
            f"shapes do not conform: Y {Y.shape}, D {D.shape}, X {X.shape}"
        )


def objective_l1(Y, D, X, lam: float) -> float:
    """``1/2 ||Y - D X||_F^2 + lam * sum|X|``."""
    Y, D, X = (np.asarray(a, dtype=np.float64) for a in (Y, D, X))
    _check_shapes(Y, D, X)
    r = Y - D @ X
    return 0.5 * float(np.sum(r * r)) + lam * float(np.sum(np.abs(X)))


def step_bound(D) -> float:
    """Upper end of the admissible gradient step interval, ``2/||D||_F^2``."""
    fro2 = frobenius_norm(D) ** 2
    if fro2 == 0.0:
        raise StepSizeError("dictionary is all-zero; no finite step bound")
    return 2.0 / fro2


def resolve_steps(D, cfg: SparseCodingConfig) -> tuple[float, float]:
    """Return ``(gradient_step, threshold)`` for one ISTA update on `D`."""
    bound = step_bound(D)
    if cfg.mu_auto:
        mu = AUTO_STEP_FRACTION * bound / 2.0
        if not cfg.standard_ista and cfg.lam > 1.0:
            # keep lam*mu inside the bound
            mu /= cfg.lam
    else:
        mu = float(cfg.mu)
        if not 0.0 < mu < bound:
            raise StepSizeError(f"mu={mu:g} outside (0, {bound:g}) for this dictionary")
    threshold = cfg.lam * mu
    if cfg.standard_ista:
        return mu, threshold
    if threshold >= bound:
        raise StepSizeError(
            f"lam*mu={threshold:g} outside (0, {bound:g}) for this dictionary"
        )
    return threshold, threshold


def effective_penalty(cfg: SparseCodingConfig) -> float:
    """L1 weight of the objective the configured operator actually descends."""
    if cfg.standard_ista:
        return cfg.lam
    return 1.0 if cfg.lam > 0 else 0.0


def ista_iteration(Y, D, X, cfg: SparseCodingConfig) -> np.ndarray:
    Y, D, X = (np.asarray(a, dtype=np.float64) for a in (Y, D, X))
    _check_shapes(Y, D, X)
    step, thr = resolve_steps(D, cfg)
    return soft_threshold(X + step * (D.T @ (Y - D @ X)), thr)


def ista_iterates(Y, D, cfg: SparseCodingConfig, X0=None) -> Iterator[np.ndarray]:
    """Yield successive ISTA iterates, starting with the initial point.

    At most ``cfg.inner_iters`` updates are produced; with a positive
    ``early_stop_tol`` the sequence ends once the relative change in the
    codes drops below it.
    """
    Y = np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    X = np.zeros((D.shape[1], Y.shape[1])) if X0 is None else np.array(X0, dtype=np.float64)
    _check_shapes(Y, D, X)
    step, thr = resolve_steps(D, cfg)
    # D is fixed for the whole loop
    DtY = D.T @ Y
    G = D.T @ D
    yield X
    for _ in range(cfg.inner_iters):
        X_new = soft_threshold(X + step * (DtY - G @ X), thr)
        yield X_new
        if cfg.early_stop_tol > 0:
            denom = max(frobenius_norm(X), np.finfo(float).tiny)
            if frobenius_norm(X_new - X) / denom < cfg.early_stop_tol:
                return
        X = X_new


def sparse_code(Y, D, cfg: SparseCodingConfig, X0=None) -> np.ndarray:
    """Run ``cfg.inner_iters`` ISTA updates from `X0` (zeros by default)."""
    X = None
    for X in ista_iterates(Y, D, cfg, X0):
        pass
    return X
