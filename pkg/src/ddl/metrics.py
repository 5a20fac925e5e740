"""Dictionary comparison and run diagnostics.

Dictionaries are only identifiable up to a signed permutation of their atoms,
so distances to ground truth first solve an assignment problem on absolute
atom correlations.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ddl.exceptions import ShapeError


@dataclass(frozen=True)
class AtomMatching:
    """Atom ``k`` of the first dictionary pairs with ``signs[k] * D2[:, permutation[k]]``."""

    permutation: np.ndarray
    signs: np.ndarray
    mean_abs_correlation: float

    def apply(self, D2) -> np.ndarray:
        """Reorder and re-sign `D2` so its columns line up with the first dictionary."""
        return np.asarray(D2)[:, self.permutation] * self.signs


def _same_shape(D1, D2):
    D1 = np.asarray(D1, dtype=np.float64)
    D2 = np.asarray(D2, dtype=np.float64)
    if D1.ndim != 2 or D1.shape != D2.shape:
        raise ShapeError(f"dictionary shapes differ: {D1.shape} vs {D2.shape}")
    return D1, D2


def match_atoms(D1, D2) -> AtomMatching:
    """Signed permutation maximising the summed absolute atom correlation."""
    D1, D2 = _same_shape(D1, D2)
    corr = D1.T @ D2
    rows, cols = linear_sum_assignment(np.abs(corr), maximize=True)
    perm = cols[np.argsort(rows)]
    matched = corr[np.arange(corr.shape[0]), perm]
    signs = np.where(matched < 0, -1.0, 1.0)
    return AtomMatching(perm, signs, float(np.mean(np.abs(matched))))


def dictionary_distance(D1, D2) -> float:
    """Mean L2 distance between matched atoms, after signed-permutation alignment."""
    D1, D2 = _same_shape(D1, D2)
    aligned = match_atoms(D1, D2).apply(D2)
    return float(np.mean(np.linalg.norm(D1 - aligned, axis=0)))


def reconstruction_mse(Y, D, X) -> float:
    """``||Y - D X||_F^2 / (p q)``."""
    Y, D, X = (np.asarray(a, dtype=np.float64) for a in (Y, D, X))
    if D.shape[0] != Y.shape[0] or X.shape != (D.shape[1], Y.shape[1]):
        raise ShapeError(f"shapes do not conform: Y {Y.shape}, D {D.shape}, X {X.shape}")
    r = Y - D @ X
    return float(np.sum(r * r)) / Y.size


def consensus_disagreement(dicts: Sequence[np.ndarray]) -> float:
    """Largest pairwise ``||D_n - D_m||_F / sqrt(K)``; no atom matching."""
    if len(dicts) < 2:
        return 0.0
    shape = np.shape(dicts[0])
    if any(np.shape(D) != shape for D in dicts):
        raise ShapeError("all dictionaries must share a shape")
    scale = float(np.sqrt(shape[1]))
    return max(
        float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale
        for a, b in combinations(dicts, 2)
    )


def matched_disagreement(dicts: Sequence[np.ndarray]) -> float:
    """Largest pairwise dictionary_distance (atoms matched per pair)."""
    if len(dicts) < 2:
        return 0.0
    return max(dictionary_distance(a, b) for a, b in combinations(dicts, 2))
