"""Synthetic sparse-patch datasets with a known generating dictionary.

Observations at node n follow ``Y_n = D_true X_n + Z_n``: codes are
Bernoulli(activation_prob) masks times Laplace(0, 1) amplitudes and the noise
is i.i.d. Gaussian with per-node standard deviation.

Every random stream is derived from the master seed plus fixed integer keys,
so the whole dataset is a pure function of the config and nodes can be
generated independently.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ddl.linalg import column_norms

MODES = ("dict_sparse", "pixel_sparse")

_DICT_STREAM = 0
_NODE_STREAM = 1


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def node_seed(master_seed: int, node_id: int) -> int:
    """Child seed for one node, a hash of ``(master_seed, node_id)``."""
    return int(np.random.SeedSequence([int(master_seed), int(node_id)]).generate_state(1)[0])


@dataclass(frozen=True)
class SynthesisConfig:
    patch_side: int = 4
    K: int = 32
    q_per_node: tuple[int, ...] = (256, 256, 256, 256)
    activation_prob: float = 0.1
    snr_db: float | None = 20.0
    sigma: tuple[float, ...] | None = None
    seed: int = 0
    mode: str = "dict_sparse"

    def __post_init__(self):
        object.__setattr__(self, "q_per_node", tuple(int(q) for q in self.q_per_node))
        if self.sigma is not None:
            object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        if self.patch_side < 1 or self.K < 1:
            raise ValueError("patch_side and K must be positive")
        if not self.q_per_node or any(q < 1 for q in self.q_per_node):
            raise ValueError("q_per_node needs at least one positive count")
        if not 0.0 <= self.activation_prob <= 1.0:
            raise ValueError("activation_prob must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sigma is not None:
            if len(self.sigma) != len(self.q_per_node):
                raise ValueError(
                    f"sigma has {len(self.sigma)} entries but there are "
                    f"{len(self.q_per_node)} nodes"
                )
            if any(s < 0 for s in self.sigma):
                raise ValueError("noise standard deviations must be >= 0")
        elif self.snr_db is None:
            raise ValueError("give either sigma or snr_db")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def p(self) -> int:
        return self.patch_side**2

    @property
    def n_nodes(self) -> int:
        return len(self.q_per_node)

    def signal_power(self) -> float:
        """Expected per-entry power of ``D_true x`` for unit-norm atoms."""
        return 2.0 * self.activation_prob * self.K / self.p

    def noise_std(self) -> np.ndarray:
        if self.sigma is not None:
            return np.array(self.sigma)
        var = self.signal_power() / 10.0 ** (self.snr_db / 10.0)
        return np.full(self.n_nodes, np.sqrt(var))


class NodeData(NamedTuple):
    Y: np.ndarray
    X_true: np.ndarray
    Z: np.ndarray


@dataclass
class SyntheticDataset:
    D_true: np.ndarray
    nodes: list[NodeData] = field(default_factory=list)

    @property
    def Y_all(self) -> np.ndarray:
        return np.hstack([nd.Y for nd in self.nodes])

    @property
    def node_Y(self) -> list[np.ndarray]:
        return [nd.Y for nd in self.nodes]


def sample_laplace(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draws with density ``exp(-|x|)/2`` via the inverse CDF."""
    # uniform on the open interval (0, 1): midpoints of a 2^53 grid
    u = (rng.integers(0, 2**53, size=n, dtype=np.int64) + 0.5) / 2.0**53
    c = u - 0.5
    return -np.sign(c) * np.log1p(-2.0 * np.abs(c))


def sparse_laplace(rng: np.random.Generator, shape: tuple[int, int], activation_prob: float) -> np.ndarray:
    mask = rng.random(shape) < activation_prob
    amp = sample_laplace(rng, shape[0] * shape[1]).reshape(shape)
    return mask * amp


def generate_true_dictionary(cfg: SynthesisConfig, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm ground-truth atoms.

    ``dict_sparse``: dense Gaussian atoms. ``pixel_sparse``: each atom is a
    sparse pixel pattern (Bernoulli mask times Laplace amplitudes); all-zero
    draws are redrawn.
    """
    p, K = cfg.p, cfg.K
    if cfg.mode == "dict_sparse":
        D = rng.standard_normal((p, K))
    else:
        D = sparse_laplace(rng, (p, K), cfg.activation_prob)
        for k in range(K):
            while not np.any(D[:, k]):
                D[:, k] = sparse_laplace(rng, (p, 1), cfg.activation_prob)[:, 0]
    norms = column_norms(D)
    return D / norms


def generate_observations(cfg: SynthesisConfig, D_true) -> list[NodeData]:
    """Per-node ``(Y_n, X_true_n, Z_n)``; node n draws from its own stream."""
    D_true = np.asarray(D_true, dtype=np.float64)
    sig = cfg.noise_std()
    out = []
    for n, q in enumerate(cfg.q_per_node):
        rng = derive_rng(cfg.seed, _NODE_STREAM, n)
        X = sparse_laplace(rng, (cfg.K, q), cfg.activation_prob)
        Z = sig[n] * rng.standard_normal((cfg.p, q))
        out.append(NodeData(D_true @ X + Z, X, Z))
    return out


def synthesize(cfg: SynthesisConfig) -> SyntheticDataset:
    D_true = generate_true_dictionary(cfg, derive_rng(cfg.seed, _DICT_STREAM))
    return SyntheticDataset(D_true, generate_observations(cfg, D_true))


def partition_columns(Y, counts: Sequence[int]) -> list[np.ndarray]:
    """Split `Y` into contiguous, disjoint column blocks of the given sizes."""
    Y = np.asarray(Y)
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts) or sum(counts) != Y.shape[1]:
        raise ValueError(f"counts {counts} do not sum to {Y.shape[1]} columns")
    edges = np.cumsum([0, *counts])
    return [Y[:, a:b] for a, b in zip(edges[:-1], edges[1:])]
