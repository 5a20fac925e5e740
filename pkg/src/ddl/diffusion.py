"""Adapt-Then-Combine diffusion for distributed dictionary learning.

Each outer iteration runs two phases:

1. every node sparse-codes its own data with its current dictionary and takes
   a local dictionary step, producing an intermediate estimate ``psi_n``;
2. after a barrier, every node replaces its dictionary with the weighted
   average ``sum_l a[l, n] psi_l`` over its neighbourhood and renormalises.

Phase 1 is independent per node and may run on a thread pool. Phase 2 only
reads the ``psi`` values frozen at the barrier, so results do not depend on
the number of workers.

The module also carries the scalar ATC-LMS recursion used to sanity-check the
diffusion machinery on a linear regression problem with a known answer.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ddl.datagen import derive_rng, node_seed
from ddl.dict_update import DictUpdateConfig, adapt_dictionary, finish_update
from ddl.exceptions import DivergenceError, ShapeError
from ddl.linalg import ZERO_TOL, column_norms, frobenius_norm
from ddl.metrics import consensus_disagreement, dictionary_distance, reconstruction_mse
from ddl.network import CombinationMatrix, Topology, validate_combination
from ddl.sparse_coding import SparseCodingConfig, objective_l1, sparse_code

log = logging.getLogger(__name__)

_INIT_STREAM = 10
_RESEED_STREAM = 11


@dataclass
class NodeState:
    """Everything one node owns between barriers.

    ``lam``, ``mu_X`` and ``mu_D`` override the learner-wide settings when
    set; ``None`` defers to the config (automatic steps by default).
    """

    node_id: int
    Y: np.ndarray
    seed: int = 0
    D: np.ndarray | None = None
    X: np.ndarray | None = None
    psi: np.ndarray | None = None
    lam: float | None = None
    mu_X: float | None = None
    mu_D: float | None = None

    def copy(self) -> "NodeState":
        def cp(a):
            return None if a is None else a.copy()

        return replace(self, Y=self.Y.copy(), D=cp(self.D), X=cp(self.X), psi=cp(self.psi))


@dataclass(frozen=True)
class LearnerConfig:
    outer_iters: int = 200
    sparse: SparseCodingConfig = field(default_factory=SparseCodingConfig)
    dictionary: DictUpdateConfig = field(default_factory=DictUpdateConfig)
    stop_tol: float = 0.0
    record_every: int = 1
    delayed_combine: bool = False
    threads: int = 1
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be >= 0")
        if self.threads < 0:
            raise ValueError("threads must be >= 0 (0 = auto)")

    @property
    def inner_iters(self) -> int:
        return self.sparse.inner_iters

    @property
    def update_rule(self) -> str:
        return self.dictionary.rule


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


@dataclass(frozen=True)
class TraceRow:
    iter: int
    node: int
    objective: float
    recon_mse: float
    consensus: float
    dict_dist_true: float

    FIELDS = ("iter", "node", "objective", "recon_mse", "consensus", "dict_dist_true")

    def csv_line(self) -> str:
        return (
            f"{self.iter},{self.node},{_fmt(self.objective)},{_fmt(self.recon_mse)},"
            f"{_fmt(self.consensus)},{_fmt(self.dict_dist_true)}"
        )


@dataclass
class IterationTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def iterations(self) -> list[int]:
        return sorted({r.iter for r in self.rows})

    def column(self, name: str, node: int | None = None) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if node is None or r.node == node])

    def at(self, iteration: int) -> list[TraceRow]:
        return [r for r in self.rows if r.iter == iteration]

    def csv_lines(self) -> list[str]:
        return [",".join(TraceRow.FIELDS)] + [r.csv_line() for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")

    @classmethod
    def read_csv(cls, path) -> "IterationTrace":
        import csv

        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != TraceRow.FIELDS:
                raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
            rows = [
                TraceRow(
                    int(rec["iter"]),
                    int(rec["node"]),
                    *(float(rec[k]) if rec[k] != "" else float("nan") for k in TraceRow.FIELDS[2:]),
                )
                for rec in reader
            ]
        return cls(rows)


def resolve_threads(threads: int, n_nodes: int) -> int:
    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, min(threads, n_nodes))


def threads_from_env(default: int = 0) -> int:
    """Worker cap from ``DDL_THREADS`` (0 means one worker per core)."""
    raw = os.environ.get("DDL_THREADS", "")
    if not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"DDL_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise ValueError("DDL_THREADS must be >= 0")
    return value


def make_nodes(
    Ys: Sequence[np.ndarray], seed: int = 0, lams: Sequence[float | None] | None = None
) -> list[NodeState]:
    """Wrap per-node data blocks; node n gets the child seed ``node_seed(seed, n)``."""
    lams = [None] * len(Ys) if lams is None else list(lams)
    if len(lams) != len(Ys):
        raise ValueError("need one lambda override (or None) per node")
    return [
        NodeState(node_id=n, Y=np.asarray(Y, dtype=np.float64), seed=node_seed(seed, n), lam=lam)
        for n, (Y, lam) in enumerate(zip(Ys, lams))
    ]


def init_dictionaries(
    nodes: Sequence[NodeState], K: int, rng: np.random.Generator | None = None
) -> list[NodeState]:
    """Start every node from K normalised columns of its own data.

    Columns are drawn without replacement when the node holds at least K
    nonzero observations, with replacement otherwise. Zero columns are never
    picked. Without an explicit `rng`, node n draws from a stream derived
    from its own seed, so the result does not depend on node order.
    """
    for node in nodes:
        Y = node.Y
        if Y.ndim != 2 or Y.shape[1] == 0:
            raise ValueError(f"node {node.node_id} holds no observations")
        norms = column_norms(Y)
        usable = np.flatnonzero(norms > ZERO_TOL)
        if usable.size == 0:
            raise ValueError(f"node {node.node_id}: every observation is zero")
        g = rng if rng is not None else derive_rng(node.seed, _INIT_STREAM)
        idx = g.choice(usable, size=K, replace=usable.size < K)
        node.D = Y[:, idx] / norms[idx]
        node.X = np.zeros((K, Y.shape[1]))
        node.psi = None
    return list(nodes)


def _sparse_cfg(node: NodeState, cfg: LearnerConfig) -> SparseCodingConfig:
    sc = cfg.sparse
    if node.lam is not None:
        sc = replace(sc, lam=node.lam)
    if node.mu_X is not None:
        sc = replace(sc, mu=node.mu_X, mu_auto=False)
    return sc


def _dict_cfg(node: NodeState, cfg: LearnerConfig) -> DictUpdateConfig:
    if node.mu_D is None:
        return cfg.dictionary
    return replace(cfg.dictionary, eta=node.mu_D)


def node_lambda(node: NodeState, cfg: LearnerConfig) -> float:
    return cfg.sparse.lam if node.lam is None else node.lam


def _adapt(node: NodeState, cfg: LearnerConfig) -> tuple[np.ndarray, np.ndarray]:
    X = sparse_code(node.Y, node.D, _sparse_cfg(node, cfg), X0=node.X)
    psi = adapt_dictionary(node.Y, node.D, X, _dict_cfg(node, cfg))
    return X, psi


def _check_nodes(nodes: Sequence[NodeState], A: CombinationMatrix) -> None:
    if A.n_nodes != len(nodes):
        raise ShapeError(f"{len(nodes)} nodes but a {A.n_nodes}x{A.n_nodes} combination matrix")
    shapes = {node.D.shape for node in nodes if node.D is not None}
    if len(shapes) != 1 or any(node.D is None for node in nodes):
        raise ShapeError("all nodes need initialised dictionaries of the same shape")
    p, K = shapes.pop()
    for node in nodes:
        if node.Y.shape[0] != p or node.X is None or node.X.shape != (K, node.Y.shape[1]):
            raise ShapeError(f"node {node.node_id} has inconsistent Y/D/X shapes")


def atc_iteration(
    nodes: Sequence[NodeState],
    A: CombinationMatrix,
    cfg: LearnerConfig,
    iteration: int = 0,
    executor: ThreadPoolExecutor | None = None,
) -> list[NodeState]:
    """One synchronous round: local sparse coding + adapt, barrier, combine."""
    _check_nodes(nodes, A)
    if executor is None:
        results = [_adapt(node, cfg) for node in nodes]
    else:
        results = list(executor.map(lambda nd: _adapt(nd, cfg), nodes))

    # barrier: all psi values are fixed from here on
    if cfg.delayed_combine:
        shared = [node.D if node.psi is None else node.psi for node in nodes]
    else:
        shared = [psi for _, psi in results]

    W = A.weights
    new_D = []
    for n, node in enumerate(nodes):
        acc = np.zeros_like(node.D)
        for l in np.flatnonzero(W[:, n]):
            acc += W[l, n] * shared[l]
        rng = derive_rng(node.seed, _RESEED_STREAM, iteration)
        new_D.append(finish_update(acc, node.Y, _dict_cfg(node, cfg), rng))

    for node, (X, psi), D in zip(nodes, results, new_D):
        node.X = X
        node.psi = psi
        node.D = D
    return list(nodes)


def _record(
    trace: IterationTrace,
    iteration: int,
    nodes: Sequence[NodeState],
    cfg: LearnerConfig,
    D_true: np.ndarray | None,
) -> list[TraceRow]:
    cons = consensus_disagreement([node.D for node in nodes])
    rows = []
    for node in nodes:
        rows.append(
            TraceRow(
                iter=iteration,
                node=node.node_id,
                objective=objective_l1(node.Y, node.D, node.X, node_lambda(node, cfg)),
                recon_mse=reconstruction_mse(node.Y, node.D, node.X),
                consensus=cons,
                dict_dist_true=float("nan") if D_true is None else dictionary_distance(D_true, node.D),
            )
        )
    trace.rows.extend(rows)
    return rows


RecordCallback = Callable[[int, Sequence[NodeState], list[TraceRow]], None]


def run_distributed(
    nodes: Sequence[NodeState],
    topo: Topology,
    A,
    cfg: LearnerConfig,
    D_true=None,
    on_record: RecordCallback | None = None,
) -> tuple[list[NodeState], IterationTrace]:
    """Iterate atc_iteration until ``outer_iters`` or the stopping tolerance.

    Trace rows describe the state after each recorded iteration: the current
    dictionaries together with the codes computed during that iteration
    (zeros for the initial row). The initial row and the final iteration are
    always recorded.
    """
    nodes = list(nodes)
    if not isinstance(A, CombinationMatrix):
        A = validate_combination(A, topo)
    elif A.n_nodes != topo.n_nodes:
        raise ShapeError("topology and combination matrix disagree on node count")
    validate_combination(A.weights, topo)
    _check_nodes(nodes, A)
    D_true = None if D_true is None else np.asarray(D_true, dtype=np.float64)

    trace = IterationTrace()
    rows = _record(trace, 0, nodes, cfg, D_true)
    initial = [r.objective for r in rows]
    if on_record:
        on_record(0, nodes, rows)
    if cfg.outer_iters == 0:
        return nodes, trace

    workers = resolve_threads(cfg.threads, len(nodes))
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(1, cfg.outer_iters + 1):
            previous = [node.D for node in nodes]
            atc_iteration(nodes, A, cfg, iteration=it, executor=executor)
            change = max(
                frobenius_norm(node.D - D0) / max(frobenius_norm(D0), np.finfo(float).tiny)
                for node, D0 in zip(nodes, previous)
            )
            done = it == cfg.outer_iters or change < cfg.stop_tol
            if it % cfg.record_every == 0 or done:
                rows = _record(trace, it, nodes, cfg, D_true)
                _check_divergence(rows, initial, cfg.divergence_factor)
                if on_record:
                    on_record(it, nodes, rows)
            if done:
                if change < cfg.stop_tol:
                    log.info("stopped at iteration %d (relative change %.3g)", it, change)
                break
    finally:
        if executor is not None:
            executor.shutdown()
    return nodes, trace


def _check_divergence(rows: Sequence[TraceRow], initial: Sequence[float], factor: float) -> None:
    for row, obj0 in zip(rows, initial):
        if not np.isfinite(row.objective) or (obj0 > 0 and row.objective > factor * obj0):
            raise DivergenceError(
                f"node {row.node} objective {row.objective:.3g} at iteration {row.iter} "
                f"exceeds {factor:g} x initial {obj0:.3g}"
            )


def run_centralized(
    Y_all,
    K: int,
    cfg: LearnerConfig,
    seed: int = 0,
    D_true=None,
    D0=None,
    on_record: RecordCallback | None = None,
) -> tuple[np.ndarray, np.ndarray, IterationTrace]:
    """Plain block coordinate descent on all data: one node, ``A = [1]``."""
    (node,) = make_nodes([Y_all], seed=seed)
    if D0 is None:
        init_dictionaries([node], K)
    else:
        node.D = np.array(D0, dtype=np.float64)
        node.X = np.zeros((K, node.Y.shape[1]))
    nodes, trace = run_distributed(
        [node], Topology.complete(1), np.ones((1, 1)), cfg, D_true=D_true, on_record=on_record
    )
    return nodes[0].D, nodes[0].X, trace


# scalar ATC-LMS ---------------------------------------------------------------


def lms_data(
    w_o, n_steps: int, n_nodes: int, noise_std, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian regressors and noisy scalar observations ``y = w_o^T x + z``.

    Returns regressors of shape (T, N, M) and observations of shape (T, N).
    `noise_std` may be a scalar or one value per node.
    """
    w_o = np.asarray(w_o, dtype=np.float64)
    noise = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), (n_nodes,))
    x = rng.standard_normal((n_steps, n_nodes, w_o.size))
    y = x @ w_o + noise * rng.standard_normal((n_steps, n_nodes))
    return x, y


def run_scalar_atc(
    regressors,
    observations,
    w0,
    mu,
    A,
    ceiling: float = 1e8,
) -> np.ndarray:
    """Diffusion LMS without data sharing.

    ``psi_n = w_n + mu_n x_n (y_n - w_n^T x_n)`` then
    ``w_n = sum_l a[l, n] psi_l``. Returns the estimates at every time step,
    shape (T + 1, N, M), the first slice being the initial estimates.
    """
    x = np.asarray(regressors, dtype=np.float64)
    y = np.asarray(observations, dtype=np.float64)
    T, N, M = x.shape
    if y.shape != (T, N):
        raise ShapeError(f"observations must have shape {(T, N)}, got {y.shape}")
    W = A.weights if isinstance(A, CombinationMatrix) else np.asarray(A, dtype=np.float64)
    if W.shape != (N, N):
        raise ShapeError(f"combination matrix must be {N}x{N}")
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (N,))[:, None]

    w = np.broadcast_to(np.asarray(w0, dtype=np.float64), (N, M)).copy()
    out = np.empty((T + 1, N, M))
    out[0] = w
    for t in range(T):
        err = y[t] - np.einsum("nm,nm->n", x[t], w)
        psi = w + mu * x[t] * err[:, None]
        w = W.T @ psi
        if not np.all(np.isfinite(w)) or np.abs(w).max() > ceiling:
            raise DivergenceError(f"LMS estimates exceeded {ceiling:g} at step {t + 1}; step too large")
        out[t + 1] = w
    return out
