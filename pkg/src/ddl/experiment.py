"""Glue between an ExperimentConfig and the learners (no file IO here)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ddl.config import ExperimentConfig
from ddl.datagen import NodeData, SyntheticDataset, partition_columns, synthesize
from ddl.diffusion import (
    IterationTrace,
    RecordCallback,
    init_dictionaries,
    make_nodes,
    run_centralized,
    run_distributed,
)

MODES = ("distributed", "centralized")


@dataclass
class RunResult:
    mode: str
    dictionaries: list[np.ndarray]
    codes: list[np.ndarray]
    trace: IterationTrace

    @property
    def node_average(self) -> np.ndarray:
        return np.mean(self.dictionaries, axis=0)

    def final_rows(self):
        return self.trace.at(self.trace.iterations()[-1])


def dataset_from_matrix(cfg: ExperimentConfig, Y_all, D_true=None) -> SyntheticDataset:
    """Wrap a loaded data matrix, split across nodes per ``q_per_node``."""
    blocks = partition_columns(Y_all, cfg.synthesis.q_per_node)
    nodes = [NodeData(Y, None, None) for Y in blocks]
    return SyntheticDataset(None if D_true is None else np.asarray(D_true), nodes)


def train(
    cfg: ExperimentConfig,
    dataset: SyntheticDataset | None = None,
    mode: str = "distributed",
    threads: int | None = None,
    on_record: RecordCallback | None = None,
) -> RunResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if dataset is None:
        dataset = synthesize(cfg.synthesis)
    learner = cfg.learner if threads is None else replace(cfg.learner, threads=threads)
    K = cfg.synthesis.K
    lams = cfg.node_lambdas()

    if mode == "centralized":
        lam = float(np.mean(lams))
        learner = replace(learner, sparse=replace(learner.sparse, lam=lam))
        D, X, trace = run_centralized(
            dataset.Y_all, K, learner, seed=cfg.seed, D_true=dataset.D_true, on_record=on_record
        )
        return RunResult(mode, [D], [X], trace)

    topo, A = cfg.combination()
    nodes = make_nodes(dataset.node_Y, seed=cfg.seed, lams=lams)
    init_dictionaries(nodes, K)
    nodes, trace = run_distributed(nodes, topo, A, learner, D_true=dataset.D_true, on_record=on_record)
    return RunResult(mode, [n.D for n in nodes], [n.X for n in nodes], trace)
