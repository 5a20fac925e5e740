"""Experiment configuration files (JSON).

A config has six sections; every key is optional and falls back to the
desk-scale defaults::

    {
      "seed": 0,
      "output_dir": "runs/ring4",
      "synthesis": {"patch_side": 4, "K": 32, "q_per_node": [256, 256, 256, 256],
                    "activation_prob": 0.1, "snr_db": 20.0, "sigma": null,
                    "mode": "dict_sparse"},
      "network":   {"adjacency": [[1, 3], [0, 2], [1, 3], [0, 2]],
                    "weights": "ring4_preset"},
      "learner":   {"outer_iters": 200, "stop_tol": 0.0, "record_every": 1,
                    "delayed_combine": false, "snapshot_every": 0},
      "sparse":    {"lambda": 0.2, "lambda_rule": "constant", "lambda_per_node": null,
                    "mu": null, "inner_iters": 30, "standard_ista": true,
                    "early_stop_tol": 0.0},
      "dict":      {"rule": "gradient", "eta": null, "eta_scale": 0.5,
                    "zero_tol": 1e-12, "dead_atom_policy": "reseed_from_data",
                    "ridge": null}
    }

``weights`` is a rule name (uniform, relative_degree_variance,
ring4_preset) or an explicit N x N matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ddl.datagen import SynthesisConfig
from ddl.dict_update import DictUpdateConfig
from ddl.diffusion import LearnerConfig
from ddl.exceptions import DDLError
from ddl.network import WEIGHT_RULES, CombinationMatrix, Topology, build_weights, validate_combination
from ddl.sparse_coding import SparseCodingConfig

LAMBDA_RULES = ("constant", "noise_scaled")
RING4_ADJACENCY = [[1, 3], [0, 2], [1, 3], [0, 2]]


class ConfigError(DDLError, ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass(frozen=True)
class NetworkConfig:
    adjacency: tuple[tuple[int, ...], ...] = tuple(tuple(r) for r in RING4_ADJACENCY)
    weights: str | tuple[tuple[float, ...], ...] = "ring4_preset"

    def topology(self) -> Topology:
        return Topology.from_adjacency(self.adjacency)


@dataclass(frozen=True)
class LambdaConfig:
    rule: str = "constant"
    per_node: tuple[float | None, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    lambdas: LambdaConfig = field(default_factory=LambdaConfig)
    snapshot_every: int = 0
    output_dir: str = "runs/default"
    seed: int = 0

    @property
    def n_nodes(self) -> int:
        return self.synthesis.n_nodes

    def node_lambdas(self) -> list[float]:
        base = self.learner.sparse.lam
        if self.lambdas.rule == "noise_scaled":
            lams = [base * s * s for s in self.synthesis.noise_std()]
        else:
            lams = [base] * self.n_nodes
        if self.lambdas.per_node is not None:
            lams = [lam if o is None else float(o) for lam, o in zip(lams, self.lambdas.per_node)]
        return lams

    def combination(self) -> tuple[Topology, CombinationMatrix]:
        topo = self.network.topology()
        w = self.network.weights
        if isinstance(w, str):
            sigma2 = self.synthesis.noise_std() ** 2
            return topo, build_weights(w, topo, sigma2)
        return topo, validate_combination(np.array(w, dtype=np.float64), topo)

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        s, lc, sc, dc = self.synthesis, self.learner, self.learner.sparse, self.learner.dictionary
        w = self.network.weights
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "synthesis": {
                "patch_side": s.patch_side,
                "K": s.K,
                "q_per_node": list(s.q_per_node),
                "activation_prob": s.activation_prob,
                "snr_db": s.snr_db,
                "sigma": None if s.sigma is None else list(s.sigma),
                "mode": s.mode,
            },
            "network": {
                "adjacency": [list(r) for r in self.network.adjacency],
                "weights": w if isinstance(w, str) else [list(r) for r in w],
            },
            "learner": {
                "outer_iters": lc.outer_iters,
                "stop_tol": lc.stop_tol,
                "record_every": lc.record_every,
                "delayed_combine": lc.delayed_combine,
                "snapshot_every": self.snapshot_every,
            },
            "sparse": {
                "lambda": sc.lam,
                "lambda_rule": self.lambdas.rule,
                "lambda_per_node": None if self.lambdas.per_node is None else list(self.lambdas.per_node),
                "mu": sc.mu,
                "inner_iters": sc.inner_iters,
                "standard_ista": sc.standard_ista,
                "early_stop_tol": sc.early_stop_tol,
            },
            "dict": {
                "rule": dc.rule,
                "eta": dc.eta,
                "eta_scale": dc.eta_scale,
                "zero_tol": dc.zero_tol,
                "dead_atom_policy": dc.dead_atom_policy,
                "ridge": dc.ridge,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        return _parse(raw)


_SECTIONS = {
    "seed", "output_dir", "synthesis", "network", "learner", "sparse", "dict",
}
_KEYS = {
    "synthesis": {"patch_side", "K", "q_per_node", "activation_prob", "snr_db", "sigma", "mode"},
    "network": {"adjacency", "weights"},
    "learner": {"outer_iters", "stop_tol", "record_every", "delayed_combine", "snapshot_every"},
    "sparse": {"lambda", "lambda_rule", "lambda_per_node", "mu", "inner_iters", "standard_ista", "early_stop_tol"},
    "dict": {"rule", "eta", "eta_scale", "zero_tol", "dead_atom_policy", "ridge"},
}


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object, got {type(sec).__name__}")
    unknown = sorted(set(sec) - _KEYS[name])
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    return sec


def _build(name: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _parse(raw: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a JSON object")
    unknown = sorted(set(raw) - _SECTIONS)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    d = ExperimentConfig()
    seed = raw.get("seed", d.seed)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: expected a nonnegative integer, got {seed!r}")

    syn = _section(raw, "synthesis")
    ds = d.synthesis
    synthesis = _build(
        "synthesis",
        SynthesisConfig,
        patch_side=syn.get("patch_side", ds.patch_side),
        K=syn.get("K", ds.K),
        q_per_node=tuple(syn.get("q_per_node", ds.q_per_node)),
        activation_prob=syn.get("activation_prob", ds.activation_prob),
        snr_db=syn.get("snr_db", ds.snr_db),
        sigma=None if syn.get("sigma") is None else tuple(syn["sigma"]),
        seed=seed,
        mode=syn.get("mode", ds.mode),
    )

    net = _section(raw, "network")
    adjacency = net.get("adjacency", RING4_ADJACENCY)
    weights = net.get("weights", d.network.weights)
    if not isinstance(adjacency, list) or not all(isinstance(r, list) for r in adjacency):
        raise ConfigError("network.adjacency: expected a list of neighbour lists")
    if isinstance(weights, str):
        if weights not in WEIGHT_RULES:
            raise ConfigError(f"network.weights: unknown rule {weights!r}; expected one of {WEIGHT_RULES}")
    elif isinstance(weights, list):
        weights = tuple(tuple(float(v) for v in row) for row in weights)
    else:
        raise ConfigError("network.weights: expected a rule name or a matrix")
    network = NetworkConfig(tuple(tuple(int(v) for v in r) for r in adjacency), weights)

    sp = _section(raw, "sparse")
    dsc = d.learner.sparse
    mu = sp.get("mu", dsc.mu)
    sparse = _build(
        "sparse",
        SparseCodingConfig,
        lam=sp.get("lambda", dsc.lam),
        mu=mu,
        inner_iters=sp.get("inner_iters", dsc.inner_iters),
        mu_auto=mu is None,
        standard_ista=sp.get("standard_ista", dsc.standard_ista),
        early_stop_tol=sp.get("early_stop_tol", dsc.early_stop_tol),
    )
    rule = sp.get("lambda_rule", "constant")
    if rule not in LAMBDA_RULES:
        raise ConfigError(f"sparse.lambda_rule: expected one of {LAMBDA_RULES}, got {rule!r}")
    per_node = sp.get("lambda_per_node")
    if per_node is not None:
        if not isinstance(per_node, list):
            raise ConfigError("sparse.lambda_per_node: expected a list")
        per_node = tuple(None if v is None else float(v) for v in per_node)

    dd = _section(raw, "dict")
    ddc = d.learner.dictionary
    dictionary = _build(
        "dict",
        DictUpdateConfig,
        eta=dd.get("eta", ddc.eta),
        eta_scale=dd.get("eta_scale", ddc.eta_scale),
        rule=dd.get("rule", ddc.rule),
        zero_tol=dd.get("zero_tol", ddc.zero_tol),
        dead_atom_policy=dd.get("dead_atom_policy", ddc.dead_atom_policy),
        ridge=dd.get("ridge", ddc.ridge),
    )

    le = _section(raw, "learner")
    dl = d.learner
    learner = _build(
        "learner",
        LearnerConfig,
        outer_iters=le.get("outer_iters", dl.outer_iters),
        sparse=sparse,
        dictionary=dictionary,
        stop_tol=float(le.get("stop_tol", dl.stop_tol)),
        record_every=le.get("record_every", dl.record_every),
        delayed_combine=bool(le.get("delayed_combine", dl.delayed_combine)),
    )
    snapshot_every = le.get("snapshot_every", 0)
    if not isinstance(snapshot_every, int) or snapshot_every < 0:
        raise ConfigError("learner.snapshot_every: expected a nonnegative integer")

    output_dir = raw.get("output_dir", d.output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir: expected a nonempty path string")

    cfg = ExperimentConfig(
        synthesis=synthesis,
        network=network,
        learner=learner,
        lambdas=LambdaConfig(rule, per_node),
        snapshot_every=snapshot_every,
        output_dir=output_dir,
        seed=seed,
    )
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ExperimentConfig) -> None:
    n_adj = len(cfg.network.adjacency)
    if n_adj != cfg.n_nodes:
        raise ConfigError(
            f"network.adjacency: {n_adj} nodes but synthesis.q_per_node has {cfg.n_nodes} entries"
        )
    try:
        cfg.network.topology()
    except ValueError as exc:
        raise ConfigError(f"network.adjacency: {exc}") from None
    if cfg.lambdas.per_node is not None and len(cfg.lambdas.per_node) != cfg.n_nodes:
        raise ConfigError(
            f"sparse.lambda_per_node: {len(cfg.lambdas.per_node)} entries for {cfg.n_nodes} nodes"
        )
    try:
        cfg.combination()
    except ValueError as exc:
        raise ConfigError(f"network.weights: {exc}") from None


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config; syntax errors carry line:column."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        line = _locate(text, str(exc).split(":", 1)[0])
        raise ConfigError(f"{path}:{line}: {exc}" if line else f"{path}: {exc}") from None


def _locate(text: str, where: str) -> int | None:
    """1-based line of the JSON key named by a ``section.key`` error prefix."""
    lines = text.splitlines()
    start = 0
    found = None
    for part in where.split("."):
        needle = f'"{part}"'
        for i in range(start, len(lines)):
            if needle in lines[i]:
                found, start = i + 1, i
                break
        else:
            return found
    return found
