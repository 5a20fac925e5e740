import json

import pytest

from ddl.config import ConfigError, ExperimentConfig, load_config


def write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=2))
    return path


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_custom_round_trip(tmp_path):
    raw = {
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
        "synthesis": {"patch_side": 3, "K": 10, "q_per_node": [20, 30, 40], "sigma": [0.1, 0.2, 0.0]},
        "network": {"adjacency": [[1], [0, 2], [1]], "weights": [[0.5, 0.25, 0], [0.5, 0.5, 0.5], [0, 0.25, 0.5]]},
        "learner": {"outer_iters": 5, "record_every": 2, "snapshot_every": 2},
        "sparse": {"lambda": 0.5, "lambda_rule": "noise_scaled", "lambda_per_node": [None, 0.3, None]},
        "dict": {"rule": "mod", "ridge": 1e-6},
    }
    cfg = load_config(write(tmp_path, raw))
    assert cfg.n_nodes == 3
    assert cfg.synthesis.seed == 3
    assert cfg.node_lambdas() == pytest.approx([0.5 * 0.01, 0.3, 0.0])
    text = cfg.to_json()
    assert ExperimentConfig.from_dict(json.loads(text)).to_json() == text
    topo, A = cfg.combination()
    assert A.weights[1, 0] == 0.5


def test_weight_rules(tmp_path):
    for rule in ("ring4_preset", "uniform", "relative_degree_variance"):
        cfg = ExperimentConfig.from_dict({"network": {"weights": rule}})
        assert cfg.combination()[1].n_nodes == 4


@pytest.mark.parametrize(
    "raw, fragment",
    [
        ({"synthesis": {"q_per_node": [10, 10, 10]}}, "network.adjacency"),
        ({"synthesis": {"K": 0}}, "synthesis"),
        ({"sparse": {"lambda": -1}}, "sparse"),
        ({"sparse": {"lambda_rule": "sqrt"}}, "sparse.lambda_rule"),
        ({"sparse": {"lambda_per_node": [0.1]}}, "sparse.lambda_per_node"),
        ({"dict": {"rule": "ksvd"}}, "dict"),
        ({"dict": {"step": 1}}, "dict.step: unknown key"),
        ({"extras": {}}, "extras: unknown section"),
        ({"network": {"weights": "metropolis"}}, "network.weights"),
        ({"network": {"weights": [[1, 0, 0, 0]] * 4}}, "network.weights"),
        ({"network": {"adjacency": [[7], [0], [3], [2]]}}, "network.adjacency"),
        ({"learner": {"outer_iters": -1}}, "learner"),
        ({"learner": {"snapshot_every": -2}}, "learner.snapshot_every"),
        ({"seed": -1}, "seed"),
        ({"seed": True}, "seed"),
        ({"output_dir": ""}, "output_dir"),
        ([1, 2], "top level"),
    ],
)
def test_invalid_configs(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        ExperimentConfig.from_dict(raw)


def test_json_syntax_error_has_line_and_column(tmp_path):
    path = write(tmp_path, '{\n  "seed": 1,\n  "synthesis": {"K": }\n}\n')
    with pytest.raises(ConfigError, match=r"cfg\.json:3:\d+:"):
        load_config(path)


def test_semantic_error_points_at_key_line(tmp_path):
    path = write(tmp_path, {"seed": 1, "dict": {"rule": "gradient", "bogus": 2}})
    with pytest.raises(ConfigError, match=r"cfg\.json:5: dict\.bogus: unknown key"):
        load_config(path)
