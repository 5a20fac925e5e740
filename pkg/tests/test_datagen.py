import numpy as np
import pytest

from ddl.datagen import (
    SynthesisConfig,
    derive_rng,
    generate_observations,
    generate_true_dictionary,
    node_seed,
    partition_columns,
    sample_laplace,
    synthesize,
)


def test_laplace_moments():
    x = sample_laplace(np.random.default_rng(3), 1_000_000)
    # Laplace(0, 1): mean 0, variance 2; SE of the mean is sqrt(2/n)
    assert abs(x.mean()) < 4 * np.sqrt(2 / x.size)
    assert x.var() == pytest.approx(2.0, rel=0.01)
    assert np.mean(np.abs(x)) == pytest.approx(1.0, rel=0.01)
    assert np.all(np.isfinite(x))


def test_noise_variance_within_two_percent():
    cfg = SynthesisConfig(q_per_node=(50_000, 50_000), sigma=(0.3, 1.5), seed=4)
    nodes = generate_observations(cfg, generate_true_dictionary(cfg, derive_rng(4, 0)))
    for node, s in zip(nodes, cfg.sigma):
        assert node.Z.size >= 100_000
        assert node.Z.var() == pytest.approx(s**2, rel=0.02)


def test_snr_within_five_percent():
    cfg = SynthesisConfig(q_per_node=(20_000,), snr_db=20.0, seed=1)
    ds = synthesize(cfg)
    node = ds.nodes[0]
    S = ds.D_true @ node.X_true
    snr = 10 * np.log10(np.sum(S * S) / np.sum(node.Z * node.Z))
    ratio = np.sum(S * S) / np.sum(node.Z * node.Z) / 100.0
    assert ratio == pytest.approx(1.0, rel=0.05), snr


def test_nonzeros_per_column_within_three_standard_errors():
    cfg = SynthesisConfig(q_per_node=(20_000,), sigma=(0.0,), seed=2)
    X = synthesize(cfg).nodes[0].X_true
    nnz = np.count_nonzero(X, axis=0)
    se = np.sqrt(cfg.K * cfg.activation_prob * (1 - cfg.activation_prob) / X.shape[1])
    assert abs(nnz.mean() - cfg.K * cfg.activation_prob) < 3 * se


def test_noise_free_and_pure_noise():
    ds = synthesize(SynthesisConfig(sigma=(0.0,) * 4))
    for node in ds.nodes:
        np.testing.assert_array_equal(node.Y, ds.D_true @ node.X_true)
    ds = synthesize(SynthesisConfig(activation_prob=0.0, sigma=(1.0,) * 4))
    for node in ds.nodes:
        np.testing.assert_array_equal(node.Y, node.Z)


@pytest.mark.parametrize("mode", ["dict_sparse", "pixel_sparse"])
def test_true_dictionary(mode):
    cfg = SynthesisConfig(mode=mode, seed=9)
    D = generate_true_dictionary(cfg, derive_rng(9, 0))
    np.testing.assert_allclose(np.linalg.norm(D, axis=0), 1.0)
    np.testing.assert_array_equal(D, generate_true_dictionary(cfg, derive_rng(9, 0)))
    dense = generate_true_dictionary(SynthesisConfig(mode="pixel_sparse", activation_prob=1.0), derive_rng(0, 0))
    assert np.all(dense != 0)


def test_synthesis_is_deterministic():
    cfg = SynthesisConfig(seed=7)
    a, b = synthesize(cfg), synthesize(cfg)
    np.testing.assert_array_equal(a.Y_all, b.Y_all)
    np.testing.assert_array_equal(a.D_true, b.D_true)
    c = synthesize(SynthesisConfig(seed=8))
    assert not np.array_equal(a.Y_all, c.Y_all)


def test_nodes_draw_from_independent_streams():
    # adding a node must not change earlier nodes' data
    two = synthesize(SynthesisConfig(q_per_node=(50, 60), seed=3))
    three = synthesize(SynthesisConfig(q_per_node=(50, 60, 70), seed=3))
    for n in range(2):
        np.testing.assert_array_equal(two.nodes[n].Y, three.nodes[n].Y)
    assert two.Y_all.shape == (16, 110)


def test_node_seed_and_derive_rng():
    assert node_seed(0, 1) == node_seed(0, 1)
    assert len({node_seed(0, n) for n in range(50)}) == 50
    assert derive_rng(1, 2).random() == derive_rng(1, 2).random()
    assert derive_rng(1, 2).random() != derive_rng(1, 3).random()


def test_partition_columns():
    Y = np.arange(24.0).reshape(2, 12)
    blocks = partition_columns(Y, [3, 3, 3, 3])
    assert [b.shape[1] for b in blocks] == [3, 3, 3, 3]
    np.testing.assert_array_equal(np.hstack(blocks), Y)
    np.testing.assert_array_equal(partition_columns(Y, [12])[0], Y)
    first, rest = partition_columns(Y, [1, 11])
    np.testing.assert_array_equal(first, Y[:, :1])
    with pytest.raises(ValueError):
        partition_columns(Y, [5, 5])


def test_config_validation():
    with pytest.raises(ValueError):
        SynthesisConfig(sigma=(0.1,))
    with pytest.raises(ValueError):
        SynthesisConfig(activation_prob=1.5)
    with pytest.raises(ValueError):
        SynthesisConfig(mode="patches")
    with pytest.raises(ValueError):
        SynthesisConfig(snr_db=None)
    assert SynthesisConfig().noise_std() == pytest.approx(np.full(4, 0.0632455532))
