import numpy as np
import pytest
import scipy.sparse as sp

from netcate.graphdata import SparseGraph, generate_sbm_graph
from netcate.model import (ModelConfig, forward_heads, forward_representation, init_params,
                           load_checkpoint, predict, predict_ite, preset, propagator,
                           save_checkpoint)


def elu(v):
    return np.where(v > 0, v, np.exp(np.minimum(v, 0)) - 1)


def test_init_deterministic_and_shapes():
    cfg = ModelConfig(100, 3, seed=4)
    a, b = init_params(cfg), init_params(cfg)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert a["rep0.W"].shape == (100, 25)
    assert a["head2.out.W"].shape == (10, 1)
    for k, v in a.items():
        if k.endswith(".b"):
            assert not v.any()
        else:
            s = np.sqrt(6.0 / sum(v.shape))
            assert np.all(np.abs(v) <= s)


def test_preset_architectures():
    g, bg = preset("gcn-wass", 30, 4)
    assert g.rep_layers == (25, 25, 25) and g.head_layers == (10, 10)
    assert g.representation == "graph-conv" and bg.kind == "wasserstein"
    f, bf = preset("cfrnet-mmd", 30, 4)
    assert f.rep_layers == (25, 25) and f.head_layers == (25, 25)
    assert f.representation == "fully-connected" and bf.kind == "mmd"
    _, bt = preset("tarnet", 30, 4)
    assert bt.kind == "none" and bt.beta == 0
    with pytest.raises(KeyError, match="valid"):
        preset("gcn-foo", 30, 4)


def test_baselines_share_initialization():
    ps = [init_params(preset(m, 12, 3, seed=2)[0]) for m in ("tarnet", "cfrnet-wass", "cfrnet-mmd")]
    for p in ps[1:]:
        assert all(np.array_equal(p[k], ps[0][k]) for k in p)


def test_fc_equals_raw_gcn_on_edgeless_graph(rng):
    g = SparseGraph.from_pairs(6, [])
    x = sp.csr_matrix(rng.poisson(1.0, size=(6, 5)).astype(float))
    gc = ModelConfig(5, 2, "graph-conv", (4, 3), (2,), propagation="raw", seed=1)
    fc = ModelConfig(5, 2, "fully-connected", (4, 3), (2,), seed=1)
    params = init_params(gc)
    np.testing.assert_array_equal(forward_representation(params, gc, x, g),
                                  forward_representation(params, fc, x))


def test_zero_weights_give_zero_representation(rng):
    g = generate_sbm_graph(8, 1, 0.5, 0.5, seed=0)
    cfg = ModelConfig(4, 2, rep_layers=(3, 3), seed=0)
    params = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    x = sp.csr_matrix(rng.random((8, 4)))
    assert not forward_representation(params, cfg, x, g).any()


def test_two_node_path_hand_evaluation():
    g = SparseGraph.from_pairs(2, [(0, 1)])
    cfg = ModelConfig(2, 2, "graph-conv", (2,), (1,), propagation="raw")
    params = init_params(cfg)
    U = np.array([[1.0, -1.0], [0.5, 2.0]])
    params["rep0.W"] = U
    X = np.array([[1.0, 0.0], [2.0, 3.0]])
    # (A + I) = [[1, 1], [1, 1]]
    expect = elu(np.array([[1.0, 1.0], [1.0, 1.0]]) @ X @ U)
    got = forward_representation(params, cfg, sp.csr_matrix(X), g)
    np.testing.assert_allclose(got, expect, atol=1e-15)


def test_normalized_propagator():
    g = SparseGraph.from_pairs(3, [(0, 1), (1, 2)])
    a = (g.adjacency() + sp.identity(3)).toarray()
    d = np.diag(1 / np.sqrt(a.sum(1)))
    np.testing.assert_allclose(propagator(g).toarray(), d @ a @ d, atol=1e-15)
    np.testing.assert_array_equal(propagator(g, "raw").toarray(), a)


def test_heads_identical_columns(rng):
    cfg = ModelConfig(3, 3, rep_layers=(4,), head_layers=(5, 2), seed=1)
    params = init_params(cfg)
    for k in list(params):
        if k.startswith("head1."):
            params[k] = params["head0." + k.split(".", 1)[1]].copy()
    yhat = forward_heads(params, cfg, rng.normal(size=(7, 4)))
    np.testing.assert_array_equal(yhat[:, 0], yhat[:, 1])
    assert yhat.shape == (7, 3)


def test_heads_zero_input_zero_output():
    cfg = ModelConfig(3, 2, rep_layers=(4,), head_layers=(5,))
    assert not forward_heads(init_params(cfg), cfg, np.zeros((3, 4))).any()


def test_single_unit_hand_head():
    cfg = ModelConfig(1, 2, rep_layers=(2,), head_layers=(2,))
    params = init_params(cfg)
    params["head1.0.W"] = np.array([[1.0, -1.0], [2.0, 0.5]])
    params["head1.0.b"] = np.array([[0.1, -0.2]])
    params["head1.out.W"] = np.array([[3.0], [-1.0]])
    params["head1.out.b"] = np.array([[0.25]])
    phi = np.array([[0.5, -1.0]])
    h = elu(phi @ params["head1.0.W"] + params["head1.0.b"])
    expect = (h @ params["head1.out.W"] + params["head1.out.b"])[0, 0]
    assert forward_heads(params, cfg, phi)[0, 1] == pytest.approx(expect, abs=1e-15)


def test_predict_ite():
    yhat = np.array([[5.0, 15.0], [1.0, 2.0]])
    assert predict_ite(yhat, 1, 0)[0] == 10.0
    assert not predict_ite(yhat, 1, 1).any()
    np.testing.assert_array_equal(predict_ite(yhat, 0, 1), -predict_ite(yhat, 1, 0))
    with pytest.raises(IndexError):
        predict_ite(yhat, 2, 0)


def test_ite_additivity(rng):
    yhat = rng.normal(size=(10, 4))
    np.testing.assert_allclose(predict_ite(yhat, 0, 1) + predict_ite(yhat, 1, 3),
                               predict_ite(yhat, 0, 3), atol=1e-14)


def test_receptive_field_is_layer_depth(rng):
    n = 10
    g = SparseGraph.from_pairs(n, [(i, i + 1) for i in range(n - 1)])
    cfg = ModelConfig(3, 2, rep_layers=(4, 4, 4), propagation="raw", seed=0)
    params = init_params(cfg)
    x = rng.random((n, 3))
    base = forward_representation(params, cfg, sp.csr_matrix(x), g)
    x2 = x.copy()
    x2[4] += 5.0  # 4 hops from unit 0, 3 hops from unit 1
    moved = forward_representation(params, cfg, sp.csr_matrix(x2), g)
    np.testing.assert_array_equal(moved[0], base[0])
    assert not np.array_equal(moved[1], base[1])


def test_fc_mode_ignores_graph(rng):
    cfg, _ = preset("cfrnet-wass", 4, 3, seed=0)
    params = init_params(cfg)
    x = sp.csr_matrix(rng.random((12, 4)))
    g1 = generate_sbm_graph(12, 2, 0.5, 0.1, seed=1)
    g2 = generate_sbm_graph(12, 2, 0.5, 0.1, seed=2)
    np.testing.assert_array_equal(predict(params, cfg, x, g1), predict(params, cfg, x, g2))


def test_checkpoint_roundtrip(tmp_path):
    cfg = ModelConfig(6, 3, seed=5)
    params = init_params(cfg)
    save_checkpoint(tmp_path / "m.npz", params, cfg, model="gcn-wass", seed=5)
    back, cfg2, info = load_checkpoint(tmp_path / "m.npz")
    assert cfg2 == cfg
    assert info == {"model": "gcn-wass", "seed": 5}
    assert list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)


def test_shape_mismatch(rng):
    cfg = ModelConfig(4, 2, rep_layers=(3,))
    with pytest.raises(ValueError):
        forward_representation(init_params(cfg), cfg, sp.csr_matrix(np.ones((3, 5))),
                               SparseGraph.from_pairs(3, []))
    with pytest.raises(ValueError):
        forward_heads(init_params(cfg), cfg, np.ones((2, 7)))
