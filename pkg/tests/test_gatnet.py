import time

import numpy as np
import pytest

import oracle
from flat import numkernel as nk
from flat.gatnet import attention_coeffs, build_nodes, forward_logits, gat_layer, predict
from flat.hypernet import GeneratedWeights, generate_weights
from flat.model import ModelConfig


def T(x):
    return nk.Tensor(np.asarray(x, dtype=np.float64))


def random_gw(rng, cfg=ModelConfig()):
    a, b, W = [], [], []
    for d_in, d in cfg.gat_layers():
        a.append(T(rng.normal(size=(cfg.heads, 2 * d))))
        b.append(T(rng.normal(size=(cfg.heads, d))))
        W.append(T(rng.normal(size=(cfg.heads, d, d_in)) / np.sqrt(d_in)))
    return GeneratedWeights(a, b, W, T(rng.normal(size=(cfg.n_classes, cfg.gat_out))))


def test_build_nodes_examples():
    nodes = build_nodes([1.0, -1.0], T(np.zeros((2, 15)))).data
    assert nodes.shape == (2, 16)
    np.testing.assert_array_equal(nodes[:, :15], 0.0)
    np.testing.assert_array_equal(nodes[:, 15], [1.0, -1.0])
    p = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(build_nodes([7.0, 8.0], T(p)).data, [[0, 1, 2, 7], [3, 4, 5, 8]])


def test_build_nodes_permutation_and_mismatch(rng):
    p, x = rng.normal(size=(4, 15)), rng.normal(size=4)
    perm = rng.permutation(4)
    np.testing.assert_array_equal(build_nodes(x[perm], T(p[perm])).data, build_nodes(x, T(p)).data[perm])
    with pytest.raises(ValueError):
        build_nodes(x[:3], T(p))


def test_attention_uniform_cases(rng):
    same = np.tile(rng.normal(size=(1, 4)), (5, 1))
    alpha = attention_coeffs(T(same), T(rng.normal(size=6)), T(rng.normal(size=(3, 4)))).data
    np.testing.assert_allclose(alpha, 1 / 5, atol=1e-15)
    alpha = attention_coeffs(T(rng.normal(size=(5, 4))), T(np.zeros(6)), T(rng.normal(size=(3, 4)))).data
    np.testing.assert_allclose(alpha, 1 / 5, atol=1e-15)


def test_attention_hand_toy():
    nodes = [[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]]
    a = [0.5, -1.0, 2.0, 0.3]
    W = [[1.0, 0.5], [-0.5, 2.0]]
    got = attention_coeffs(T(nodes), T(a), T(W)).data
    np.testing.assert_allclose(got, oracle.attention(nodes, a, W), atol=1e-14)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_gat_layer_single_node_is_affine(rng):
    h = rng.normal(size=(1, 4))
    a, b, W = rng.normal(size=(2, 6)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 4))
    out = gat_layer(T(h), T(a), T(b), T(W)).data
    expected = np.concatenate([W[k] @ h[0] + b[k] for k in range(2)])
    np.testing.assert_allclose(out[0], expected, atol=1e-14)


def test_gat_layer_identical_nodes(rng):
    h = np.tile(rng.normal(size=(1, 4)), (3, 1))
    a, b, W = rng.normal(size=(2, 6)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 4))
    out = gat_layer(T(h), T(a), T(b), T(W)).data
    np.testing.assert_allclose(out, np.tile(out[:1], (3, 1)), atol=1e-14)


def test_gat_layer_two_node_hand():
    nodes = [[1.0, -1.0], [0.5, 2.0]]
    a = [[1.0, 0.0, -1.0, 0.5]]
    b = [[0.1, -0.2]]
    W = [[[1.0, 2.0], [0.0, -1.0]]]
    out = gat_layer(T(nodes), T(a), T(b), T(W)).data
    alpha = oracle.attention(nodes, a[0], W[0])
    Wh = [np.array(W[0]) @ np.array(n) for n in nodes]
    for j in range(2):
        expected = alpha[j][0] * Wh[0] + alpha[j][1] * Wh[1] + np.array(b[0])
        np.testing.assert_allclose(out[j], expected, atol=1e-14)


def test_gat_layer_shape_check(rng):
    with pytest.raises(ValueError, match="inconsistent"):
        gat_layer(T(rng.normal(size=(3, 5))), T(np.ones((2, 6))), T(np.ones((2, 3))), T(np.ones((2, 3, 4))))


def test_no_activation_between_layers(rng):
    gw = random_gw(rng)
    p, x = rng.normal(size=(3, 15)), rng.normal(size=(2, 3))
    h = build_nodes(x, T(p))
    for l in range(2):
        h = gat_layer(h, gw.a[l], gw.b[l], gw.W[l])
    expected = h.data.mean(axis=1) @ gw.W_L.data.T
    np.testing.assert_allclose(forward_logits(x, T(p), gw).data, expected, atol=1e-13)


def test_predict_rows_sum_to_one(rng):
    for _ in range(10):
        c = int(rng.integers(2, 9))
        probs = predict(rng.normal(size=(7, c)), T(rng.normal(size=(c, 15))), random_gw(rng)).data
        assert probs.shape == (7, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_predict_column_permutation_invariant(rng):
    for _ in range(20):
        c = int(rng.integers(2, 10))
        gw = random_gw(rng)
        x, p = rng.normal(size=(5, c)), rng.normal(size=(c, 15))
        perm = rng.permutation(c)
        np.testing.assert_allclose(predict(x, T(p), gw).data, predict(x[:, perm], T(p[perm]), gw).data, atol=1e-9)


def test_row_independence(rng):
    gw = random_gw(rng)
    x, p = rng.normal(size=(4, 5)), T(rng.normal(size=(5, 15)))
    before = predict(x, p, gw).data
    x2 = x.copy()
    x2[2] = rng.normal(size=5) * 10
    after = predict(x2, p, gw).data
    for i in (0, 1, 3):
        assert before[i].tobytes() == after[i].tobytes()
    dup = predict(np.stack([x[0], x[0]]), p, gw).data
    assert dup[0].tobytes() == dup[1].tobytes()


def test_alpha_rows_sum_every_layer_head(rng):
    gw = random_gw(rng)
    alphas = []
    forward_logits(rng.normal(size=(3, 6)), T(rng.normal(size=(6, 15))), gw, alphas=alphas)
    assert len(alphas) == 2
    for alpha in alphas:
        assert alpha.shape == (3, 2, 6, 6)
        np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-9)


def test_predict_matches_oracle_toy(default_params, rng):
    cfg = ModelConfig()
    gw = generate_weights(rng.normal(size=64), default_params.leaves(False), cfg)
    p, x = rng.normal(size=(2, 15)), rng.normal(size=(1, 2))
    g = gw.numpy()
    A = [[list(h) for h in l] for l in g["a"]]
    B = [[list(h) for h in l] for l in g["b"]]
    W = [[[list(r) for r in h] for h in l] for l in g["W"]]
    probs, _ = oracle.gat_row(x[0], p, A, B, W, [list(r) for r in g["W_L"]])
    np.testing.assert_allclose(predict(x, T(p), gw).data[0], probs, atol=1e-12)


def test_quadratic_growth_in_columns(rng):
    gw = random_gw(rng)

    def timed(c):
        x, p = rng.normal(size=(15, c)), T(rng.normal(size=(c, 15)))
        predict(x, p, gw)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            predict(x, p, gw)
            best = min(best, time.perf_counter() - t0)
        return best

    t = {c: timed(c) for c in (10, 20, 40)}
    for c in (20, 40):
        assert t[c] / t[10] <= 3 * (c / 10) ** 2
