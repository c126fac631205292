import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmp.geometry import OccupancyDataset
from pdmp.occupancy import (BLOCK, NetArch, OccupancyNet, TrainConfig, _sigmoid, init_net, train_net,
                            zero_net)


def fd_grad(net, X, h=1e-4):
    G = np.empty_like(X)
    for k in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[k] = h
        G[:, k] = (net.forward_batch(X + e) - net.forward_batch(X - e)) / (2 * h)
    return G


def test_init_shapes_and_determinism():
    net = init_net(NetArch(2, (64, 64)), seed=3)
    assert [W.shape for W, _ in net.weights] == [(64, 2), (64, 64), (1, 64)]
    assert [b.shape for _, b in net.weights] == [(64,), (64,), (1,)]
    again = init_net(NetArch(2, (64, 64)), seed=3)
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(net.weights, again.weights))


def test_arch_validation():
    with pytest.raises(ValueError):
        init_net(NetArch(2, ()), 0)
    with pytest.raises(ValueError):
        NetArch(2, (0, 4))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_weights_are_immutable():
    net = init_net(NetArch(2, (4,)), 0)
    with pytest.raises(ValueError):
        net.weights[0][0][0, 0] = 1.0


def test_zero_net_is_constant():
    net = zero_net(NetArch(3, (8, 8)))
    X = np.random.default_rng(0).normal(size=(50, 3)) * 10
    assert np.all(net.forward_batch(X) == 0.5)
    assert np.all(net.input_grad_batch(X) == 0.0)


def test_empty_batch_and_dimension_mismatch():
    net = init_net(NetArch(2, (4,)), 0)
    assert net.forward_batch(np.empty((0, 2))).shape == (0,)
    assert net.forward_batch([]).shape == (0,)
    with pytest.raises(ValueError):
        net.forward_batch(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        net.input_grad_batch(np.zeros(2))


def test_linear_layer_closed_form():
    w, b = np.array([1.5, -0.7]), 0.3
    net = OccupancyNet(NetArch(2, ()), [(w[None], [b])])
    X = np.random.default_rng(1).normal(size=(20, 2))
    s = _sigmoid(X @ w + b)
    np.testing.assert_allclose(net.forward_batch(X), s, rtol=0, atol=1e-15)
    np.testing.assert_allclose(net.input_grad_batch(X), (s * (1 - s))[:, None] * w, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = init_net(NetArch(2, (32, 32)), seed, lo=[-1, -2], hi=[3, 2])
    X = rng.uniform([-1, -2], [3, 2], size=(100, 2))
    g = net.input_grad_batch(X)
    err = np.max(np.abs(g - fd_grad(net, X)), axis=1) / np.maximum(np.max(np.abs(g), axis=1), 1e-8)
    assert err.max() < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_trained_gradient_matches_finite_differences(divider_net, seed):
    # the trained net bends sharply at obstacle edges; at h=1e-4 the central
    # difference's own O(h^2) truncation error is already about 1e-3 there
    X = np.random.default_rng(seed).uniform(0, 1, size=(100, 2))
    g = divider_net.input_grad_batch(X)
    err = np.max(np.abs(g - fd_grad(divider_net, X, h=1e-5)), axis=1) / np.maximum(np.max(np.abs(g), axis=1), 1e-8)
    assert err.max() < 1e-3


def test_batch_equals_single_point_bitwise():
    net = init_net(NetArch(2, (64, 64)), 7)
    X = np.random.default_rng(2).normal(size=(BLOCK + 37, 2))
    p, g = net.forward_batch(X), net.input_grad_batch(X)
    for i in (0, 5, BLOCK - 1, BLOCK, BLOCK + 36):
        assert net.forward_batch(X[i:i + 1])[0] == p[i]
        assert np.array_equal(net.input_grad_batch(X[i:i + 1])[0], g[i])
    # and independent of where the point sits inside the batch
    assert np.array_equal(net.forward_batch(X[::-1])[::-1], p)
    perm = np.random.default_rng(0).permutation(len(X))
    assert np.array_equal(net.input_grad_batch(X[perm]), g[perm])


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_output_strictly_inside_unit_interval(x, y):
    net = init_net(NetArch(2, (8,)), 0)
    big = OccupancyNet(net.arch, [(W * 1e3, b) for W, b in net.weights])
    p = big.forward_batch([[x, y]])[0]
    assert 0.0 < p < 1.0


def test_serialisation_roundtrip(tmp_path):
    net = init_net(NetArch(2, (5, 3)), 1, lo=[0, 0], hi=[2, 1])
    path = tmp_path / "m.json"
    net.save(path)
    back = OccupancyNet.load(path)
    X = np.random.default_rng(0).uniform(0, 2, size=(40, 2))
    assert np.array_equal(back.forward_batch(X), net.forward_batch(X))
    d = net.to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        OccupancyNet.from_dict(d)


def _blob_dataset():
    # one repeated occupied point among free points at distance
    rng = np.random.default_rng(0)
    free = rng.uniform(-1, 1, size=(400, 2))
    free = free[np.linalg.norm(free, axis=1) > 0.5]
    pts = np.vstack([np.zeros((40, 2)), free])
    return OccupancyDataset(pts, np.r_[np.ones(40), np.zeros(len(free))].astype(np.int8))


def test_loss_decreases_over_first_epochs():
    net = train_net(_blob_dataset(), NetArch(2, (16, 16)), TrainConfig(epochs=20, batch_size=32, seed=1),
                    lo=[-1, -1], hi=[1, 1])
    loss = np.array(net.train_loss)
    assert len(loss) == 20
    ma = np.convolve(loss, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(ma) < 0)
    assert loss[-1] < loss[0]


def test_training_is_bitwise_deterministic():
    ds = _blob_dataset()
    cfg = TrainConfig(epochs=5, batch_size=16, seed=4)
    a = train_net(ds, NetArch(2, (8, 8)), cfg)
    b = train_net(ds, NetArch(2, (8, 8)), cfg)
    for (Wa, ba), (Wb, bb) in zip(a.weights, b.weights):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)


def test_single_class_and_empty_rejected():
    pts = np.random.default_rng(0).uniform(size=(10, 2))
    with pytest.raises(ValueError):
        train_net(OccupancyDataset(pts, np.ones(10, dtype=np.int8)), NetArch(2, (4,)))
    with pytest.raises(ValueError):
        train_net(OccupancyDataset(np.empty((0, 2)), np.empty(0, dtype=np.int8)), NetArch(2, (4,)))


def test_imbalanced_data_still_learns_minority():
    # 5% positives: without reweighting a small net happily predicts all-free
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(2000, 2))
    labels = (pts[:, 0] > 0.95).astype(np.int8)
    net = train_net(OccupancyDataset(pts, labels), NetArch(2, (8,)), TrainConfig(epochs=60, seed=0), [0, 0], [1, 1])
    pos = net.forward_batch(pts[labels == 1]) > 0.5
    assert pos.mean() > 0.8


def test_divider_recipe_accuracy(divider_trained, divider_env):
    net, acc = divider_trained
    assert acc >= 0.95
    wall = [o for o in divider_env.obstacles if hasattr(o, "lo")][0]
    centre = 0.5 * (np.asarray(wall.lo) + np.asarray(wall.hi))
    assert net.forward_batch(centre[None])[0] > 0.9
