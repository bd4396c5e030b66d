import math

import mpmath
import numpy as np
import pytest

from iotdns.dataset import Split, SplitDataset
from iotdns.mlp import (ADAM_EPSILON, ADAM_LR, AdamState, EmptyTestSet, ModelConfig, Network,
                        ShapeMismatch, adam_step, backward, confusion_matrix, forward, loss,
                        macro_f1, metrics, softmax, train)

from oracles import (finite_difference_grads, gradcheck_instance, loss_loop, macro_f1_loop,
                     relative_error)


def make_split(X, y, C):
    return Split(np.asarray(X, float), np.asarray(y), [str(i) for i in range(len(y))],
                 [None] * len(y), C)


def toy_splits(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 4))
    y = (X[:, 0] > 0.5).astype(int)
    X[:, 0] = np.where(y, 0.8 + 0.2 * X[:, 0], 0.2 * X[:, 0])   # clear margin
    a, b = int(0.6 * n), int(0.8 * n)
    return SplitDataset(make_split(X[:a], y[:a], 2), make_split(X[a:b], y[a:b], 2),
                        make_split(X[b:], y[b:], 2))


def test_config_validation():
    assert ModelConfig(32, 30, 2).layer_sizes == [32, 64, 64, 30]
    for bad in [dict(input_dim=0, output_dim=3), dict(input_dim=4, output_dim=1),
                dict(input_dim=4, output_dim=3, hidden_layers=4)]:
        with pytest.raises(ValueError):
            ModelConfig(**bad)


def test_init_is_he_uniform():
    net = Network.init(ModelConfig(32, 10, 3, seed=1))
    for W, b in zip(net.weights, net.biases):
        assert np.abs(W).max() <= math.sqrt(6 / W.shape[0])
        assert not b.any()
    assert np.array_equal(Network.init(ModelConfig(32, 10, 3, seed=1)).weights[1], net.weights[1])


def test_softmax_examples():
    assert softmax(np.zeros((2, 4))).tolist() == [[0.25] * 4] * 2
    p = softmax(np.array([1000.0, 0.0]))
    assert p[0] == 1.0 and 0.0 <= p[1] < 1e-300
    rng = np.random.default_rng(0)
    rows = softmax(rng.normal(0, 30, (100, 7))).sum(axis=1)
    assert np.all(np.abs(rows - 1.0) <= 1e-9)


def test_forward_matches_high_precision():
    mpmath.mp.dps = 40
    rng = np.random.default_rng(5)
    for layers in (1, 2, 3):
        net = Network.init(ModelConfig(8, 5, layers), rng)
        for b in net.biases:
            b[:] = rng.normal(0, 0.1, b.shape)
        x = rng.uniform(0, 1, 8)
        a = [mpmath.mpf(float(v)) for v in x]
        for i, (W, b) in enumerate(zip(net.weights, net.biases)):
            z = [sum((a[j] * mpmath.mpf(float(W[j, k])) for j in range(W.shape[0])), mpmath.mpf(0))
                 + mpmath.mpf(float(b[k])) for k in range(W.shape[1])]
            a = z if i == len(net.weights) - 1 else [max(v, mpmath.mpf(0)) for v in z]
        e = [mpmath.exp(v) for v in a]
        ref = [float(v / sum(e)) for v in e]
        assert np.allclose(forward(net, x), ref, rtol=0, atol=1e-12)


def test_loss_examples():
    C = 7
    assert loss(np.full((3, C), 1 / C), np.eye(C)[[0, 3, 6]]) == pytest.approx(math.log(C), abs=1e-9)
    assert loss(np.eye(3), np.eye(3)) == 0.0
    # probability 0 on the true class hits the floor rather than inf
    assert loss([[0.0, 1.0]], [[1.0, 0.0]]) == pytest.approx(-math.log(1e-12))
    rng = np.random.default_rng(2)
    P = softmax(rng.normal(size=(20, 6)))
    Y = np.eye(6)[rng.integers(0, 6, 20)]
    assert loss(P, Y) == pytest.approx(loss_loop(P, Y), rel=1e-13)
    with pytest.raises(ShapeMismatch):
        loss(P, Y[:, :5])


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_gradients_match_finite_differences(layers):
    for seed in range(3):
        net, X, Y = gradcheck_instance(layers, seed + 100)
        for (aW, ab), (nW, nb) in zip(backward(net, X, Y), finite_difference_grads(net, X, Y)):
            assert relative_error(aW, nW) < 1e-4
            assert relative_error(ab, nb) < 1e-4


def test_backward_zero_input_zero_weights():
    net = Network([np.zeros((4, 6)), np.zeros((6, 3))], [np.zeros(6), np.zeros(3)])
    (dW0, db0), (dW1, db1) = backward(net, np.zeros((2, 4)), np.eye(3)[[0, 1]])
    assert not dW0.any() and not db0.any() and not dW1.any()


def test_backward_mean_reduction():
    net, X, Y = gradcheck_instance(2, 7, batch=1)
    one = backward(net, X, Y)
    many = backward(net, np.repeat(X, 5, 0), np.repeat(Y, 5, 0))
    for (a, b), (c, d) in zip(one, many):
        assert np.allclose(a, c, rtol=1e-12, atol=1e-15) and np.allclose(b, d, rtol=1e-12, atol=1e-15)


def test_backward_shape_errors():
    net, X, Y = gradcheck_instance(1, 0)
    with pytest.raises(ShapeMismatch):
        backward(net, X[:, :7], Y)
    with pytest.raises(ShapeMismatch):
        backward(net, X, Y[:3])


def test_adam_first_step_is_sign():
    net = Network([np.zeros((2, 2))], [np.zeros(2)])
    g = np.array([[0.5, -2.0], [1e-3, -1e-3]])
    state = AdamState.for_network(net)
    adam_step(state, net, [(g, np.zeros(2))])
    expected = -ADAM_LR * g / (np.abs(g) + ADAM_EPSILON)
    assert np.allclose(net.weights[0], expected, rtol=1e-12, atol=0)
    assert np.allclose(net.weights[0], -ADAM_LR * np.sign(g), rtol=1e-3)
    assert not net.biases[0].any() and state.timestep == 1


def test_adam_zero_gradient_advances_time():
    net = Network([np.ones((2, 2))], [np.ones(2)])
    state = AdamState.for_network(net)
    adam_step(state, net, [(np.zeros((2, 2)), np.zeros(2))])
    assert net.weights[0].tolist() == [[1.0, 1.0], [1.0, 1.0]] and state.timestep == 1


def test_adam_two_steps_hand_recurrence():
    g, w = 0.3, 1.0
    b1, b2, lr, eps = 0.9, 0.999, 0.001, 1e-7
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    net = Network([np.array([[1.0]])], [np.array([0.0])])
    state = AdamState.for_network(net)
    for _ in range(2):
        adam_step(state, net, [(np.array([[g]]), np.array([0.0]))])
    assert net.weights[0][0, 0] == pytest.approx(w, rel=1e-14)


def test_train_separable():
    splits = toy_splits()
    net, rep = train(ModelConfig(4, 2, 1, seed=3), splits)
    assert rep.val_accuracy[rep.best_epoch - 1] == 1.0
    assert rep.stopped_early and rep.epochs_run < 100
    assert rep.epochs_run == rep.best_epoch + 5
    assert metrics(net, splits.val).accuracy == 1.0


def test_train_deterministic():
    splits = toy_splits(seed=1)
    cfg = ModelConfig(4, 2, 2, seed=9)
    (n1, r1), (n2, r2) = train(cfg, splits), train(cfg, splits)
    assert r1 == r2
    for a, b in zip(n1.params(), n2.params()):
        assert np.array_equal(a, b)
    _, r3 = train(ModelConfig(4, 2, 2, seed=10), splits)
    assert r3.train_loss != r1.train_loss


def test_train_restores_best_weights():
    splits = toy_splits(seed=2)
    net, rep = train(ModelConfig(4, 2, 2, seed=0), splits, max_epochs=30)
    acc = float(np.mean(net.predict(splits.val.X) == splits.val.y))
    assert acc == max(rep.val_accuracy)


def test_train_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        train(ModelConfig(5, 2, 1), toy_splits())


def test_metrics_examples():
    y = np.array([0, 0, 1, 1, 2, 2])
    cm = confusion_matrix(y, y, 3)
    assert np.array_equal(cm, np.diag([2, 2, 2])) and macro_f1(cm) == 1.0
    cm = confusion_matrix(np.zeros(6, int), y, 3)
    assert cm[0].tolist() == [2, 2, 2]
    assert macro_f1(cm) == pytest.approx(1 / 6, abs=1e-15)
    # [pred, actual] orientation
    assert confusion_matrix([1], [0], 2).tolist() == [[0, 0], [1, 0]]


def test_macro_f1_matches_loop():
    rng = np.random.default_rng(11)
    for _ in range(100):
        C = int(rng.integers(2, 31))
        cm = rng.integers(0, 20, (C, C)) * (rng.uniform(size=(C, C)) < 0.6)
        assert macro_f1(cm) == macro_f1_loop(cm.tolist())


def test_metrics_empty():
    net = Network.init(ModelConfig(4, 2, 1))
    with pytest.raises(EmptyTestSet):
        metrics(net, make_split(np.zeros((0, 4)), np.zeros(0, int), 2))
