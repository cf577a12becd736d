import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entanglib.ml import LayerSpec, NetworkModel, ShapeError, TrainConfig, TrainingError, backward, cnn_build, evaluate, fnn_build, forward, train
from entanglib.ml.network import Conv2D, MaxPool2D
from oracles import central_diff, rel_err


def test_fnn_parameter_count():
    net = fnn_build(36)
    assert net.n_params == 36 * 400 + 400 + 400 * 200 + 200 + 200 * 100 + 100 + 100 * 50 + 50 + 50 * 1 + 1 == 120_201
    assert fnn_build(2).layers[0].n_in == 2
    assert fnn_build(2).layers[0].n_out == 400
    with pytest.raises(ValueError):
        fnn_build(0)


def test_zero_weights_give_zero_output():
    net = fnn_build(5)
    assert np.all(forward(net, np.random.default_rng(0).standard_normal((7, 5))) == 0)


def test_identity_dense_reproduces_input():
    net = NetworkModel((1,), [LayerSpec("dense", size=1)], weights=[1.0, 0.0])
    x = np.array([[0.3], [-2.0]])
    np.testing.assert_array_equal(forward(net, x), [0.3, -2.0])


def test_tiny_model_hand_computed():
    # 2 -> 2 (relu) -> 1
    w1 = [[1.0, -1.0], [2.0, 0.5]]  # (in, out)
    b1 = [0.1, -0.2]
    w2 = [3.0, -2.0]
    b2 = [0.5]
    weights = np.concatenate([np.ravel(w1), b1, w2, b2])
    net = NetworkModel((2,), [LayerSpec("dense", size=2, activation="relu"), LayerSpec("dense", size=1)], weights)
    x = np.array([[1.0, 2.0]])
    # hidden: [1*1 + 2*2 + .1, -1 + 1 - .2] = [5.1, -0.2] -> relu [5.1, 0]
    assert forward(net, x)[0] == pytest.approx(3.0 * 5.1 + 0.5)


def test_single_neuron_gradient():
    net = NetworkModel((1,), [LayerSpec("dense", size=1)], weights=[0.7, 0.0])
    x, y = 2.0, 1.0
    loss, grad = backward(net, [[x]], [y])
    assert loss == pytest.approx((0.7 * x - y) ** 2)
    assert grad[0] == pytest.approx(2 * (0.7 * x - y) * x)


def test_perfect_fit_zero_gradient():
    net = fnn_build(3).init_weights(np.random.default_rng(1))
    x = np.random.default_rng(2).standard_normal((4, 3))
    loss, grad = backward(net, x, forward(net, x))
    assert loss == 0 and np.all(grad == 0)


def _fd_check(net, x, y):
    _, grad, gx = net.gradients(x, y)

    def loss_w(w):
        return net.gradients(x, y, w)[0]

    fd = central_diff(loss_w, net.weights)
    return rel_err(grad, fd)


@pytest.mark.parametrize("seed", range(20))
def test_dense_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    net = NetworkModel((4,), [LayerSpec("dense", size=6, activation="relu"), LayerSpec("dense", size=3, activation="relu"), LayerSpec("dense", size=1)])
    net.init_weights(rng)
    x, y = rng.standard_normal((5, 4)), rng.standard_normal(5)
    assert _fd_check(net, x, y) <= 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_conv_pool_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    stride = 1 if seed % 2 == 0 else 2
    specs = [
        LayerSpec("reshape", shape=(1, 6, 6)),
        LayerSpec("conv2d", size=3, kernel=2, stride=stride, activation="relu"),
        LayerSpec("maxpool2d", kernel=2, stride=1),
        LayerSpec("reshape"),
        LayerSpec("dense", size=1),
    ]
    net = NetworkModel((36,), specs).init_weights(rng)
    x, y = rng.standard_normal((3, 36)), rng.standard_normal(3)
    assert _fd_check(net, x, y) <= 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_input_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    net = NetworkModel((9,), [LayerSpec("reshape", shape=(1, 3, 3)), LayerSpec("conv2d", size=2, kernel=2, activation="relu"), LayerSpec("reshape"), LayerSpec("dense", size=4, activation="relu"), LayerSpec("dense", size=1)])
    net.init_weights(rng)
    x, y = rng.standard_normal((2, 9)), rng.standard_normal(2)
    _, _, gx = net.gradients(x, y)
    fd = central_diff(lambda v: net.gradients(v.reshape(2, 9), y)[0], x.ravel()).reshape(2, 9)
    assert rel_err(gx, fd) <= 1e-4


def test_cnn_d5_shapes():
    net = cnn_build(10, "d5")
    conv1, pool1, conv2, pool2, conv3 = net.layers[1:6]
    assert conv1.out_shape == (32, 9, 9)
    assert pool1.out_shape == (32, 8, 8)
    assert conv2.out_shape == (64, 7, 7)
    assert pool2.out_shape == (64, 6, 6)
    assert conv3.out_shape == (64, 5, 5)
    assert conv1.n_params == 32 * (2 * 2 * 1) + 32 == 160
    assert [layer.out_shape for layer in net.layers[-3:]] == [(64,), (32,), (1,)]


def test_cnn_d10_and_d8_shapes():
    net = cnn_build(20, "d10")
    assert [net.layers[i].out_shape[1] for i in range(1, 6)] == [18, 16, 14, 12, 10]
    # kernel arithmetic: a 3x3 kernel on the 16x16 d=8 grid gives 14
    net = cnn_build(16, "d8")
    assert [net.layers[i].out_shape[1] for i in range(1, 6)] == [14, 12, 10, 8, 6]


def test_cnn_incompatible_side():
    with pytest.raises(ShapeError):
        cnn_build(4, "d10")
    with pytest.raises(ValueError):
        cnn_build(10, "d7")


def test_cnn_forward_runs():
    net = cnn_build(10, "d5").init_weights(np.random.default_rng(0))
    out = forward(net, np.random.default_rng(1).random((3, 100)))
    assert out.shape == (3,)


@settings(max_examples=30, deadline=None)
@given(side=st.integers(3, 8), delta=st.integers(-3, 3).filter(lambda v: v != 0), kind=st.sampled_from(["dense", "cnn"]))
def test_shape_mismatch_rejected(side, delta, kind):
    if kind == "dense":
        net = fnn_build(side)
    else:
        net = NetworkModel((side * side,), [LayerSpec("reshape", shape=(1, side, side)), LayerSpec("conv2d", size=2, kernel=2), LayerSpec("reshape"), LayerSpec("dense", size=1)])
    n = (side if kind == "dense" else side * side) + delta
    if n < 1:
        return
    x = np.zeros((2, n))
    with pytest.raises(ShapeError):
        net.forward(x)
    with pytest.raises(ShapeError):
        backward(net, x, np.zeros(2))
    good = np.zeros((2, side if kind == "dense" else side * side))
    with pytest.raises(ShapeError):
        backward(net, good, np.zeros(3))


def test_layer_constructors_reject_bad_shapes():
    with pytest.raises(ShapeError):
        Conv2D((5,), LayerSpec("conv2d", size=2, kernel=2))
    with pytest.raises(ShapeError):
        MaxPool2D((1, 2, 2), LayerSpec("maxpool2d", kernel=3))
    with pytest.raises(ShapeError):
        NetworkModel((3,), [LayerSpec("dense", size=2)])  # does not end in one unit
    with pytest.raises(ValueError):
        NetworkModel((3,), [LayerSpec("lstm", size=1)])


def test_weight_count_is_sum_of_layers():
    net = cnn_build(10, "d5")
    assert net.n_params == sum(layer.n_params for layer in net.layers)
    with pytest.raises(ShapeError):
        NetworkModel(net.input_shape, net.specs, np.zeros(net.n_params - 1))


def test_train_constant_labels():
    rng = np.random.default_rng(0)
    x = rng.random((2000, 3))
    y = np.full(2000, 0.7)
    # zero hidden weights: only the output bias receives gradient
    net, hist = train(fnn_build(3), x, y, TrainConfig(seed=1, init="keep"))
    assert hist.train_mse[-1] <= 1e-6
    assert evaluate(net, x, y).mse <= 1e-6
    assert np.count_nonzero(net.weights) == 1 and net.weights[-1] == pytest.approx(0.7, abs=1e-3)


def test_train_linear_data():
    rng = np.random.default_rng(1)
    c = np.array([0.5, -1.0, 2.0])
    x = rng.uniform(-1, 1, (4000, 3))
    y = x @ c
    net, hist = train(fnn_build(3), x, y, TrainConfig(epochs=200, seed=2))
    assert hist.best_val_mse <= 1e-4
    assert len(hist.val_mse) <= 200


def test_train_is_deterministic():
    rng = np.random.default_rng(2)
    x, y = rng.random((150, 4)), rng.random(150)
    cfg = TrainConfig(epochs=5, seed=3)
    _, h1 = train(fnn_build(4), x, y, cfg)
    _, h2 = train(fnn_build(4), x, y, cfg)
    assert h1.train_mse == h2.train_mse and h1.val_mse == h2.val_mse


def test_train_nan_aborts():
    x = np.ones((10, 2))
    y = np.full(10, np.nan)
    with pytest.raises(TrainingError):
        train(fnn_build(2), x, y, TrainConfig(epochs=2))


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train(fnn_build(2), np.zeros((0, 2)), np.zeros(0), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=0.0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=0.6)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(init="xavier")


def test_evaluate_perfect_and_mean():
    y = np.random.default_rng(3).standard_normal(50)
    assert evaluate(lambda x: y, np.zeros((50, 1)), y).mse == 0
    m = evaluate(lambda x: np.full(50, y.mean()), np.zeros((50, 1)), y)
    assert m.mse == pytest.approx(y.var(), abs=1e-9)
    assert m.residuals.shape == (50,)
    with pytest.raises(ShapeError):
        evaluate(fnn_build(3), np.zeros((5, 2)), np.zeros(5))
