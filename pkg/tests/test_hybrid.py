import numpy as np
import pytest

from entanglib.measurements import MeasurementParams, check_correlation_array, params_correlations
from entanglib.ml import HybridModel, LayerSpec, NetworkModel, TrainConfig, TrainingError, evaluate, hybrid_loss_and_grad, hybrid_train
from entanglib.ml.hybrid import correlation_features
from entanglib.qcore import DensityMatrix
from entanglib.states import SamplerConfig, rng_stream, sample_ginibre
from oracles import central_diff, rel_err


def small_net(n_in, rng):
    specs = [LayerSpec("dense", size=8, activation="relu"), LayerSpec("dense", size=1)]
    return NetworkModel((n_in,), specs).init_weights(rng)


def small_cnn(side, rng):
    specs = [
        LayerSpec("reshape", shape=(1, side, side)),
        LayerSpec("conv2d", size=3, kernel=2, activation="relu"),
        LayerSpec("maxpool2d", kernel=2),
        LayerSpec("reshape"),
        LayerSpec("dense", size=1),
    ]
    return NetworkModel((side * side,), specs).init_weights(rng)


def states(seed, n, d=3):
    rng = rng_stream(seed)
    return np.array([sample_ginibre(SamplerConfig(dim=d, ensemble="ginibre-rank-k"), rng).matrix for _ in range(n)])


def _joint_fd(model, rhos, y):
    n_w = model.network.n_params
    shape = model.params.theta.shape

    def loss(v):
        net = model.network.copy()
        net.weights = v[:n_w]
        p = MeasurementParams(v[n_w:].reshape(shape), model.params.n_settings, model.params.dim, model.params.tied)
        return HybridModel(p, net, model.layout).network.gradients(correlation_features(params_correlations(rhos, p), model.layout), y)[0]

    return central_diff(loss, np.concatenate([model.network.weights, model.params.theta.ravel()]))


@pytest.mark.parametrize("seed", range(20))
def test_joint_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    d = 2 if seed % 3 == 0 else 3
    n = 2 if seed % 2 == 0 else 1
    layout = "grid" if seed % 4 == 1 and n * d >= 3 else "flat"
    tied = seed % 5 == 2
    rhos = states(seed, 5, d)
    y = rng.random(5)
    params = MeasurementParams(rng.standard_normal((n if tied else 2 * n, d * d)), n, d, tied)
    net = small_cnn(n * d, rng) if layout == "grid" else small_net(n * n * d * d, rng)
    model = HybridModel(params, net, layout)
    _, g_w, g_t = hybrid_loss_and_grad(model, rhos, y)
    assert rel_err(np.concatenate([g_w, g_t.ravel()]), _joint_fd(model, rhos, y)) <= 1e-4


def test_maximally_mixed_states_freeze_theta():
    rhos = [DensityMatrix.maximally_mixed(3)] * 64
    y = np.random.default_rng(0).random(64)
    cfg = TrainConfig(epochs=400, seed=1, batch_size=32, patience=400, lr=1e-2)
    rng = np.random.default_rng(1)
    state, hist = hybrid_train(rhos, y, 2, 3, cfg, network=small_net(36, rng))
    assert np.array_equal(state.model.params.theta, np.zeros((4, 9)))
    pred = state.model.predict(np.array([r.matrix for r in rhos]))
    # the network sees one constant input; the best it can do is the mean of its training labels
    assert np.ptp(pred) == 0
    assert abs(pred[0] - y.mean()) < 0.05


def test_hybrid_learns_and_checks_invariants():
    rhos = states(3, 200)
    from entanglib.measures import coherent_information

    y = np.array([coherent_information(DensityMatrix(r, 3, 3, validate=False)) for r in rhos])
    cfg = TrainConfig(epochs=20, seed=2, batch_size=32)
    state, hist = hybrid_train(rhos, y, 2, 3, cfg, network=small_net(36, np.random.default_rng(2)))
    assert len(hist.val_mse) == 20
    assert hist.best_val_mse <= hist.val_mse[0]
    assert not np.array_equal(state.model.params.theta, 0)
    check_correlation_array(params_correlations(rhos, state.model.params), 1e-9)
    m = evaluate(state.model, rhos, y)
    assert m.mse < np.var(y)


def test_hybrid_is_deterministic():
    rhos = states(4, 60)
    y = np.random.default_rng(4).random(60)
    cfg = TrainConfig(epochs=3, seed=5, batch_size=16)
    a = hybrid_train(rhos, y, 2, 3, cfg, network=small_net(36, np.random.default_rng(0)), init="cglmp")
    b = hybrid_train(rhos, y, 2, 3, cfg, network=small_net(36, np.random.default_rng(0)), init="cglmp")
    assert a[1].val_mse == b[1].val_mse
    assert np.array_equal(a[0].model.params.theta, b[0].model.params.theta)


def test_default_network_is_fnn():
    rhos = states(5, 10)
    state, _ = hybrid_train(rhos, np.zeros(10), 3, 3, TrainConfig(epochs=1))
    assert state.model.network.input_dim == 81
    assert state.model.params.theta.shape == (6, 9)


def test_hybrid_errors():
    rhos = states(6, 4)
    cfg = TrainConfig(epochs=1)
    with pytest.raises(ValueError):
        hybrid_train(rhos, [0.0, 1.0, np.nan, 0.0], 2, 3, cfg)
    with pytest.raises(ValueError):
        hybrid_train(rhos, np.zeros(4), 0, 3, cfg)
    with pytest.raises(ValueError):
        hybrid_train(rhos, np.zeros(3), 2, 3, cfg)
    with pytest.raises(ValueError):
        hybrid_train(rhos, np.zeros(4), 2, 3, cfg, init="random")
    with pytest.raises(ValueError):
        hybrid_train(rhos, np.zeros(4), 2, 3, cfg, network=small_net(5, np.random.default_rng(0)))
    with pytest.raises(TrainingError):
        with np.errstate(over="ignore"):
            hybrid_train(rhos, np.full(4, 1e200), 2, 3, cfg, network=small_net(36, np.random.default_rng(0)))
