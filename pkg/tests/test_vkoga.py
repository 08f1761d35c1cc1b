import numpy as np
import pytest

from rbmlrom import kernels, oracles, vkoga
from rbmlrom.kernels import KernelConfig
from rbmlrom.optim import fd_gradient
from rbmlrom.vkoga import TwoLayerTrainConfig


def data(seed, n=40, d=2, b=2):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    Y = np.column_stack([np.sin(3 * X[:, 0]) + X[:, 1] ** 2, np.cos(X.sum(axis=1))])[:, :b]
    return X, Y


def test_three_point_interpolation():
    X = np.array([[0.0], [1.0], [2.0]])
    Y = np.array([0.0, 1.0, 0.0])
    kern = KernelConfig("gaussian", 1.0)
    model = vkoga.fit(X, Y, kern, max_centers=3)
    np.testing.assert_allclose(model.predict(X)[:, 0], Y, atol=1e-12)
    assert list(model.trace) == oracles.brute_force_greedy(X, Y, kern, 3)
    assert model.trace[0] == 1


def test_tie_breaking_lowest_index():
    X = np.array([[0.0], [5.0], [10.0]])
    model = vkoga.fit(X, np.ones(3), KernelConfig("gaussian", 1.0), max_centers=1)
    assert model.trace == (0,)


@pytest.mark.parametrize("seed", range(5))
def test_greedy_matches_brute_force(seed):
    X, Y = data(seed, n=25)
    kern = KernelConfig("quadratic_matern", 2.0)
    model = vkoga.fit(X, Y, kern, max_centers=25)
    assert list(model.trace) == oracles.brute_force_greedy(X, Y, kern, len(model.trace))
    assert np.abs(model.predict(model.centers) - Y[list(model.trace)]).max() <= 1e-8
    assert model.trace[0] == int(np.argmax(np.linalg.norm(Y, axis=1)))


def test_center_cap_and_distinct_centers():
    X, Y = data(0, n=60)
    model = vkoga.fit(X, Y, KernelConfig("gaussian", 2.0), max_centers=10)
    assert model.n_centers == 10
    assert len(np.unique(model.centers, axis=0)) == 10


def test_duplicate_points_stop_on_power_function():
    X = np.array([[0.0], [0.0], [1.0]])
    model = vkoga.fit(X, np.array([1.0, 2.0, 3.0]), KernelConfig("gaussian", 1.0), max_centers=3)
    assert model.n_centers == 2


def test_power_trace_non_increasing_pointwise():
    X, Y = data(3, n=30)
    kern = KernelConfig("gaussian", 2.0)
    model = vkoga.fit(X, Y, kern, max_centers=15)
    probe = np.random.default_rng(9).random((10, 2))
    prev = np.ones(10)
    for n in range(1, model.n_centers + 1):
        p = vkoga.power_function(kern, model.centers[:n], probe)
        assert np.all(p <= prev + 1e-12)
        prev = p


def test_empty_model_predicts_zero():
    m = vkoga.empty_model(KernelConfig(), 3, 2)
    np.testing.assert_array_equal(m.predict(np.ones((4, 3))), 0.0)


def test_batch_predict_equals_loop():
    X, Y = data(1)
    m = vkoga.fit(X, Y, KernelConfig("gaussian", 2.0), max_centers=20)
    Xt = np.random.default_rng(0).random((7, 2))
    np.testing.assert_allclose(m.predict(Xt), np.array([m.predict(x) for x in Xt]), rtol=1e-12)


def test_determinism_and_json_roundtrip():
    X, Y = data(2)
    kern = KernelConfig("quadratic_matern", 1.0, np.array([[1.2, 0.1], [0.0, 0.7]]))
    a = vkoga.fit(X, Y, kern, 15)
    b = vkoga.fit(X, Y, kern, 15)
    assert a.trace == b.trace and np.array_equal(a.coef, b.coef)
    back = vkoga.VkogaModel.from_dict(a.to_dict())
    np.testing.assert_array_equal(back.predict(X), a.predict(X))
    assert back.trace == a.trace


def test_loo_identity_matches_explicit_refits():
    X, Y = data(4, n=8)
    A = np.eye(2) * 1.5
    loss, _ = vkoga.loo_loss_and_grad(A, X, Y, "gaussian", reg=1e-8, with_grad=False)
    cfg = KernelConfig("gaussian", 1.0, A)
    errs = []
    for i in range(8):
        keep = np.arange(8) != i
        K = kernels.gram(cfg, X[keep], X[keep]) + 1e-8 * np.eye(7)
        pred = kernels.gram(cfg, X[i:i + 1], X[keep]) @ np.linalg.solve(K, Y[keep])
        errs.append(np.sum((Y[i] - pred[0]) ** 2))
    assert loss == pytest.approx(np.mean(errs), rel=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_loo_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.random((10, 3)), rng.normal(size=(10, 2))
    A = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    family = kernels.RBF_FAMILIES[seed % 2]
    _, g = vkoga.loo_loss_and_grad(A, X, Y, family, 1e-6)
    fd = fd_gradient(lambda a: vkoga.loo_loss_and_grad(a, X, Y, family, 1e-6, False)[0], A)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_zero_epochs_is_plain_fit():
    X, Y = data(5)
    base = KernelConfig("gaussian", 1.3)
    A = vkoga.optimize_two_layer(X, Y, base, TwoLayerTrainConfig(epochs=0))
    np.testing.assert_array_equal(A, 1.3 * np.eye(2))
    m2 = vkoga.two_layer_fit(X, Y, base, TwoLayerTrainConfig(epochs=0), max_centers=20)
    m1 = vkoga.fit(X, Y, base, max_centers=20)
    assert m1.trace == m2.trace
    # eps * ||x - z|| versus ||(eps I)(x - z)|| differ by rounding only
    np.testing.assert_allclose(m2.predict(X), m1.predict(X), rtol=1e-9, atol=1e-12)


def test_optimization_is_seed_deterministic():
    X, Y = data(6, n=70)
    base = KernelConfig("gaussian", 1.0)
    a = vkoga.optimize_two_layer(X, Y, base, seed=3)
    b = vkoga.optimize_two_layer(X, Y, base, seed=3)
    np.testing.assert_array_equal(a, b)


def test_anisotropic_target_improves():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (700, 6))
    Y = np.sin(4 * X[:, :1])
    Xtr, Ytr, Xte, Yte = X[:500], Y[:500], X[500:], Y[500:]
    base = KernelConfig("gaussian", 1.0)
    plain = vkoga.fit(Xtr, Ytr, base, max_centers=100)
    two = vkoga.two_layer_fit(Xtr, Ytr, base, max_centers=100, seed=0)
    rmse = lambda m: np.sqrt(np.mean((m.predict(Xte) - Yte) ** 2))
    assert rmse(two) <= rmse(plain)


@pytest.mark.parametrize("seed", range(3))
def test_isotropic_target_not_much_worse(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (400, 3))
    Y = 1.0 / (1.0 + np.sum(X**2, axis=1, keepdims=True))
    base = KernelConfig("gaussian", 1.0)
    plain = vkoga.fit(X[:300], Y[:300], base, max_centers=60)
    two = vkoga.two_layer_fit(X[:300], Y[:300], base, max_centers=60, seed=seed)
    rmse = lambda m: np.sqrt(np.mean((m.predict(X[300:]) - Y[300:]) ** 2))
    assert rmse(two) <= 2 * rmse(plain)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        vkoga.fit(np.zeros((0, 2)), np.zeros((0, 1)), KernelConfig())
    with pytest.raises(ValueError):
        TwoLayerTrainConfig(batch_size=1)
    m = vkoga.fit(np.eye(2), np.ones(2), KernelConfig())
    with pytest.raises(ValueError):
        m.predict(np.zeros(3))
